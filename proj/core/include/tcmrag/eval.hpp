#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcmrag/llm.hpp"
#include "tcmrag/prompt.hpp"
#include "tcmrag/retrieve.hpp"
#include "tcmrag/task.hpp"

namespace tcmrag {

class IndexBundle;
class Segmenter;

/// none: no retrieval. naive_rag: overlap-window chunks, dense only.
/// hybrid_jieba: token chunks, dense + keyword pool with reranking.
enum class RagMode { kNone, kNaiveRag, kHybridJieba };

std::string_view to_string(RagMode mode);
RagMode parse_rag_mode(std::string_view name);
/// Row label used in reports: "No RAG", "Naive RAG", "Naive RAG + Jieba".
std::string_view row_label(RagMode mode);

struct RunConfig {
    RagMode mode = RagMode::kNone;
    bool cot = false;
    RetrievalConfig retrieval;  ///< mode is overridden by `mode`
    GenerationParams generation;
    std::size_t prompt_budget = kDefaultPromptBudget;
    int parallelism = 4;

    /// "hybrid_jieba+cot" style name.
    std::string name() const;
    std::string label() const;
    /// Retrieval settings with the mode implied by `mode`.
    RetrievalConfig effective_retrieval() const;
    /// Parses "none", "naive_rag+cot", ...
    static RunConfig parse(std::string_view name);
};

struct EvalDeps {
    const PromptTemplates* templates = nullptr;
    ChatProvider* chat = nullptr;
    const Segmenter* segmenter = nullptr;
    EmbeddingProvider* embedder = nullptr;
    Reranker* reranker = nullptr;
    const IndexBundle* naive_index = nullptr;   ///< overlap_window chunks
    const IndexBundle* hybrid_index = nullptr;  ///< token_chunk chunks
};

struct ItemResult {
    std::string item_id;
    double score = 0.0;
    bool parsed = false;
    std::string failure;  ///< why the item scored 0 without a parsed answer
    Answer answer;
    std::vector<std::string> retrieved;  ///< chunk ids in rank order
    std::string demonstration;           ///< case id, empty when none
    std::string variant;
    bool repaired = false;
    bool reranker_fallback = false;
    std::vector<std::string> warnings;
};

struct ScoreReport {
    std::string run;
    std::string label;
    std::string provider;
    RunConfig config;
    std::vector<ItemResult> items;  ///< sorted by item_id
    double aggregate = 0.0;         ///< 100 * mean item score
    std::size_t parse_failures = 0;
    std::size_t provider_errors = 0;
    std::size_t provider_fallbacks = 0;
    std::size_t warnings = 0;

    std::string to_json() const;
    std::string to_text() const;
    static ScoreReport from_json(std::string_view text);
};

/// |a ∩ b| / |a ∪ b|, 0 when both are empty.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

/// 0.5 * Jaccard(pathogenesis) + 0.5 * Jaccard(syndromes) against gold.
double score_item(const Answer& prediction, const TaskItem& item);

/// Validates dependencies (ConfigError before any provider call), then
/// evaluates every item. Items whose answer never parses score 0.
ScoreReport run_eval(std::span<const TaskItem> items, const RunConfig& config, const EvalDeps& deps);

struct ComparisonRow {
    std::string run;
    std::string label;
    double aggregate = 0.0;
    double delta = 0.0;  ///< against the first report given
};

struct Comparison {
    std::string baseline;
    std::vector<ComparisonRow> rows;  ///< aggregate descending

    std::string to_json() const;
    std::string to_text() const;
};

/// Throws Error for fewer than two reports or differing item sets.
Comparison compare_runs(std::span<const ScoreReport> reports);

}  // namespace tcmrag
