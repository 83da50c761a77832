#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcmrag/corpus.hpp"
#include "tcmrag/task.hpp"

namespace tcmrag {

enum class PromptVariant { kBase, kCot, kRag, kRagCot };

inline constexpr std::array<PromptVariant, 4> kPromptVariants = {PromptVariant::kBase, PromptVariant::kCot,
                                                                 PromptVariant::kRag, PromptVariant::kRagCot};

std::string_view to_string(PromptVariant v);
PromptVariant parse_variant(std::string_view name);
bool is_rag(PromptVariant v);
bool is_cot(PromptVariant v);
PromptVariant select_variant(bool rag, bool cot);

/// Structural markers the templates must carry. They are ASCII so tests
/// do not depend on the Chinese wording around them.
inline constexpr std::array<std::string_view, 3> kCotStepHeaders = {
    "[STEP 1] Extract clinical features",
    "[STEP 2] Infer pathogenesis",
    "[STEP 3] Determine syndromes",
};
inline constexpr std::string_view kOutputFormatMarker = "[OUTPUT FORMAT]";
inline constexpr std::string_view kCaseMarker = "[CASE]";

inline constexpr std::size_t kDefaultPromptBudget = 6000;

struct ContextBlock {
    std::string chunk_id;
    std::string text;

    bool operator==(const ContextBlock&) const = default;
};

/// A template split into literal text and placeholders at load time, so
/// substituted values are never rescanned.
class PromptTemplate {
public:
    static PromptTemplate parse(std::string_view text);

    struct Piece {
        bool placeholder = false;
        std::string text;  ///< literal text, or the placeholder name
    };

    std::string render(const std::map<std::string, std::string, std::less<>>& values) const;
    std::size_t count(std::string_view placeholder) const;
    const std::string& source() const noexcept { return source_; }

private:
    std::string source_;
    std::vector<Piece> pieces_;
};

/// System prompt plus one user template per variant, loaded from a
/// directory holding system.txt, base.txt, cot.txt, rag.txt, rag_cot.txt.
class PromptTemplates {
public:
    static PromptTemplates load(const std::filesystem::path& dir);
    /// Validates every template; throws ConfigError on unknown placeholders
    /// or missing structural markers.
    static PromptTemplates from_strings(std::string system_text, const std::map<PromptVariant, std::string>& user);

    const std::string& system_text() const noexcept { return system_; }
    const PromptTemplate& user(PromptVariant v) const { return user_.at(v); }

private:
    std::string system_;
    std::map<PromptVariant, PromptTemplate> user_;
};

struct PromptBundle {
    std::string system_text;
    std::string user_text;
    PromptVariant variant = PromptVariant::kBase;
    std::vector<ContextBlock> context_blocks;
    std::optional<std::string> demonstration;  ///< rendered demonstration case
    std::vector<std::string> notes;             ///< what truncation removed
};

/// Renders a case as a worked example, ending with its syndromes.
std::string render_demonstration(const ClinicalCase& c);

/// Lengths are counted in Unicode scalar values over system + user text.
/// Over budget, the demonstration is dropped first, then context blocks
/// from last to first; still over budget throws Error.
PromptBundle build_prompt(const PromptTemplates& templates, const TaskItem& item, PromptVariant variant,
                          std::span<const ContextBlock> context, const std::optional<ClinicalCase>& demonstration,
                          std::size_t budget = kDefaultPromptBudget);

/// Strict answer schema.
struct Answer {
    std::vector<std::string> clinical_features;
    std::vector<std::string> pathogenesis;
    std::vector<std::string> syndromes;
    std::string reasoning;

    bool operator==(const Answer&) const = default;
};

struct ParsedAnswer {
    Answer answer;
    std::vector<std::string> warnings;
};

/// Finds the first balanced top-level JSON value opening with `open`
/// ('{' or '[') that parses, ignoring surrounding prose and code fences.
std::optional<std::string> extract_json(std::string_view text, char open);

/// Throws AnswerError (kNoJson or kSchema). Selections outside the item's
/// options are dropped with a warning; lists are deduplicated.
ParsedAnswer parse_answer(std::string_view raw, const TaskItem& item);

/// Compact JSON with keys clinical_features, pathogenesis, syndromes, reasoning.
std::string serialize_answer(const Answer& answer);

}  // namespace tcmrag
