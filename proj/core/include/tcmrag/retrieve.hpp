#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcmrag/corpus.hpp"
#include "tcmrag/dense.hpp"
#include "tcmrag/sparse.hpp"

namespace tcmrag {

class Segmenter;
class IndexBundle;

enum class RetrievalMode { kDenseOnly, kSparseOnly, kHybrid };

std::string_view to_string(RetrievalMode mode);
/// Accepts "dense_only", "sparse_only" and "hybrid".
RetrievalMode parse_retrieval_mode(std::string_view name);

struct RetrievalConfig {
    std::size_t n_dense = 50;
    std::size_t n_sparse = 50;
    std::size_t top_k = 3;
    double alpha = 0.5;  ///< fusion weight on the dense score
    RetrievalMode mode = RetrievalMode::kHybrid;

    /// Throws ConfigError unless 1 <= top_k <= n_dense + n_sparse and alpha in [0, 1].
    void validate() const;
};

struct RetrievalCandidate {
    std::string chunk_id;
    double dense_score = 0.0;
    double sparse_score = 0.0;
    double rerank_score = 0.0;
    bool from_dense = false;
    bool from_sparse = false;

    bool operator==(const RetrievalCandidate&) const = default;
};

/// Second-stage relevance model: one score per document, same order.
class Reranker {
public:
    virtual ~Reranker() = default;

    virtual std::vector<double> score(std::string_view query, std::span<const std::string> documents) = 0;
    virtual std::string name() const = 0;
};

struct RetrievalResult {
    std::vector<RetrievalCandidate> candidates;
    std::vector<std::string> warnings;
    bool used_fallback = false;
};

struct RetrievalDeps {
    const Segmenter* segmenter = nullptr;
    EmbeddingProvider* embedder = nullptr;
    const IndexBundle* index = nullptr;
    Reranker* reranker = nullptr;  ///< null selects the fusion fallback
};

/// Union of the dense top-n_dense and sparse top-n_sparse lists, as the
/// mode allows. Every pooled candidate carries both scores. Sorted by
/// chunk id.
std::vector<RetrievalCandidate> first_stage(std::string_view query, const Segmenter& segmenter,
                                            EmbeddingProvider& embedder, const VectorIndex& dense,
                                            const KeywordIndex& sparse, const RetrievalConfig& cfg);

/// rerank_score = alpha * dense + (1 - alpha) * sparse.
void fuse_scores(std::span<RetrievalCandidate> candidates, double alpha);

/// Scores with the reranker when one is given (`texts` parallel to
/// `candidates`), otherwise with fusion. A failing reranker degrades to
/// fusion and records a warning. Sorted by rerank_score descending, then
/// chunk id ascending.
RetrievalResult rerank(std::string_view query, std::vector<RetrievalCandidate> candidates,
                       const RetrievalConfig& cfg, Reranker* reranker = nullptr,
                       std::span<const std::string> texts = {});

/// first_stage, rerank, then the top_k best.
RetrievalResult two_stage_retrieve(std::string_view query, const RetrievalDeps& deps, const RetrievalConfig& cfg);

/// Parent case of the best candidate; nullopt when there is none.
std::optional<ClinicalCase> select_demonstration(const RetrievalResult& result, const IndexBundle& index);
std::optional<ClinicalCase> select_demonstration(std::string_view query, const RetrievalDeps& deps,
                                                 const RetrievalConfig& cfg);

}  // namespace tcmrag
