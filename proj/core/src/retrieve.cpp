#include "tcmrag/retrieve.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "tcmrag/error.hpp"
#include "tcmrag/index_bundle.hpp"
#include "tcmrag/segment.hpp"

namespace tcmrag {

std::string_view to_string(RetrievalMode mode) {
    switch (mode) {
        case RetrievalMode::kDenseOnly: return "dense_only";
        case RetrievalMode::kSparseOnly: return "sparse_only";
        case RetrievalMode::kHybrid: return "hybrid";
    }
    return "?";
}

RetrievalMode parse_retrieval_mode(std::string_view name) {
    if (name == "dense_only") return RetrievalMode::kDenseOnly;
    if (name == "sparse_only") return RetrievalMode::kSparseOnly;
    if (name == "hybrid") return RetrievalMode::kHybrid;
    throw ConfigError(fmt::format("unknown retrieval mode '{}' (expected dense_only, sparse_only or hybrid)", name));
}

void RetrievalConfig::validate() const {
    if (top_k < 1 || top_k > n_dense + n_sparse) {
        throw ConfigError(fmt::format("top_k must be in [1, n_dense + n_sparse] (got {} with {} + {})", top_k,
                                      n_dense, n_sparse));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError(fmt::format("alpha must be in [0, 1] (got {})", alpha));
}

std::vector<RetrievalCandidate> first_stage(std::string_view query, const Segmenter& segmenter,
                                            EmbeddingProvider& embedder, const VectorIndex& dense,
                                            const KeywordIndex& sparse, const RetrievalConfig& cfg) {
    cfg.validate();
    const bool use_dense = cfg.mode != RetrievalMode::kSparseOnly;
    const bool use_sparse = cfg.mode != RetrievalMode::kDenseOnly;
    const auto query_tokens = segmenter.tokens(query);

    std::optional<EmbeddingVector> qvec;
    auto query_vector = [&]() -> const EmbeddingVector& {
        if (!qvec) qvec = embed(query, embedder, dense.dim());
        return *qvec;
    };

    std::map<std::string, RetrievalCandidate> pool;
    if (use_dense && dense.size() > 0) {
        for (auto& hit : dense.search(query_vector(), cfg.n_dense)) {
            auto& c = pool[hit.id];
            c.chunk_id = hit.id;
            c.from_dense = true;
        }
    }
    if (use_sparse) {
        for (auto& hit : sparse.search(query_tokens, cfg.n_sparse)) {
            auto& c = pool[hit.id];
            c.chunk_id = hit.id;
            c.from_sparse = true;
        }
    }

    std::vector<RetrievalCandidate> out;
    out.reserve(pool.size());
    for (auto& [id, c] : pool) {
        const auto* vec = dense.find(id);
        const auto* toks = sparse.tokens(id);
        if (!vec || !toks) throw ConfigError(fmt::format("chunk {} is not in both indexes", id));
        c.dense_score = vec->dot(query_vector());
        c.sparse_score = iou_score(query_tokens, *toks);
        out.push_back(std::move(c));
    }
    return out;
}

void fuse_scores(std::span<RetrievalCandidate> candidates, double alpha) {
    for (auto& c : candidates) c.rerank_score = alpha * c.dense_score + (1.0 - alpha) * c.sparse_score;
}

RetrievalResult rerank(std::string_view query, std::vector<RetrievalCandidate> candidates,
                       const RetrievalConfig& cfg, Reranker* reranker, std::span<const std::string> texts) {
    RetrievalResult result;
    if (reranker && !candidates.empty()) {
        if (texts.size() != candidates.size()) {
            throw Error(fmt::format("rerank needs one text per candidate ({} texts, {} candidates)", texts.size(),
                                    candidates.size()));
        }
        try {
            const auto scores = reranker->score(query, texts);
            if (scores.size() != candidates.size()) {
                throw ProviderError(fmt::format("reranker returned {} scores for {} documents", scores.size(),
                                                candidates.size()));
            }
            for (std::size_t i = 0; i < scores.size(); ++i) {
                if (!std::isfinite(scores[i])) throw ProviderError("reranker returned a non-finite score");
                candidates[i].rerank_score = scores[i];
            }
        } catch (const ProviderError& e) {
            result.warnings.push_back(
                fmt::format("reranker {} failed, using score fusion (alpha {}): {}", reranker->name(), cfg.alpha,
                            e.what()));
            result.used_fallback = true;
            fuse_scores(candidates, cfg.alpha);
        }
    } else {
        result.used_fallback = true;
        fuse_scores(candidates, cfg.alpha);
    }
    std::sort(candidates.begin(), candidates.end(), [](const RetrievalCandidate& a, const RetrievalCandidate& b) {
        if (a.rerank_score != b.rerank_score) return a.rerank_score > b.rerank_score;
        return a.chunk_id < b.chunk_id;
    });
    result.candidates = std::move(candidates);
    return result;
}

RetrievalResult two_stage_retrieve(std::string_view query, const RetrievalDeps& deps, const RetrievalConfig& cfg) {
    if (!deps.segmenter || !deps.embedder || !deps.index) {
        throw ConfigError("retrieval needs a segmenter, an embedder and an index");
    }
    const auto& index = *deps.index;
    auto pool = first_stage(query, *deps.segmenter, *deps.embedder, index.dense(), index.sparse(), cfg);

    std::vector<std::string> texts;
    if (deps.reranker) {
        texts.reserve(pool.size());
        for (const auto& c : pool) texts.push_back(index.chunk(c.chunk_id)->text);
    }
    auto result = rerank(query, std::move(pool), cfg, deps.reranker, texts);
    if (result.candidates.size() > cfg.top_k) result.candidates.resize(cfg.top_k);
    return result;
}

std::optional<ClinicalCase> select_demonstration(const RetrievalResult& result, const IndexBundle& index) {
    if (result.candidates.empty()) return std::nullopt;
    const auto& top = result.candidates.front().chunk_id;
    const auto* chunk = index.chunk(top);
    const auto* c = index.find_case(chunk ? chunk->case_id : parent_case_id(top));
    if (!c) throw ConfigError(fmt::format("chunk {} has no source case in the index", top));
    return *c;
}

std::optional<ClinicalCase> select_demonstration(std::string_view query, const RetrievalDeps& deps,
                                                 const RetrievalConfig& cfg) {
    return select_demonstration(two_stage_retrieve(query, deps, cfg), *deps.index);
}

}  // namespace tcmrag
