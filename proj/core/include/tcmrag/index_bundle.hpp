#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tcmrag/corpus.hpp"
#include "tcmrag/dense.hpp"
#include "tcmrag/sparse.hpp"

namespace tcmrag {

class Segmenter;

/// Chunks of one corpus under one strategy, with the vector and keyword
/// indexes built over exactly those chunks.
class IndexBundle {
public:
    static constexpr std::string_view kManifestFile = "manifest.json";
    static constexpr std::string_view kVectorFile = "vectors.bin";
    static constexpr std::string_view kKeywordFile = "keywords.tsv";
    static constexpr std::string_view kChunkFile = "chunks.jsonl";
    static constexpr std::string_view kCaseFile = "cases.jsonl";
    static constexpr int kVersion = 1;

    ChunkStrategy strategy() const noexcept { return strategy_; }
    const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
    const Chunk* chunk(std::string_view chunk_id) const;
    const VectorIndex& dense() const noexcept { return dense_; }
    const KeywordIndex& sparse() const noexcept { return sparse_; }
    const std::string& embedder() const noexcept { return embedder_; }
    /// Source cases, for demonstrations.
    const std::vector<ClinicalCase>& cases() const noexcept { return cases_; }
    const ClinicalCase* find_case(std::string_view case_id) const;

    /// Writes manifest, vectors, keywords, chunk dump and cases into `dir`.
    /// Returns the written paths in a fixed order.
    std::vector<std::filesystem::path> save(const std::filesystem::path& dir) const;
    /// Throws ConfigError when files are missing or the indexes disagree.
    static IndexBundle load(const std::filesystem::path& dir);

    /// Reads only the manifest's strategy.
    static ChunkStrategy read_strategy(const std::filesystem::path& dir);

    friend IndexBundle build_index(std::span<const ClinicalCase>, ChunkStrategy, const ChunkingParams&,
                                   const Segmenter&, EmbeddingProvider&);

private:
    void link();

    ChunkStrategy strategy_ = ChunkStrategy::kTokenChunk;
    std::string embedder_;
    std::vector<Chunk> chunks_;
    std::vector<ClinicalCase> cases_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> case_by_id_;
    VectorIndex dense_;
    KeywordIndex sparse_;
};

/// Chunks every case document, segments the chunks and embeds them.
IndexBundle build_index(std::span<const ClinicalCase> corpus, ChunkStrategy strategy, const ChunkingParams& params,
                        const Segmenter& segmenter, EmbeddingProvider& embedder);

}  // namespace tcmrag
