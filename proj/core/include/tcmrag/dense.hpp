#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tcmrag {

class Segmenter;

/// Unit-length embedding. Construction normalizes; zero or non-finite
/// input is rejected.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    /// Throws ProviderError for an empty, zero or non-finite vector.
    static EmbeddingVector normalized(std::vector<double> raw);
    /// Takes values that are already unit length (within 1e-6) verbatim.
    static EmbeddingVector from_unit(std::vector<double> values);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }

    /// Cosine similarity, which for unit vectors is the dot product.
    double dot(const EmbeddingVector& other) const;

private:
    std::vector<double> values_;
};

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

/// Hashed bag-of-tokens: each token adds 1 to bucket fnv1a64(token) % dim,
/// then the vector is normalized. Throws Error for no tokens or dim < 8.
EmbeddingVector stub_embed(std::span<const std::string> tokens, std::size_t dim);
EmbeddingVector stub_embed(const std::set<std::string>& tokens, std::size_t dim);

/// Anything that turns texts into raw (not necessarily normalized) vectors.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) = 0;
    virtual std::string name() const = 0;
};

/// Offline provider: stub_embed over the segmenter's token set.
class StubEmbeddingProvider final : public EmbeddingProvider {
public:
    static constexpr std::size_t kDefaultDim = 256;

    explicit StubEmbeddingProvider(std::shared_ptr<const Segmenter> segmenter, std::size_t dim = kDefaultDim);

    std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override;
    std::string name() const override { return "stub"; }
    std::size_t dim() const noexcept { return dim_; }

    EmbeddingVector embed_one(std::string_view text) const;

private:
    std::shared_ptr<const Segmenter> segmenter_;
    std::size_t dim_;
};

/// Normalized provider embedding. When `expected_dim` is set, a vector of
/// another size is a ProviderError.
EmbeddingVector embed(std::string_view text, EmbeddingProvider& provider,
                      std::optional<std::size_t> expected_dim = std::nullopt);

std::vector<EmbeddingVector> embed_all(std::span<const std::string> texts, EmbeddingProvider& provider,
                                       std::optional<std::size_t> expected_dim = std::nullopt,
                                       std::size_t batch_size = 32);

struct ScoredId {
    std::string id;
    double score = 0.0;

    bool operator==(const ScoredId&) const = default;
};

/// Exact flat cosine index. Single writer while building; searches are
/// const and may run concurrently afterwards.
class VectorIndex {
public:
    VectorIndex() = default;
    VectorIndex(VectorIndex&& other) noexcept;
    VectorIndex& operator=(VectorIndex&& other) noexcept;

    /// Throws Error on a duplicate id or a dimension mismatch.
    void add(std::string id, EmbeddingVector vec);

    /// Top min(n, size) by cosine descending, equal scores by id ascending.
    std::vector<ScoredId> search(const EmbeddingVector& query, std::size_t n) const;

    const EmbeddingVector* find(std::string_view id) const;

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }

    /// Number of search/find calls served, for isolation checks.
    std::uint64_t reads() const noexcept { return reads_.load(std::memory_order_relaxed); }

    void save(const std::filesystem::path& path) const;
    static VectorIndex load(const std::filesystem::path& path);

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<EmbeddingVector> vectors_;
    std::unordered_map<std::string, std::size_t> by_id_;
    mutable std::atomic<std::uint64_t> reads_{0};
};

}  // namespace tcmrag
