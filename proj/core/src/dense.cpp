#include "tcmrag/dense.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "tcmrag/error.hpp"
#include "tcmrag/segment.hpp"

namespace tcmrag {

EmbeddingVector EmbeddingVector::normalized(std::vector<double> raw) {
    if (raw.empty()) throw ProviderError("embedding is empty");
    double sq = 0.0;
    for (double x : raw) {
        if (!std::isfinite(x)) throw ProviderError("embedding contains a non-finite value");
        sq += x * x;
    }
    if (sq == 0.0) throw ProviderError("embedding is the zero vector");
    const double norm = std::sqrt(sq);
    for (double& x : raw) x /= norm;
    EmbeddingVector v;
    v.values_ = std::move(raw);
    return v;
}

EmbeddingVector EmbeddingVector::from_unit(std::vector<double> values) {
    double sq = 0.0;
    for (double x : values) sq += x * x;
    if (!std::isfinite(sq) || std::abs(std::sqrt(sq) - 1.0) > 1e-6) throw Error("stored vector is not unit length");
    EmbeddingVector v;
    v.values_ = std::move(values);
    return v;
}

double EmbeddingVector::dot(const EmbeddingVector& other) const {
    const std::size_t n = std::min(values_.size(), other.values_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += values_[i] * other.values_[i];
    return acc;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

EmbeddingVector stub_embed(std::span<const std::string> tokens, std::size_t dim) {
    if (dim < 8) throw Error(fmt::format("stub embedding dimension must be >= 8 (got {})", dim));
    if (tokens.empty()) throw Error("stub embedding of an empty token set");
    std::vector<double> v(dim, 0.0);
    for (const auto& t : tokens) v[fnv1a64(t) % dim] += 1.0;
    return EmbeddingVector::normalized(std::move(v));
}

EmbeddingVector stub_embed(const std::set<std::string>& tokens, std::size_t dim) {
    const std::vector<std::string> flat(tokens.begin(), tokens.end());
    return stub_embed(std::span<const std::string>(flat), dim);
}

StubEmbeddingProvider::StubEmbeddingProvider(std::shared_ptr<const Segmenter> segmenter, std::size_t dim)
    : segmenter_(std::move(segmenter)), dim_(dim) {
    if (!segmenter_) throw ConfigError("stub embedder needs a segmenter");
    if (dim_ < 8) throw ConfigError(fmt::format("stub embedding dimension must be >= 8 (got {})", dim_));
}

EmbeddingVector StubEmbeddingProvider::embed_one(std::string_view text) const {
    const auto seg = segmenter_->cut(text);
    auto tokens = token_set(seg);
    if (tokens.empty()) {
        // punctuation-only text still gets a deterministic vector
        for (const auto& t : seg.tokens) tokens.insert(t.text);
    }
    if (tokens.empty()) throw ProviderError("cannot embed empty text");
    return stub_embed(tokens, dim_);
}

std::vector<std::vector<double>> StubEmbeddingProvider::embed_raw(std::span<const std::string> texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        const auto v = embed_one(t);
        out.emplace_back(v.values().begin(), v.values().end());
    }
    return out;
}

EmbeddingVector embed(std::string_view text, EmbeddingProvider& provider, std::optional<std::size_t> expected_dim) {
    const std::string owned(text);
    auto all = embed_all(std::span<const std::string>(&owned, 1), provider, expected_dim);
    return std::move(all.front());
}

std::vector<EmbeddingVector> embed_all(std::span<const std::string> texts, EmbeddingProvider& provider,
                                       std::optional<std::size_t> expected_dim, std::size_t batch_size) {
    for (const auto& t : texts) {
        if (t.empty()) throw Error("cannot embed empty text");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t i = 0; i < texts.size(); i += batch_size) {
        const auto batch = texts.subspan(i, std::min(batch_size, texts.size() - i));
        auto raw = provider.embed_raw(batch);
        if (raw.size() != batch.size()) {
            throw ProviderError(fmt::format("{} returned {} embeddings for {} inputs", provider.name(), raw.size(),
                                            batch.size()));
        }
        for (auto& r : raw) {
            if (expected_dim && r.size() != *expected_dim) {
                throw ProviderError(fmt::format("{} returned dimension {} but the index uses {}", provider.name(),
                                                r.size(), *expected_dim));
            }
            out.push_back(EmbeddingVector::normalized(std::move(r)));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// VectorIndex

VectorIndex::VectorIndex(VectorIndex&& other) noexcept
    : dim_(other.dim_),
      ids_(std::move(other.ids_)),
      vectors_(std::move(other.vectors_)),
      by_id_(std::move(other.by_id_)),
      reads_(other.reads_.load()) {}

VectorIndex& VectorIndex::operator=(VectorIndex&& other) noexcept {
    dim_ = other.dim_;
    ids_ = std::move(other.ids_);
    vectors_ = std::move(other.vectors_);
    by_id_ = std::move(other.by_id_);
    reads_.store(other.reads_.load());
    return *this;
}

void VectorIndex::add(std::string id, EmbeddingVector vec) {
    if (vec.dim() == 0) throw Error("cannot index an empty vector");
    if (dim_ == 0) dim_ = vec.dim();
    if (vec.dim() != dim_) {
        throw Error(fmt::format("vector for '{}' has dimension {} but the index uses {}", id, vec.dim(), dim_));
    }
    if (by_id_.contains(id)) throw Error(fmt::format("duplicate chunk id '{}' in vector index", id));
    by_id_.emplace(id, ids_.size());
    ids_.push_back(std::move(id));
    vectors_.push_back(std::move(vec));
}

std::vector<ScoredId> VectorIndex::search(const EmbeddingVector& query, std::size_t n) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    if (ids_.empty() || n == 0) return {};
    if (query.dim() != dim_) {
        throw Error(fmt::format("query has dimension {} but the index uses {}", query.dim(), dim_));
    }
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(ids_.size());
    for (std::size_t i = 0; i < vectors_.size(); ++i) scored.emplace_back(vectors_[i].dot(query), i);

    const auto better = [this](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return ids_[a.second] < ids_[b.second];
    };
    const std::size_t k = std::min(n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);

    std::vector<ScoredId> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({ids_[scored[i].second], scored[i].first});
    return out;
}

const EmbeddingVector* VectorIndex::find(std::string_view id) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &vectors_[it->second];
}

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'C', 'M', 'V', 'E', 'C', 'I', 'X'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& in) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw ParseError("vector index file is truncated");
        value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return value;
}

}  // namespace

void VectorIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write vector index {}", path.string()));
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kFormatVersion);
    put_le<std::uint32_t>(out, 0);
    put_le<std::uint64_t>(out, dim_);
    put_le<std::uint64_t>(out, ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ids_[i].size()));
        out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
        for (double x : vectors_[i].values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
    }
    if (!out) throw Error(fmt::format("failed writing vector index {}", path.string()));
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open vector index {}", path.string()));
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw ParseError(fmt::format("{} is not a vector index file", path.string()));
    const auto version = get_le<std::uint32_t>(in);
    if (version != kFormatVersion) {
        throw ParseError(fmt::format("{}: unsupported vector index version {}", path.string(), version));
    }
    get_le<std::uint32_t>(in);
    const auto dim = get_le<std::uint64_t>(in);
    const auto count = get_le<std::uint64_t>(in);
    VectorIndex index;
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto len = get_le<std::uint32_t>(in);
        std::string id(len, '\0');
        in.read(id.data(), len);
        if (!in) throw ParseError("vector index file is truncated");
        std::vector<double> values(dim);
        for (auto& x : values) x = std::bit_cast<double>(get_le<std::uint64_t>(in));
        index.add(std::move(id), EmbeddingVector::from_unit(std::move(values)));
    }
    return index;
}

}  // namespace tcmrag
