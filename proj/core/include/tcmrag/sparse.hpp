#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tcmrag/dense.hpp"

namespace tcmrag {

/// |q ∩ d| / |q ∪ d|; 0 when both sets are empty.
double iou_score(const std::set<std::string>& q, const std::set<std::string>& d);

/// Token-set inverted index scored by IoU.
class KeywordIndex {
public:
    KeywordIndex() = default;
    KeywordIndex(KeywordIndex&& other) noexcept;
    KeywordIndex& operator=(KeywordIndex&& other) noexcept;

    /// Throws Error for a duplicate chunk id. An empty set is stored and
    /// never matches.
    void add(const std::string& chunk_id, std::set<std::string> tokens);

    /// Chunks sharing at least one token with the query, top min(n, |candidates|)
    /// by IoU descending, equal scores by chunk id ascending.
    std::vector<ScoredId> search(const std::set<std::string>& query_tokens, std::size_t n) const;

    /// Stored token set, or nullptr for an unknown chunk.
    const std::set<std::string>* tokens(std::string_view chunk_id) const;

    const std::map<std::string, std::vector<std::string>, std::less<>>& postings() const noexcept { return postings_; }
    const std::map<std::string, std::set<std::string>, std::less<>>& documents() const noexcept { return docs_; }
    std::size_t size() const noexcept { return docs_.size(); }

    std::uint64_t reads() const noexcept { return reads_.load(std::memory_order_relaxed); }

    /// One line per chunk: `<chunk_id>\t<token> <token> ...`.
    void save(const std::filesystem::path& path) const;
    static KeywordIndex load(const std::filesystem::path& path);

private:
    std::map<std::string, std::vector<std::string>, std::less<>> postings_;
    std::map<std::string, std::set<std::string>, std::less<>> docs_;
    mutable std::atomic<std::uint64_t> reads_{0};
};

}  // namespace tcmrag
