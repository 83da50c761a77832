#include "tcmrag/sparse.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <fmt/format.h>

#include "tcmrag/error.hpp"

namespace tcmrag {

double iou_score(const std::set<std::string>& q, const std::set<std::string>& d) {
    if (q.empty() && d.empty()) return 0.0;
    std::size_t inter = 0;
    auto a = q.begin();
    auto b = d.begin();
    while (a != q.end() && b != d.end()) {
        if (*a < *b) {
            ++a;
        } else if (*b < *a) {
            ++b;
        } else {
            ++inter;
            ++a;
            ++b;
        }
    }
    const std::size_t uni = q.size() + d.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

KeywordIndex::KeywordIndex(KeywordIndex&& other) noexcept
    : postings_(std::move(other.postings_)), docs_(std::move(other.docs_)), reads_(other.reads_.load()) {}

KeywordIndex& KeywordIndex::operator=(KeywordIndex&& other) noexcept {
    postings_ = std::move(other.postings_);
    docs_ = std::move(other.docs_);
    reads_.store(other.reads_.load());
    return *this;
}

void KeywordIndex::add(const std::string& chunk_id, std::set<std::string> tokens) {
    if (docs_.contains(chunk_id)) throw Error(fmt::format("duplicate chunk id '{}' in keyword index", chunk_id));
    for (const auto& t : tokens) {
        auto& list = postings_[t];
        list.insert(std::upper_bound(list.begin(), list.end(), chunk_id), chunk_id);
    }
    docs_.emplace(chunk_id, std::move(tokens));
}

std::vector<ScoredId> KeywordIndex::search(const std::set<std::string>& query_tokens, std::size_t n) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    std::set<std::string_view> candidates;
    for (const auto& t : query_tokens) {
        auto it = postings_.find(t);
        if (it == postings_.end()) continue;
        for (const auto& id : it->second) candidates.insert(id);
    }
    std::vector<ScoredId> scored;
    scored.reserve(candidates.size());
    for (auto id : candidates) {
        scored.push_back({std::string(id), iou_score(query_tokens, docs_.find(id)->second)});
    }
    const auto better = [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    };
    const std::size_t k = std::min(n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
    scored.resize(k);
    return scored;
}

const std::set<std::string>* KeywordIndex::tokens(std::string_view chunk_id) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    auto it = docs_.find(chunk_id);
    return it == docs_.end() ? nullptr : &it->second;
}

void KeywordIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write keyword index {}", path.string()));
    for (const auto& [id, tokens] : docs_) {
        if (id.find_first_of("\t\n") != std::string::npos) {
            throw Error(fmt::format("chunk id '{}' cannot be stored in a keyword index", id));
        }
        out << id << '\t';
        bool first = true;
        for (const auto& t : tokens) {
            if (t.empty() || t.find_first_of(" \t\n\r") != std::string::npos) {
                throw Error(fmt::format("token '{}' of chunk '{}' contains whitespace", t, id));
            }
            if (!first) out << ' ';
            out << t;
            first = false;
        }
        out << '\n';
    }
    if (!out) throw Error(fmt::format("failed writing keyword index {}", path.string()));
}

KeywordIndex KeywordIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open keyword index {}", path.string()));
    KeywordIndex index;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) throw ParseError("expected '<chunk_id>\\t<tokens>'", lineno);
        std::set<std::string> tokens;
        std::size_t pos = tab + 1;
        while (pos < line.size()) {
            auto sp = line.find(' ', pos);
            if (sp == std::string::npos) sp = line.size();
            if (sp > pos) tokens.emplace(line, pos, sp - pos);
            pos = sp + 1;
        }
        try {
            index.add(line.substr(0, tab), std::move(tokens));
        } catch (const Error& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return index;
}

}  // namespace tcmrag
