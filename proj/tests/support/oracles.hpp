#pragma once

// Brute-force reference implementations. None of these call into the
// library code they check; they only share its data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// ---- segmentation -------------------------------------------------------

using FreqMap = std::map<std::u32string, std::uint64_t>;

struct Segmentation {
    std::vector<std::u32string> words;
    double score = -std::numeric_limits<double>::infinity();
};

/// Every way to split `s`, scored right to left by
/// w = ln(max(freq, 1)) - ln(total). Multi-character pieces must have a
/// positive frequency; single characters are always allowed.
/// The best score wins; ties (within 1e-9) prefer the longer first word, then the
/// longer second word, and so on.
inline Segmentation best_segmentation(const std::u32string& s, const FreqMap& freq) {
    std::uint64_t total = 0;
    for (const auto& [w, f] : freq) total += f;
    const double log_total = std::log(static_cast<double>(total));
    auto weight = [&](const std::u32string& w) -> std::optional<double> {
        auto it = freq.find(w);
        const std::uint64_t f = it == freq.end() ? 0 : it->second;
        if (f == 0 && w.size() > 1) return std::nullopt;
        return std::log(static_cast<double>(f > 0 ? f : 1)) - log_total;
    };

    const std::size_t n = s.size();
    Segmentation best;
    if (n == 0) {
        best.score = 0.0;
        return best;
    }
    // Bit i set means a cut after character i.
    const std::uint64_t masks = std::uint64_t{1} << (n - 1);
    for (std::uint64_t mask = 0; mask < masks; ++mask) {
        std::vector<std::u32string> words;
        std::size_t start = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i + 1 == n || (mask >> i) & 1U) {
                words.push_back(s.substr(start, i + 1 - start));
                start = i + 1;
            }
        }
        double score = 0.0;
        bool ok = true;
        for (auto it = words.rbegin(); it != words.rend(); ++it) {
            auto w = weight(*it);
            if (!w) {
                ok = false;
                break;
            }
            score = *w + score;
        }
        if (!ok) continue;
        // Sums within 1e-9 count as equal, as rounding differs by summation order.
        bool better = score > best.score + 1e-9;
        if (std::abs(score - best.score) <= 1e-9) {
            for (std::size_t k = 0; k < std::min(words.size(), best.words.size()); ++k) {
                if (words[k].size() != best.words[k].size()) {
                    better = words[k].size() > best.words[k].size();
                    break;
                }
            }
        }
        if (better) best = {std::move(words), score};
    }
    return best;
}

// ---- BMES decoding ------------------------------------------------------

enum State : int { B = 0, M = 1, E = 2, S = 3 };

inline bool allowed(int from, int to) {
    switch (from) {
        case B:
        case M: return to == M || to == E;
        default: return to == B || to == S;
    }
}

struct Hmm {
    std::array<double, 4> start{};
    std::array<std::array<double, 4>, 4> trans{};
    std::array<std::map<char32_t, double>, 4> emit;
    double unseen = -16.0;

    double emission(int s, char32_t c) const {
        auto it = emit[s].find(c);
        return it == emit[s].end() ? unseen : it->second;
    }
};

/// Exhaustive search over every grammatical BMES path that starts in B or
/// S and ends in E or S. Ties go to the path whose states, read from the
/// last position backwards, are smallest in B < M < E < S order.
inline std::vector<int> best_path(const std::u32string& frag, const Hmm& hmm) {
    const std::size_t n = frag.size();
    std::vector<int> best;
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<int> path(n);

    auto consider = [&](double score) {
        if (path.back() != E && path.back() != S) return;
        bool better = score > best_score;
        if (score == best_score) {
            for (std::size_t k = n; k-- > 0;) {
                if (path[k] != best[k]) {
                    better = path[k] < best[k];
                    break;
                }
            }
        }
        if (better) {
            best_score = score;
            best = path;
        }
    };
    auto walk = [&](auto&& self, std::size_t t, double score) -> void {
        if (t == n) {
            consider(score);
            return;
        }
        for (int s = 0; s < 4; ++s) {
            double next;
            if (t == 0) {
                if (s != B && s != S) continue;
                next = hmm.start[s] + hmm.emission(s, frag[0]);
            } else {
                if (!allowed(path[t - 1], s)) continue;
                next = (score + hmm.trans[path[t - 1]][s]) + hmm.emission(s, frag[t]);
            }
            path[t] = s;
            self(self, t + 1, next);
        }
    };
    if (n > 0) walk(walk, 0, 0.0);
    return best;
}

/// Words produced by cutting after every E and S.
inline std::vector<std::u32string> split_by_states(const std::u32string& frag, const std::vector<int>& states) {
    std::vector<std::u32string> out;
    std::size_t begin = 0;
    for (std::size_t t = 0; t < states.size(); ++t) {
        if (states[t] == E || states[t] == S) {
            out.push_back(frag.substr(begin, t + 1 - begin));
            begin = t + 1;
        }
    }
    return out;
}

// ---- keyword and vector search ------------------------------------------

inline double iou(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

using Ranked = std::vector<std::pair<std::string, double>>;

/// Score descending, id ascending, first n.
inline Ranked top_n(Ranked all, std::size_t n) {
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    if (all.size() > n) all.resize(n);
    return all;
}

inline Ranked keyword_scan(const std::map<std::string, std::set<std::string>>& docs,
                           const std::set<std::string>& query, std::size_t n) {
    Ranked all;
    for (const auto& [id, toks] : docs) {
        const double s = iou(query, toks);
        if (s > 0.0) all.emplace_back(id, s);
    }
    return top_n(std::move(all), n);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline Ranked cosine_scan(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                          const std::vector<double>& query, std::size_t n) {
    Ranked all;
    for (const auto& [id, v] : rows) all.emplace_back(id, cosine(v, query));
    return top_n(std::move(all), n);
}

// ---- hashing ------------------------------------------------------------

/// 64-bit FNV-1a, written out from the published constants.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::set<std::uint64_t> buckets(const std::set<std::string>& tokens, std::uint64_t dim) {
    std::set<std::uint64_t> out;
    for (const auto& t : tokens) out.insert(fnv1a(t) % dim);
    return out;
}

}  // namespace oracle
