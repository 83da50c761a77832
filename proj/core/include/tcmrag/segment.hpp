#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tcmrag/corpus.hpp"

namespace tcmrag {

/// Prefix dictionary: every word with its frequency, plus every proper
/// prefix of a word stored with frequency 0 so the DAG walk can stop at
/// the first absent prefix.
class Lexicon {
public:
    Lexicon() = default;

    /// Reads `<word> <frequency>` lines; `#` starts a comment line.
    static Lexicon read(std::istream& in);
    static Lexicon load(const std::filesystem::path& path);

    /// Inserts or replaces a word. Throws ParseError for an empty word or
    /// a frequency below 1.
    void add(std::string_view word, std::uint64_t frequency);

    bool contains(std::u32string_view key) const { return entries_.contains(std::u32string(key)); }
    /// 0 for prefixes and for absent keys.
    std::uint64_t frequency(std::u32string_view key) const;
    std::uint64_t frequency(std::string_view utf8_key) const;

    std::uint64_t total() const noexcept { return total_; }
    /// ln(total); 0 for an empty lexicon.
    double log_total() const noexcept { return log_total_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::unordered_map<std::u32string, std::uint64_t>& entries() const noexcept { return entries_; }

private:
    std::unordered_map<std::u32string, std::uint64_t> entries_;
    std::uint64_t total_ = 0;
    double log_total_ = 0.0;
};

enum class HmmState : std::uint8_t { B = 0, M = 1, E = 2, S = 3 };

inline constexpr std::array<HmmState, 4> kHmmStates = {HmmState::B, HmmState::M, HmmState::E, HmmState::S};

char to_char(HmmState s);

/// BMES character-tagging model. Log-probabilities of disallowed starts
/// and transitions are -inf.
class HmmModel {
public:
    static constexpr double kDefaultUnseen = -16.0;

    HmmModel();

    /// JSON object with keys `start`, `trans`, `emit`, `unseen`.
    static HmmModel parse(std::string_view json_text);
    static HmmModel load(const std::filesystem::path& path);

    double start(HmmState s) const noexcept { return start_[idx(s)]; }
    double trans(HmmState from, HmmState to) const noexcept { return trans_[idx(from)][idx(to)]; }
    double emit(HmmState s, char32_t ch) const;
    double unseen() const noexcept { return unseen_; }

    /// Whether the BMES grammar allows `from -> to`.
    static bool allowed(HmmState from, HmmState to);

    void set_start(HmmState s, double logp);
    void set_trans(HmmState from, HmmState to, double logp);
    void set_emit(HmmState s, char32_t ch, double logp);
    void set_unseen(double logp) { unseen_ = logp; }

private:
    static std::size_t idx(HmmState s) { return static_cast<std::size_t>(s); }

    std::array<double, 4> start_;
    std::array<std::array<double, 4>, 4> trans_;
    std::array<std::unordered_map<char32_t, double>, 4> emit_;
    double unseen_ = kDefaultUnseen;
};

/// dag[i] lists, ascending, every end index j (inclusive) such that
/// sentence[i..=j] is a lexicon word; dag[i] always contains i.
using Dag = std::vector<std::vector<std::size_t>>;

Dag build_dag(std::u32string_view sentence, const Lexicon& lex);

/// Word weight used by the route search: ln(freq/total), or ln(1/total)
/// for a character the lexicon does not know.
double word_log_prob(std::u32string_view word, const Lexicon& lex);

/// route[i] is the inclusive end of the word chosen at i on the
/// maximum-probability path. Ties go to the longer word.
std::vector<std::size_t> max_prob_route(std::u32string_view sentence, const Dag& dag, const Lexicon& lex);

/// Most likely BMES path; the last state is E or S. Ties at each
/// backtrack step go to the earlier state in B < M < E < S.
std::vector<HmmState> viterbi_states(std::u32string_view fragment, const HmmModel& model);

/// Cuts after every E and S of the Viterbi path. Spans are shifted by
/// `offset`.
std::vector<Token> viterbi(std::u32string_view fragment, const HmmModel& model, std::size_t offset = 0);

struct SegmentationResult {
    std::vector<Token> tokens;
};

/// Dictionary segmentation of Han runs; ASCII letter/digit runs and
/// whitespace runs are single tokens; other characters stand alone.
/// With an HMM, runs of unknown single characters are re-decoded.
SegmentationResult cut(std::string_view sentence, const Lexicon& lex, const HmmModel* hmm = nullptr);

/// Distinct token texts, skipping tokens made only of punctuation or
/// whitespace.
std::set<std::string> token_set(std::span<const Token> tokens);
inline std::set<std::string> token_set(const SegmentationResult& result) { return token_set(result.tokens); }

/// Immutable lexicon + optional HMM bundle, shared between threads.
class Segmenter {
public:
    explicit Segmenter(Lexicon lexicon, std::optional<HmmModel> hmm = std::nullopt)
        : lexicon_(std::move(lexicon)), hmm_(std::move(hmm)) {}

    SegmentationResult cut(std::string_view text) const {
        return tcmrag::cut(text, lexicon_, hmm_ ? &*hmm_ : nullptr);
    }
    std::set<std::string> tokens(std::string_view text) const { return token_set(cut(text)); }

    const Lexicon& lexicon() const noexcept { return lexicon_; }
    const HmmModel* hmm() const noexcept { return hmm_ ? &*hmm_ : nullptr; }

private:
    Lexicon lexicon_;
    std::optional<HmmModel> hmm_;
};

}  // namespace tcmrag
