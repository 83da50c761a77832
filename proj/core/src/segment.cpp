#include "tcmrag/segment.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"
#include "tcmrag/utf8.hpp"

namespace tcmrag {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// Lexicon

void Lexicon::add(std::string_view word, std::uint64_t frequency) {
    if (word.empty()) throw ParseError("empty word");
    if (frequency < 1) throw ParseError(fmt::format("frequency of '{}' must be >= 1", word));
    const auto key = utf8::decode(word);
    auto [it, inserted] = entries_.try_emplace(key, frequency);
    if (!inserted) {
        total_ -= it->second;
        it->second = frequency;
    }
    total_ += frequency;
    for (std::size_t k = 1; k < key.size(); ++k) entries_.try_emplace(key.substr(0, k), 0);
    log_total_ = total_ > 0 ? std::log(static_cast<double>(total_)) : 0.0;
}

std::uint64_t Lexicon::frequency(std::u32string_view key) const {
    auto it = entries_.find(std::u32string(key));
    return it == entries_.end() ? 0 : it->second;
}

std::uint64_t Lexicon::frequency(std::string_view utf8_key) const { return frequency(utf8::decode(utf8_key)); }

Lexicon Lexicon::read(std::istream& in) {
    Lexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw ParseError("expected '<word> <frequency>'", lineno);
        const std::string_view word(line.data(), sp);
        const std::string_view freq_text(line.data() + sp + 1, line.size() - sp - 1);
        if (word.empty()) throw ParseError("empty word", lineno);
        std::uint64_t freq = 0;
        const auto [ptr, ec] = std::from_chars(freq_text.data(), freq_text.data() + freq_text.size(), freq);
        if (freq_text.empty() || ec != std::errc() || ptr != freq_text.data() + freq_text.size()) {
            throw ParseError(fmt::format("frequency '{}' is not a non-negative integer", freq_text), lineno);
        }
        if (freq < 1) throw ParseError(fmt::format("frequency of '{}' must be >= 1", word), lineno);
        lex.add(word, freq);
    }
    if (lex.total() == 0) throw ParseError("lexicon has no entries");
    return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open lexicon file {}", path.string()));
    try {
        return read(in);
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.line());
    }
}

// ---------------------------------------------------------------------------
// HmmModel

char to_char(HmmState s) { return "BMES"[static_cast<std::size_t>(s)]; }

namespace {

std::optional<HmmState> state_from_key(std::string_view key) {
    if (key == "B") return HmmState::B;
    if (key == "M") return HmmState::M;
    if (key == "E") return HmmState::E;
    if (key == "S") return HmmState::S;
    return std::nullopt;
}

HmmState require_state(std::string_view key, std::string_view where) {
    auto s = state_from_key(key);
    if (!s) throw ParseError(fmt::format("HMM model: unknown state '{}' in {}", key, where));
    return *s;
}

double require_logp(const nlohmann::json& v, std::string_view where) {
    if (!v.is_number()) throw ParseError(fmt::format("HMM model: {} must be a number", where));
    const double x = v.get<double>();
    if (!std::isfinite(x) || x > 0.0) {
        throw ParseError(fmt::format("HMM model: {} must be a finite log-probability", where));
    }
    return x;
}

}  // namespace

HmmModel::HmmModel() {
    start_.fill(kNegInf);
    for (auto& row : trans_) row.fill(kNegInf);
}

bool HmmModel::allowed(HmmState from, HmmState to) {
    using enum HmmState;
    switch (from) {
        case B:
        case M:
            return to == M || to == E;
        case E:
        case S:
            return to == B || to == S;
    }
    return false;
}

void HmmModel::set_start(HmmState s, double logp) {
    if (s != HmmState::B && s != HmmState::S) {
        throw ParseError(fmt::format("HMM model: state {} cannot start a sequence", to_char(s)));
    }
    start_[idx(s)] = logp;
}

void HmmModel::set_trans(HmmState from, HmmState to, double logp) {
    if (!allowed(from, to)) {
        throw ParseError(fmt::format("HMM model: transition {}->{} is not allowed", to_char(from), to_char(to)));
    }
    trans_[idx(from)][idx(to)] = logp;
}

void HmmModel::set_emit(HmmState s, char32_t ch, double logp) { emit_[idx(s)][ch] = logp; }

double HmmModel::emit(HmmState s, char32_t ch) const {
    const auto& table = emit_[idx(s)];
    auto it = table.find(ch);
    return it == table.end() ? unseen_ : it->second;
}

HmmModel HmmModel::parse(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(fmt::format("HMM model: malformed JSON: {}", e.what()));
    }
    if (!doc.is_object()) throw ParseError("HMM model: top level must be an object");
    for (const auto& [key, _] : doc.items()) {
        if (key != "start" && key != "trans" && key != "emit" && key != "unseen") {
            throw ParseError(fmt::format("HMM model: unknown key '{}'", key));
        }
    }
    if (!doc.contains("start") || !doc.contains("trans") || !doc.contains("emit")) {
        throw ParseError("HMM model: 'start', 'trans' and 'emit' are required");
    }

    HmmModel model;
    for (const auto& [key, value] : doc.at("start").items()) {
        model.set_start(require_state(key, "start"), require_logp(value, "start." + key));
    }
    for (const auto& [from_key, row] : doc.at("trans").items()) {
        const auto from = require_state(from_key, "trans");
        if (!row.is_object()) throw ParseError("HMM model: trans rows must be objects");
        for (const auto& [to_key, value] : row.items()) {
            model.set_trans(from, require_state(to_key, "trans"), require_logp(value, "trans." + from_key + to_key));
        }
    }
    for (const auto& [state_key, table] : doc.at("emit").items()) {
        const auto s = require_state(state_key, "emit");
        if (!table.is_object()) throw ParseError("HMM model: emit tables must be objects");
        for (const auto& [ch_key, value] : table.items()) {
            const auto cps = utf8::decode(ch_key);
            if (cps.size() != 1) {
                throw ParseError(fmt::format("HMM model: emission key '{}' must be a single character", ch_key));
            }
            model.set_emit(s, cps[0], require_logp(value, "emit." + state_key));
        }
    }
    if (doc.contains("unseen")) model.set_unseen(require_logp(doc.at("unseen"), "unseen"));
    if (!std::isfinite(model.start(HmmState::S))) {
        throw ParseError("HMM model: start probability for S is required");
    }
    return model;
}

HmmModel HmmModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open HMM model file {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

// ---------------------------------------------------------------------------
// Dictionary DAG + route

Dag build_dag(std::u32string_view sentence, const Lexicon& lex) {
    const std::size_t n = sentence.size();
    Dag dag(n);
    std::u32string frag;
    for (std::size_t i = 0; i < n; ++i) {
        auto& ends = dag[i];
        ends.push_back(i);
        frag.clear();
        for (std::size_t j = i; j < n; ++j) {
            frag.push_back(sentence[j]);
            auto it = lex.entries().find(frag);
            if (it == lex.entries().end()) break;
            if (it->second > 0 && j > i) ends.push_back(j);
        }
    }
    return dag;
}

double word_log_prob(std::u32string_view word, const Lexicon& lex) {
    const auto freq = lex.frequency(word);
    return std::log(static_cast<double>(freq > 0 ? freq : 1)) - lex.log_total();
}

// Mathematically equal sums of logs can differ in the last bit depending on
// summation order; without this, genuine ties would be broken by rounding.
constexpr double kRouteTieTolerance = 1e-9;

std::vector<std::size_t> max_prob_route(std::u32string_view sentence, const Dag& dag, const Lexicon& lex) {
    const std::size_t n = sentence.size();
    std::vector<double> score(n + 1, 0.0);
    std::vector<std::size_t> route(n, 0);
    for (std::size_t i = n; i-- > 0;) {
        double best = kNegInf;
        std::size_t best_end = i;
        for (std::size_t j : dag[i]) {
            const double s = word_log_prob(sentence.substr(i, j - i + 1), lex) + score[j + 1];
            // Scores within kRouteTieTolerance are a tie; the later, longer j wins.
            if (s >= best - kRouteTieTolerance) {
                best = s;
                best_end = j;
            }
        }
        score[i] = best;
        route[i] = best_end;
    }
    return route;
}

// ---------------------------------------------------------------------------
// HMM decoding

std::vector<HmmState> viterbi_states(std::u32string_view fragment, const HmmModel& model) {
    const std::size_t n = fragment.size();
    if (n == 0) return {};
    std::vector<std::array<double, 4>> v(n);
    std::vector<std::array<std::uint8_t, 4>> back(n);

    for (HmmState s : kHmmStates) {
        v[0][static_cast<std::size_t>(s)] = model.start(s) + model.emit(s, fragment[0]);
    }
    for (std::size_t t = 1; t < n; ++t) {
        for (HmmState s : kHmmStates) {
            const double e = model.emit(s, fragment[t]);
            double best = kNegInf;
            std::uint8_t arg = 0;
            for (HmmState p : kHmmStates) {
                if (!HmmModel::allowed(p, s)) continue;
                const double cand = (v[t - 1][static_cast<std::size_t>(p)] + model.trans(p, s)) + e;
                if (cand > best) {
                    best = cand;
                    arg = static_cast<std::uint8_t>(p);
                }
            }
            v[t][static_cast<std::size_t>(s)] = best;
            back[t][static_cast<std::size_t>(s)] = arg;
        }
    }

    const auto& last = v[n - 1];
    HmmState state = last[static_cast<std::size_t>(HmmState::E)] >= last[static_cast<std::size_t>(HmmState::S)]
                         ? HmmState::E
                         : HmmState::S;
    std::vector<HmmState> path(n);
    for (std::size_t t = n; t-- > 0;) {
        path[t] = state;
        if (t > 0) state = static_cast<HmmState>(back[t][static_cast<std::size_t>(state)]);
    }
    return path;
}

std::vector<Token> viterbi(std::u32string_view fragment, const HmmModel& model, std::size_t offset) {
    const auto path = viterbi_states(fragment, model);
    std::vector<Token> tokens;
    std::size_t begin = 0;
    for (std::size_t t = 0; t < path.size(); ++t) {
        if (path[t] == HmmState::E || path[t] == HmmState::S) {
            tokens.push_back({utf8::encode(fragment.substr(begin, t + 1 - begin)), {offset + begin, offset + t + 1}});
            begin = t + 1;
        }
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// cut

namespace {

void push_token(std::vector<Token>& out, std::u32string_view text, std::size_t start, std::size_t end) {
    out.push_back({utf8::encode(text.substr(start, end - start)), {start, end}});
}

void cut_han_run(std::u32string_view text, std::size_t begin, std::size_t end, const Lexicon& lex,
                 const HmmModel* hmm, std::vector<Token>& out) {
    const auto run = text.substr(begin, end - begin);
    const auto dag = build_dag(run, lex);
    const auto route = max_prob_route(run, dag, lex);

    std::size_t unknown_start = 0;
    std::size_t unknown_len = 0;
    auto flush_unknown = [&]() {
        if (unknown_len == 0) return;
        if (hmm != nullptr) {
            for (auto& t : viterbi(run.substr(unknown_start, unknown_len), *hmm, begin + unknown_start)) {
                out.push_back(std::move(t));
            }
        } else {
            for (std::size_t k = 0; k < unknown_len; ++k) {
                push_token(out, text, begin + unknown_start + k, begin + unknown_start + k + 1);
            }
        }
        unknown_len = 0;
    };

    for (std::size_t i = 0; i < run.size();) {
        const std::size_t j = route[i];
        if (j == i && lex.frequency(run.substr(i, 1)) == 0) {
            if (unknown_len == 0) unknown_start = i;
            ++unknown_len;
        } else {
            flush_unknown();
            push_token(out, text, begin + i, begin + j + 1);
        }
        i = j + 1;
    }
    flush_unknown();
}

}  // namespace

SegmentationResult cut(std::string_view sentence, const Lexicon& lex, const HmmModel* hmm) {
    const auto text = utf8::decode(sentence);
    SegmentationResult result;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const char32_t c = text[i];
        std::size_t j = i + 1;
        if (utf8::is_han(c)) {
            while (j < n && utf8::is_han(text[j])) ++j;
            cut_han_run(text, i, j, lex, hmm, result.tokens);
        } else if (utf8::is_ascii_alnum(c)) {
            while (j < n && utf8::is_ascii_alnum(text[j])) ++j;
            push_token(result.tokens, text, i, j);
        } else if (utf8::is_space(c)) {
            while (j < n && utf8::is_space(text[j])) ++j;
            push_token(result.tokens, text, i, j);
        } else {
            push_token(result.tokens, text, i, j);
        }
        i = j;
    }
    return result;
}

std::set<std::string> token_set(std::span<const Token> tokens) {
    std::set<std::string> out;
    for (const auto& t : tokens) {
        bool content = false;
        for (char32_t cp : utf8::decode(t.text)) {
            if (!utf8::is_punct(cp) && !utf8::is_space(cp)) {
                content = true;
                break;
            }
        }
        if (content) out.insert(t.text);
    }
    return out;
}

}  // namespace tcmrag
