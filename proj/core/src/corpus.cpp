#include "tcmrag/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"
#include "tcmrag/utf8.hpp"

namespace tcmrag {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(ChunkStrategy strategy) {
    switch (strategy) {
        case ChunkStrategy::kOverlapWindow:
            return "overlap_window";
        case ChunkStrategy::kTokenChunk:
            return "token_chunk";
    }
    return "unknown";
}

ChunkStrategy parse_strategy(std::string_view name) {
    if (name == "overlap_window") return ChunkStrategy::kOverlapWindow;
    if (name == "token_chunk") return ChunkStrategy::kTokenChunk;
    throw ConfigError(fmt::format("unknown chunking strategy '{}' (expected overlap_window or token_chunk)", name));
}

void validate_case(const ClinicalCase& c) {
    if (c.case_id.empty()) throw ParseError("case_id must be non-empty");
    if (c.clinical_info.empty()) throw ParseError(fmt::format("case {}: clinical_info must be non-empty", c.case_id));
    for (const auto& s : c.syndromes) {
        if (s.empty()) throw ParseError(fmt::format("case {}: empty syndrome string", c.case_id));
    }
}

namespace {

const std::set<std::string, std::less<>> kRequiredCaseKeys = {"case_id", "patient_background", "clinical_info",
                                                              "pathogenesis", "syndromes"};
const std::set<std::string, std::less<>> kOptionalCaseKeys = {"doctor_notes", "source", "raw_text"};

std::string string_field(const json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) return {};
    if (!it->is_string()) throw ParseError(fmt::format("'{}' must be a string", key), line);
    return it->get<std::string>();
}

ClinicalCase case_from_json(const json& obj, std::size_t line) {
    if (!obj.is_object()) throw ParseError("record is not a JSON object", line);
    for (const auto& [key, _] : obj.items()) {
        if (!kRequiredCaseKeys.contains(key) && !kOptionalCaseKeys.contains(key)) {
            throw ParseError(fmt::format("unknown key '{}'", key), line);
        }
    }
    for (const auto& key : kRequiredCaseKeys) {
        if (!obj.contains(key)) throw ParseError(fmt::format("missing key '{}'", key), line);
    }
    ClinicalCase c;
    c.case_id = string_field(obj, "case_id", line);
    c.patient_background = string_field(obj, "patient_background", line);
    c.clinical_info = string_field(obj, "clinical_info", line);
    c.pathogenesis = string_field(obj, "pathogenesis", line);
    c.doctor_notes = string_field(obj, "doctor_notes", line);
    c.source = string_field(obj, "source", line);
    c.raw_text = string_field(obj, "raw_text", line);
    const auto& syn = obj.at("syndromes");
    if (!syn.is_array()) throw ParseError("'syndromes' must be an array of strings", line);
    for (const auto& s : syn) {
        if (!s.is_string()) throw ParseError("'syndromes' must be an array of strings", line);
        c.syndromes.push_back(s.get<std::string>());
    }
    try {
        validate_case(c);
    } catch (const ParseError& e) {
        throw ParseError(e.what(), line);
    }
    return c;
}

std::string dump(const ordered_json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

bool is_sentence_final(std::string_view token) {
    return token == "。" || token == "！" || token == "？" || token == "；";
}

}  // namespace

std::vector<ClinicalCase> read_corpus(std::istream& in) {
    std::vector<ClinicalCase> cases;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(fmt::format("malformed JSON: {}", e.what()), lineno);
        }
        auto c = case_from_json(obj, lineno);
        if (!seen.insert(c.case_id).second) {
            throw ParseError(fmt::format("duplicate case_id '{}'", c.case_id), lineno);
        }
        cases.push_back(std::move(c));
    }
    return cases;
}

std::vector<ClinicalCase> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open corpus file {}", path.string()));
    try {
        return read_corpus(in);
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.line());
    }
}

std::string case_to_json_line(const ClinicalCase& c) {
    ordered_json j;
    j["case_id"] = c.case_id;
    j["patient_background"] = c.patient_background;
    j["clinical_info"] = c.clinical_info;
    j["pathogenesis"] = c.pathogenesis;
    j["syndromes"] = c.syndromes;
    j["doctor_notes"] = c.doctor_notes;
    j["source"] = c.source;
    j["raw_text"] = c.raw_text;
    return dump(j);
}

void write_corpus(std::ostream& out, std::span<const ClinicalCase> cases) {
    for (const auto& c : cases) out << case_to_json_line(c) << '\n';
}

std::string normalize_text(std::string_view raw) {
    const auto cps = utf8::decode(raw);
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char32_t cp : cps) {
        if (cp >= 0xFF01 && cp <= 0xFF5E) cp -= 0xFEE0;
        if (utf8::is_space(cp)) {
            pending_space = true;
            continue;
        }
        if (utf8::is_control(cp) || cp == 0xFEFF || cp == 0x200B) continue;
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        utf8::append(out, cp);
    }
    if (pending_space) out.push_back(' ');
    return out;
}

std::string case_document(const ClinicalCase& c) {
    std::string doc;
    auto add = [&doc](std::string_view label, std::string_view value) {
        if (value.empty()) return;
        if (!doc.empty()) doc += '\n';
        doc += label;
        doc += value;
    };
    add("患者背景：", c.patient_background);
    add("临床信息：", c.clinical_info);
    add("病机：", c.pathogenesis);
    std::string syndromes;
    for (const auto& s : c.syndromes) {
        if (!syndromes.empty()) syndromes += "、";
        syndromes += s;
    }
    add("证候：", syndromes);
    add("按语：", c.doctor_notes);
    return doc;
}

namespace {

Chunk make_chunk(std::string_view case_id, std::size_t ordinal, std::u32string_view cps, CharSpan span,
                 ChunkStrategy strategy, std::size_t token_count) {
    Chunk chunk;
    chunk.chunk_id = fmt::format("{}#{}", case_id, ordinal);
    chunk.case_id = std::string(case_id);
    chunk.text = utf8::encode(cps.substr(span.start, span.size()));
    chunk.span = span;
    chunk.strategy = strategy;
    chunk.token_count = token_count;
    return chunk;
}

}  // namespace

std::vector<Chunk> chunk_overlap(std::string_view case_id, std::string_view text, std::size_t window,
                                 std::size_t overlap) {
    if (window == 0 || overlap >= window) {
        throw ConfigError(fmt::format("overlap window requires 0 <= overlap < window (got window={}, overlap={})",
                                      window, overlap));
    }
    const auto cps = utf8::decode(text);
    const std::size_t len = cps.size();
    const std::size_t stride = window - overlap;
    std::vector<Chunk> chunks;
    for (std::size_t start = 0; start < len; start += stride) {
        const std::size_t end = std::min(start + window, len);
        chunks.push_back(make_chunk(case_id, chunks.size(), cps, {start, end}, ChunkStrategy::kOverlapWindow, 0));
        if (end == len) break;
    }
    return chunks;
}

std::vector<Chunk> chunk_by_tokens(std::string_view case_id, std::string_view text, std::span<const Token> tokens,
                                   std::size_t max_tokens, std::size_t overlap_tokens, std::size_t snap_lookback) {
    if (max_tokens == 0 || overlap_tokens >= max_tokens) {
        throw ConfigError(fmt::format("token chunking requires 0 <= overlap_tokens < max_tokens (got {}, {})",
                                      max_tokens, overlap_tokens));
    }
    const auto cps = utf8::decode(text);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        if (t.span.start != pos || t.span.end <= t.span.start || t.span.end > cps.size() ||
            utf8::encode(std::u32string_view(cps).substr(t.span.start, t.span.size())) != t.text) {
            throw Error(fmt::format("token {} ('{}') is inconsistent with the chunked text", i, t.text));
        }
        pos = t.span.end;
    }
    if (pos != cps.size()) throw Error("tokens do not cover the chunked text");

    const std::size_t n = tokens.size();
    std::vector<Chunk> chunks;
    std::size_t start = 0;
    while (start < n) {
        std::size_t end = std::min(start + max_tokens, n);
        if (end < n) {
            const std::size_t floor = end > snap_lookback ? std::max(start, end - snap_lookback) : start;
            for (std::size_t p = end; p-- > floor;) {
                if (is_sentence_final(tokens[p].text)) {
                    if (p + 1 > start + overlap_tokens) end = p + 1;
                    break;
                }
            }
        }
        const CharSpan span{tokens[start].span.start, tokens[end - 1].span.end};
        chunks.push_back(make_chunk(case_id, chunks.size(), cps, span, ChunkStrategy::kTokenChunk, end - start));
        if (end == n) break;
        start = end - overlap_tokens;
    }
    return chunks;
}

std::vector<Chunk> read_chunks(std::istream& in) {
    std::vector<Chunk> chunks;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(fmt::format("malformed JSON: {}", e.what()), lineno);
        }
        try {
            Chunk c;
            c.chunk_id = obj.at("chunk_id").get<std::string>();
            c.case_id = obj.at("case_id").get<std::string>();
            c.text = obj.at("text").get<std::string>();
            c.span = {obj.at("start").get<std::size_t>(), obj.at("end").get<std::size_t>()};
            c.strategy = parse_strategy(obj.at("strategy").get<std::string>());
            c.token_count = obj.value("token_count", std::size_t{0});
            if (c.text.empty() || c.span.end <= c.span.start || utf8::length(c.text) != c.span.size()) {
                throw ParseError("chunk text does not match its span", lineno);
            }
            if (!seen.insert(c.chunk_id).second) {
                throw ParseError(fmt::format("duplicate chunk_id '{}'", c.chunk_id), lineno);
            }
            chunks.push_back(std::move(c));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("bad chunk record: {}", e.what()), lineno);
        } catch (const ConfigError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return chunks;
}

void write_chunks(std::ostream& out, std::span<const Chunk> chunks) {
    for (const auto& c : chunks) {
        ordered_json j;
        j["chunk_id"] = c.chunk_id;
        j["case_id"] = c.case_id;
        j["text"] = c.text;
        j["start"] = c.span.start;
        j["end"] = c.span.end;
        j["strategy"] = std::string(to_string(c.strategy));
        j["token_count"] = c.token_count;
        out << dump(j) << '\n';
    }
}

std::string parent_case_id(std::string_view chunk_id) {
    const auto pos = chunk_id.rfind('#');
    return std::string(pos == std::string_view::npos ? chunk_id : chunk_id.substr(0, pos));
}

}  // namespace tcmrag
