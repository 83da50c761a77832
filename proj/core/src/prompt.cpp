#include "tcmrag/prompt.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"
#include "tcmrag/utf8.hpp"

namespace tcmrag {

using nlohmann::json;

std::string_view to_string(PromptVariant v) {
    switch (v) {
        case PromptVariant::kBase:
            return "base";
        case PromptVariant::kCot:
            return "cot";
        case PromptVariant::kRag:
            return "rag";
        case PromptVariant::kRagCot:
            return "rag_cot";
    }
    return "unknown";
}

PromptVariant parse_variant(std::string_view name) {
    for (auto v : kPromptVariants) {
        if (to_string(v) == name) return v;
    }
    throw ConfigError(fmt::format("unknown prompt variant '{}'", name));
}

bool is_rag(PromptVariant v) { return v == PromptVariant::kRag || v == PromptVariant::kRagCot; }
bool is_cot(PromptVariant v) { return v == PromptVariant::kCot || v == PromptVariant::kRagCot; }

PromptVariant select_variant(bool rag, bool cot) {
    if (rag) return cot ? PromptVariant::kRagCot : PromptVariant::kRag;
    return cot ? PromptVariant::kCot : PromptVariant::kBase;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

const std::set<std::string, std::less<>> kPlaceholders = {"case", "options_pathogenesis", "options_syndromes",
                                                          "context", "demonstration"};

std::size_t occurrences(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
    PromptTemplate t;
    t.source_ = std::string(text);
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find("{{", pos);
        if (open == std::string_view::npos) {
            t.pieces_.push_back({false, std::string(text.substr(pos))});
            break;
        }
        if (open > pos) t.pieces_.push_back({false, std::string(text.substr(pos, open - pos))});
        const auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos) throw ConfigError("template has an unterminated '{{'");
        const auto name = text.substr(open + 2, close - open - 2);
        if (!kPlaceholders.contains(name)) throw ConfigError(fmt::format("unknown template placeholder '{{{{{}}}}}'", name));
        t.pieces_.push_back({true, std::string(name)});
        pos = close + 2;
    }
    return t;
}

std::string PromptTemplate::render(const std::map<std::string, std::string, std::less<>>& values) const {
    std::string out;
    for (const auto& piece : pieces_) {
        if (!piece.placeholder) {
            out += piece.text;
            continue;
        }
        auto it = values.find(piece.text);
        if (it != values.end()) out += it->second;
    }
    return out;
}

std::size_t PromptTemplate::count(std::string_view placeholder) const {
    std::size_t n = 0;
    for (const auto& piece : pieces_) n += piece.placeholder && piece.text == placeholder ? 1 : 0;
    return n;
}

namespace {

void validate_template(PromptVariant v, const PromptTemplate& t) {
    const auto name = to_string(v);
    for (const char* required : {"case", "options_pathogenesis", "options_syndromes"}) {
        if (t.count(required) != 1) {
            throw ConfigError(fmt::format("{} template must contain {{{{{}}}}} exactly once", name, required));
        }
    }
    for (const char* rag_only : {"context", "demonstration"}) {
        const std::size_t want = is_rag(v) ? 1 : 0;
        if (t.count(rag_only) != want) {
            throw ConfigError(fmt::format("{} template must contain {{{{{}}}}} {} time(s)", name, rag_only, want));
        }
    }
    const auto& src = t.source();
    if (occurrences(src, kOutputFormatMarker) != 1) {
        throw ConfigError(fmt::format("{} template must contain '{}' exactly once", name, kOutputFormatMarker));
    }
    const auto format_pos = src.find(kOutputFormatMarker);
    std::size_t last = 0;
    for (auto header : kCotStepHeaders) {
        const auto n = occurrences(src, header);
        if (!is_cot(v)) {
            if (n != 0) throw ConfigError(fmt::format("{} template must not contain '{}'", name, header));
            continue;
        }
        const auto pos = src.find(header);
        if (n != 1 || pos < last || pos > format_pos) {
            throw ConfigError(fmt::format("{} template must contain '{}' once, in order, before '{}'", name, header,
                                          kOutputFormatMarker));
        }
        last = pos;
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open template {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

PromptTemplates PromptTemplates::from_strings(std::string system_text,
                                              const std::map<PromptVariant, std::string>& user) {
    PromptTemplates out;
    if (system_text.find("{{") != std::string::npos) throw ConfigError("system prompt cannot contain placeholders");
    out.system_ = std::move(system_text);
    for (auto v : kPromptVariants) {
        auto it = user.find(v);
        if (it == user.end()) throw ConfigError(fmt::format("missing {} template", to_string(v)));
        auto t = PromptTemplate::parse(it->second);
        validate_template(v, t);
        out.user_.emplace(v, std::move(t));
    }
    return out;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
    std::map<PromptVariant, std::string> user;
    for (auto v : kPromptVariants) {
        const auto path = dir / fmt::format("{}.txt", to_string(v));
        try {
            user.emplace(v, read_file(path));
            PromptTemplate::parse(user.at(v));
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
        }
    }
    return from_strings(read_file(dir / "system.txt"), user);
}

// ---------------------------------------------------------------------------
// Prompt assembly

std::string render_demonstration(const ClinicalCase& c) {
    std::string out;
    auto line = [&out](std::string_view label, std::string_view value) {
        if (value.empty()) return;
        out += label;
        out += value;
        out += '\n';
    };
    line("患者背景：", c.patient_background);
    line("临床信息：", c.clinical_info);
    line("病机分析：", c.pathogenesis);
    std::string syndromes;
    for (const auto& s : c.syndromes) {
        if (!syndromes.empty()) syndromes += "、";
        syndromes += s;
    }
    line("辨证结论：", syndromes);
    line("医案按语：", c.doctor_notes);
    if (!out.empty()) out.pop_back();
    return out;
}

namespace {

std::string numbered(const std::vector<std::string>& options) {
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i > 0) out += '\n';
        out += fmt::format("{}. {}", i + 1, options[i]);
    }
    return out;
}

std::string render_context(std::span<const ContextBlock> blocks) {
    if (blocks.empty()) return {};
    std::string out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        out += fmt::format("[CONTEXT {} | {}]\n{}\n", i + 1, blocks[i].chunk_id, blocks[i].text);
    }
    out += '\n';
    return out;
}

std::string render_demo_section(const std::optional<std::string>& demo, const std::string& case_id) {
    if (!demo) return {};
    return fmt::format("[DEMONSTRATION | {}]\n{}\n\n", case_id, *demo);
}

}  // namespace

PromptBundle build_prompt(const PromptTemplates& templates, const TaskItem& item, PromptVariant variant,
                          std::span<const ContextBlock> context, const std::optional<ClinicalCase>& demonstration,
                          std::size_t budget) {
    if (item.pathogenesis_options.empty() || item.syndrome_options.empty()) {
        throw ConfigError(fmt::format("item {}: option lists must be non-empty", item.item_id));
    }
    PromptBundle bundle;
    bundle.variant = variant;
    bundle.system_text = templates.system_text();
    std::string demo_case_id;
    if (is_rag(variant)) {
        if (context.empty() && !demonstration) {
            throw ConfigError(fmt::format("{} prompt needs context blocks or a demonstration", to_string(variant)));
        }
        bundle.context_blocks.assign(context.begin(), context.end());
        if (demonstration) {
            bundle.demonstration = render_demonstration(*demonstration);
            demo_case_id = demonstration->case_id;
        }
    }

    std::map<std::string, std::string, std::less<>> values = {
        {"case", item.case_text},
        {"options_pathogenesis", numbered(item.pathogenesis_options)},
        {"options_syndromes", numbered(item.syndrome_options)},
    };
    const std::size_t system_len = utf8::length(bundle.system_text);
    const auto& tmpl = templates.user(variant);
    for (;;) {
        values["context"] = render_context(bundle.context_blocks);
        values["demonstration"] = render_demo_section(bundle.demonstration, demo_case_id);
        bundle.user_text = tmpl.render(values);
        const std::size_t total = system_len + utf8::length(bundle.user_text);
        if (total <= budget) break;
        if (bundle.demonstration) {
            bundle.demonstration.reset();
            bundle.notes.push_back(fmt::format("demonstration {} dropped to fit the prompt budget", demo_case_id));
        } else if (!bundle.context_blocks.empty()) {
            bundle.notes.push_back(fmt::format("context block {} dropped to fit the prompt budget",
                                               bundle.context_blocks.back().chunk_id));
            bundle.context_blocks.pop_back();
        } else {
            throw Error(fmt::format("item {}: prompt needs {} characters but the budget is {}", item.item_id, total,
                                    budget));
        }
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Answers

std::optional<std::string> extract_json(std::string_view text, char open) {
    for (auto start = text.find(open); start != std::string_view::npos; start = text.find(open, start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t end = std::string_view::npos;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{' || c == '[') {
                ++depth;
            } else if (c == '}' || c == ']') {
                if (--depth == 0) {
                    end = i;
                    break;
                }
            }
        }
        if (end == std::string_view::npos) continue;
        const auto candidate = text.substr(start, end - start + 1);
        try {
            auto parsed = json::parse(candidate);
            if ((open == '{' && parsed.is_object()) || (open == '[' && parsed.is_array())) {
                return std::string(candidate);
            }
        } catch (const json::parse_error&) {
        }
    }
    return std::nullopt;
}

namespace {

std::vector<std::string> string_array(const json& obj, const char* key, std::string_view raw) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw AnswerError(AnswerError::Kind::kSchema, fmt::format("answer is missing required key '{}'", key),
                          std::string(raw));
    }
    if (!it->is_array()) {
        throw AnswerError(AnswerError::Kind::kSchema, fmt::format("answer key '{}' must be an array of strings", key),
                          std::string(raw));
    }
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw AnswerError(AnswerError::Kind::kSchema,
                              fmt::format("answer key '{}' must be an array of strings", key), std::string(raw));
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::vector<std::string> clean_list(const std::vector<std::string>& values, const std::vector<std::string>* options,
                                    std::string_view key, std::vector<std::string>& warnings) {
    std::set<std::string_view> allowed;
    if (options != nullptr) allowed.insert(options->begin(), options->end());
    std::set<std::string> seen;
    std::vector<std::string> out;
    for (const auto& v : values) {
        if (v.empty()) {
            warnings.push_back(fmt::format("{}: empty string dropped", key));
            continue;
        }
        if (options != nullptr && !allowed.contains(v)) {
            warnings.push_back(fmt::format("{}: '{}' is not an option and was dropped", key, v));
            continue;
        }
        if (seen.insert(v).second) out.push_back(v);
    }
    return out;
}

}  // namespace

ParsedAnswer parse_answer(std::string_view raw, const TaskItem& item) {
    const auto text = extract_json(raw, '{');
    if (!text) {
        throw AnswerError(AnswerError::Kind::kNoJson, "no JSON object found in the model output", std::string(raw));
    }
    const auto obj = json::parse(*text);
    ParsedAnswer parsed;
    const auto features = string_array(obj, "clinical_features", raw);
    const auto pathogenesis = string_array(obj, "pathogenesis", raw);
    const auto syndromes = string_array(obj, "syndromes", raw);
    auto reasoning = obj.find("reasoning");
    if (reasoning == obj.end()) {
        throw AnswerError(AnswerError::Kind::kSchema, "answer is missing required key 'reasoning'", std::string(raw));
    }
    if (!reasoning->is_string()) {
        throw AnswerError(AnswerError::Kind::kSchema, "answer key 'reasoning' must be a string", std::string(raw));
    }
    for (const auto& [key, _] : obj.items()) {
        if (key != "clinical_features" && key != "pathogenesis" && key != "syndromes" && key != "reasoning") {
            parsed.warnings.push_back(fmt::format("unexpected key '{}' ignored", key));
        }
    }
    parsed.answer.clinical_features = clean_list(features, nullptr, "clinical_features", parsed.warnings);
    parsed.answer.pathogenesis = clean_list(pathogenesis, &item.pathogenesis_options, "pathogenesis", parsed.warnings);
    parsed.answer.syndromes = clean_list(syndromes, &item.syndrome_options, "syndromes", parsed.warnings);
    parsed.answer.reasoning = reasoning->get<std::string>();
    return parsed;
}

std::string serialize_answer(const Answer& answer) {
    nlohmann::ordered_json j;
    j["clinical_features"] = answer.clinical_features;
    j["pathogenesis"] = answer.pathogenesis;
    j["syndromes"] = answer.syndromes;
    j["reasoning"] = answer.reasoning;
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace tcmrag
