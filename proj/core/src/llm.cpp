#include "tcmrag/llm.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"
#include "tcmrag/utf8.hpp"

namespace tcmrag {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string dump(const ordered_json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace

// ---------------------------------------------------------------------------
// HTTP provider

HttpChatProvider::HttpChatProvider(HttpEndpoint endpoint, RetryPolicy policy, Sleeper sleeper)
    : client_(std::move(endpoint), std::move(policy), std::move(sleeper)) {}

ChatResponse HttpChatProvider::chat(std::span<const ChatMessage> messages, const GenerationParams& params) {
    ordered_json body;
    body["model"] = client_.endpoint().model;
    body["messages"] = ordered_json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    if (!params.stop.empty()) body["stop"] = params.stop;

    const auto text = client_.post(dump(body));
    try {
        const auto doc = json::parse(text);
        const auto& choice = doc.at("choices").at(0);
        ChatResponse out;
        out.text = choice.at("message").at("content").get<std::string>();
        if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string()) {
            out.finish_reason = fr->get<std::string>();
        }
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(fmt::format("chat provider returned an unexpected body: {}", e.what()));
    }
}

// ---------------------------------------------------------------------------
// Mock provider

std::string serialize_messages(std::span<const ChatMessage> messages) {
    ordered_json arr = ordered_json::array();
    for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
    return dump(arr);
}

std::string messages_digest(std::span<const ChatMessage> messages) {
    return sha256_hex(serialize_messages(messages));
}

void MockChatProvider::add_response(std::string digest, std::string response) {
    responses_[std::move(digest)] = std::move(response);
}

void MockChatProvider::add_rule(Rule rule) { rules_.push_back(std::move(rule)); }

MockChatProvider MockChatProvider::parse(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("mock provider file: {}", e.what()));
    }
    if (!doc.is_object()) throw ParseError("mock provider file must hold a JSON object");
    MockChatProvider mock;
    const bool structured = doc.contains("responses") || doc.contains("rules") || doc.contains("default");
    try {
        if (!structured) {
            for (const auto& [digest, text] : doc.items()) mock.add_response(digest, text.get<std::string>());
            return mock;
        }
        for (const auto& [key, _] : doc.items()) {
            if (key != "responses" && key != "rules" && key != "default") {
                throw ParseError(fmt::format("mock provider file: unknown key '{}'", key));
            }
        }
        if (doc.contains("responses")) {
            for (const auto& [digest, text] : doc.at("responses").items()) {
                mock.add_response(digest, text.get<std::string>());
            }
        }
        if (doc.contains("rules")) {
            for (const auto& r : doc.at("rules")) {
                mock.add_rule({r.at("contains").get<std::vector<std::string>>(), r.at("response").get<std::string>()});
            }
        }
        if (doc.contains("default")) mock.set_default(doc.at("default").get<std::string>());
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("mock provider file: {}", e.what()));
    }
    return mock;
}

MockChatProvider MockChatProvider::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open mock provider file {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string MockChatProvider::to_json() const {
    ordered_json doc;
    doc["responses"] = ordered_json::object();
    for (const auto& [digest, text] : responses_) doc["responses"][digest] = text;
    doc["rules"] = ordered_json::array();
    for (const auto& r : rules_) doc["rules"].push_back({{"contains", r.contains}, {"response", r.response}});
    if (default_) doc["default"] = *default_;
    return doc.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

ChatResponse MockChatProvider::chat(std::span<const ChatMessage> messages, const GenerationParams&) {
    requests_.fetch_add(1);
    const auto digest = messages_digest(messages);
    if (auto it = responses_.find(digest); it != responses_.end()) return {it->second, "stop"};
    std::string joined;
    for (const auto& m : messages) {
        joined += m.content;
        joined += '\n';
    }
    for (const auto& rule : rules_) {
        bool all = true;
        for (const auto& needle : rule.contains) {
            if (joined.find(needle) == std::string::npos) {
                all = false;
                break;
            }
        }
        if (all) return {rule.response, "stop"};
    }
    if (default_) return {*default_, "stop"};
    throw ProviderError(fmt::format("mock provider has no response for digest {}", digest));
}

// ---------------------------------------------------------------------------
// Pipeline calls

Completion complete(ChatProvider& provider, std::span<const ChatMessage> messages, const GenerationParams& params) {
    if (messages.empty()) throw ConfigError("chat request needs at least one message");
    if (messages.front().role != "system" && messages.front().role != "user") {
        throw ConfigError("the first chat message must come from the system or the user");
    }
    if (params.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    auto response = provider.chat(messages, params);
    Completion out;
    out.text = std::move(response.text);
    if (response.finish_reason == "length") {
        out.warnings.push_back(fmt::format("{} response was truncated (finish_reason=length)", provider.name()));
    }
    return out;
}

namespace {

constexpr std::string_view kCleanSystem = "你是中医医案整理助手，负责把网络上收集的原始医案整理成干净、结构化的数据。";

constexpr std::string_view kSplitInstruction =
    "下面的原始文本可能把多个中医医案连在了一起，并夹杂广告、网页导航、无关符号。"
    "请把它拆分成独立的医案，去掉无关内容，医案正文保持原文措辞，不要改写或补充。\n"
    "只输出一个JSON字符串数组，每个元素是一个完整医案，例如 [\"医案一……\", \"医案二……\"]。\n\n"
    "原始文本：\n";

constexpr std::string_view kSplitRepair =
    "\n\n注意：上一次的回复不是合法的JSON字符串数组。请只输出JSON数组本身，不要附加任何说明。";

constexpr std::string_view kExtractInstruction =
    "请从下面这则中医医案中提取信息，只输出一个JSON对象，键为：\n"
    "patient_background（患者基本情况，字符串）、clinical_info（主诉、症状、舌象、脉象，字符串，不可为空）、"
    "pathogenesis（病机分析，字符串）、syndromes（证候名称，字符串数组）、doctor_notes（医家按语，字符串）。\n"
    "删除与诊疗无关的信息和符号；原文没有的字段填空字符串或空数组。\n\n医案：\n";

constexpr std::string_view kAnswerRepair =
    "\n\n注意：上一次的回复无法解析（{}）。请严格按照输出格式，只输出一个包含 clinical_features、pathogenesis、"
    "syndromes、reasoning 四个键的JSON对象。";

std::vector<ChatMessage> clean_messages(std::string_view instruction, std::string_view body,
                                        std::string_view repair = {}) {
    std::string user(instruction);
    user += body;
    user += repair;
    return {{"system", std::string(kCleanSystem)}, {"user", std::move(user)}};
}

std::optional<std::vector<std::string>> parse_case_array(const std::string& raw, std::string& error) {
    const auto text = extract_json(raw, '[');
    if (!text) {
        error = "reply holds no JSON array";
        return std::nullopt;
    }
    const auto arr = json::parse(*text);
    std::vector<std::string> out;
    for (const auto& v : arr) {
        if (!v.is_string()) {
            error = "array elements must be strings";
            return std::nullopt;
        }
        auto s = normalize_text(v.get<std::string>());
        if (s.find_first_not_of(' ') == std::string::npos) {
            error = "array contains an empty case";
            return std::nullopt;
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) {
        error = "array is empty";
        return std::nullopt;
    }
    return out;
}

std::string string_or_empty(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return {};
    if (!it->is_string()) throw AnswerError(AnswerError::Kind::kSchema, fmt::format("'{}' must be a string", key), "");
    return normalize_text(it->get<std::string>());
}

ClinicalCase parse_case_fields(const std::string& raw) {
    const auto text = extract_json(raw, '{');
    if (!text) throw AnswerError(AnswerError::Kind::kNoJson, "reply holds no JSON object", raw);
    const auto obj = json::parse(*text);
    ClinicalCase c;
    try {
        c.patient_background = string_or_empty(obj, "patient_background");
        c.clinical_info = string_or_empty(obj, "clinical_info");
        c.pathogenesis = string_or_empty(obj, "pathogenesis");
        c.doctor_notes = string_or_empty(obj, "doctor_notes");
    } catch (const AnswerError& e) {
        throw AnswerError(AnswerError::Kind::kSchema, e.what(), raw);
    }
    if (auto it = obj.find("syndromes"); it != obj.end() && !it->is_null()) {
        if (!it->is_array()) {
            throw AnswerError(AnswerError::Kind::kSchema, "'syndromes' must be an array of strings", raw);
        }
        for (const auto& s : *it) {
            if (!s.is_string()) {
                throw AnswerError(AnswerError::Kind::kSchema, "'syndromes' must be an array of strings", raw);
            }
            auto name = normalize_text(s.get<std::string>());
            if (!name.empty() && name != " ") c.syndromes.push_back(std::move(name));
        }
    }
    if (c.clinical_info.find_first_not_of(' ') == std::string::npos) {
        throw AnswerError(AnswerError::Kind::kSchema, "'clinical_info' is missing or empty", raw);
    }
    return c;
}

}  // namespace

double split_coverage(std::string_view blob, std::span<const std::string> pieces) {
    std::unordered_map<char32_t, std::int64_t> want;
    std::int64_t total = 0;
    for (char32_t cp : utf8::decode(normalize_text(blob))) {
        if (cp == U' ') continue;
        ++want[cp];
        ++total;
    }
    if (total == 0) return 1.0;
    std::int64_t covered = 0;
    for (const auto& piece : pieces) {
        for (char32_t cp : utf8::decode(normalize_text(piece))) {
            auto it = want.find(cp);
            if (it != want.end() && it->second > 0) {
                --it->second;
                ++covered;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(total);
}

std::vector<std::string> split_cases(ChatProvider& provider, std::string_view blob, const GenerationParams& params,
                                     double min_coverage) {
    if (blob.find_first_not_of(" \t\r\n") == std::string_view::npos) throw Error("cannot split an empty blob");
    std::string error;
    auto reply = complete(provider, clean_messages(kSplitInstruction, blob), params);
    auto cases = parse_case_array(reply.text, error);
    if (!cases) {
        reply = complete(provider, clean_messages(kSplitInstruction, blob, kSplitRepair), params);
        cases = parse_case_array(reply.text, error);
        if (!cases) {
            throw AnswerError(AnswerError::Kind::kSchema,
                              fmt::format("case splitting failed after a repair retry: {}", error), reply.text);
        }
    }
    const double coverage = split_coverage(blob, *cases);
    if (coverage < min_coverage) {
        throw Error(fmt::format("split cases cover only {:.1f}% of the source text (minimum {:.0f}%)",
                                coverage * 100.0, min_coverage * 100.0));
    }
    return *cases;
}

ClinicalCase extract_fields(ChatProvider& provider, std::string_view raw_case, const GenerationParams& params) {
    if (raw_case.find_first_not_of(" \t\r\n") == std::string_view::npos) throw Error("cannot extract an empty case");
    auto reply = complete(provider, clean_messages(kExtractInstruction, raw_case), params);
    try {
        return parse_case_fields(reply.text);
    } catch (const AnswerError& first) {
        const auto repair = fmt::format("\n\n注意：上一次的回复不符合要求（{}）。请只输出要求的JSON对象。", first.what());
        reply = complete(provider, clean_messages(kExtractInstruction, raw_case, repair), params);
        return parse_case_fields(reply.text);
    }
}

GenerationResult generate_answer(ChatProvider& provider, const PromptBundle& bundle, const TaskItem& item,
                                 const GenerationParams& params) {
    std::vector<ChatMessage> messages = {{"system", bundle.system_text}, {"user", bundle.user_text}};
    GenerationResult result;
    auto reply = complete(provider, messages, params);
    result.attempts = 1;
    result.warnings = reply.warnings;
    try {
        parse_answer(reply.text, item);
        result.raw = std::move(reply.text);
        return result;
    } catch (const AnswerError& e) {
        messages.back().content += fmt::format(fmt::runtime(kAnswerRepair), e.what());
    }
    reply = complete(provider, messages, params);
    result.attempts = 2;
    result.repaired = true;
    result.warnings.insert(result.warnings.end(), reply.warnings.begin(), reply.warnings.end());
    result.raw = std::move(reply.text);
    return result;
}

}  // namespace tcmrag
