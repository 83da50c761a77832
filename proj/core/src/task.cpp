#include "tcmrag/task.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"

namespace tcmrag {

using nlohmann::json;

namespace {

void check_options(const TaskItem& item, const std::vector<std::string>& options,
                   const std::vector<std::string>& gold, std::string_view kind) {
    if (options.size() < 2) throw ParseError(fmt::format("item {}: needs at least two {} options", item.item_id, kind));
    std::set<std::string_view> seen;
    for (const auto& o : options) {
        if (o.empty()) throw ParseError(fmt::format("item {}: empty {} option", item.item_id, kind));
        if (!seen.insert(o).second) {
            throw ParseError(fmt::format("item {}: duplicate {} option '{}'", item.item_id, kind, o));
        }
    }
    if (gold.empty()) throw ParseError(fmt::format("item {}: gold {} list is empty", item.item_id, kind));
    for (const auto& g : gold) {
        if (!seen.contains(g)) {
            throw ParseError(fmt::format("item {}: gold {} '{}' is not among the options", item.item_id, kind, g));
        }
    }
}

std::vector<std::string> string_list(const json& obj, const char* key, std::size_t line) {
    const auto& v = obj.at(key);
    if (!v.is_array()) throw ParseError(fmt::format("'{}' must be an array of strings", key), line);
    std::vector<std::string> out;
    for (const auto& s : v) {
        if (!s.is_string()) throw ParseError(fmt::format("'{}' must be an array of strings", key), line);
        out.push_back(s.get<std::string>());
    }
    return out;
}

}  // namespace

void validate_task(const TaskItem& item) {
    if (item.item_id.empty()) throw ParseError("item_id must be non-empty");
    if (item.case_text.empty()) throw ParseError(fmt::format("item {}: case_text is empty", item.item_id));
    check_options(item, item.pathogenesis_options, item.gold_pathogenesis, "pathogenesis");
    check_options(item, item.syndrome_options, item.gold_syndromes, "syndrome");
}

std::vector<TaskItem> read_tasks(std::istream& in) {
    static const char* kKeys[] = {"item_id",         "case_text",         "pathogenesis_options",
                                  "syndrome_options", "gold_pathogenesis", "gold_syndromes"};
    std::vector<TaskItem> items;
    std::unordered_set<std::string> ids;
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
        if (!obj.is_object()) throw ParseError("task record is not a JSON object", lineno);
        for (const char* key : kKeys) {
            if (!obj.contains(key)) throw ParseError(fmt::format("missing key '{}'", key), lineno);
        }
        if (!obj.at("item_id").is_string() || !obj.at("case_text").is_string()) {
            throw ParseError("'item_id' and 'case_text' must be strings", lineno);
        }
        TaskItem item;
        item.item_id = obj.at("item_id").get<std::string>();
        item.case_text = obj.at("case_text").get<std::string>();
        item.pathogenesis_options = string_list(obj, "pathogenesis_options", lineno);
        item.syndrome_options = string_list(obj, "syndrome_options", lineno);
        item.gold_pathogenesis = string_list(obj, "gold_pathogenesis", lineno);
        item.gold_syndromes = string_list(obj, "gold_syndromes", lineno);
        try {
            validate_task(item);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), lineno);
        }
        if (!ids.insert(item.item_id).second) {
            throw ParseError(fmt::format("duplicate item_id '{}'", item.item_id), lineno);
        }
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<TaskItem> load_tasks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open task file {}", path.string()));
    try {
        return read_tasks(in);
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()), e.line());
    }
}

std::string task_to_json_line(const TaskItem& item) {
    nlohmann::ordered_json j;
    j["item_id"] = item.item_id;
    j["case_text"] = item.case_text;
    j["pathogenesis_options"] = item.pathogenesis_options;
    j["syndrome_options"] = item.syndrome_options;
    j["gold_pathogenesis"] = item.gold_pathogenesis;
    j["gold_syndromes"] = item.gold_syndromes;
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace tcmrag
