#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tcmrag {

/// One benchmark question: a case plus the option lists the model must
/// choose from and the gold selections.
struct TaskItem {
    std::string item_id;
    std::string case_text;
    std::vector<std::string> pathogenesis_options;
    std::vector<std::string> syndrome_options;
    std::vector<std::string> gold_pathogenesis;
    std::vector<std::string> gold_syndromes;

    bool operator==(const TaskItem&) const = default;
};

/// Throws ParseError naming the item when an invariant fails: fewer than
/// two options, duplicate options, empty or out-of-option gold labels.
void validate_task(const TaskItem& item);

std::vector<TaskItem> read_tasks(std::istream& in);
std::vector<TaskItem> load_tasks(const std::filesystem::path& path);
std::string task_to_json_line(const TaskItem& item);

}  // namespace tcmrag
