#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcmrag/corpus.hpp"
#include "tcmrag/prompt.hpp"
#include "tcmrag/transport.hpp"

namespace tcmrag {

struct ChatMessage {
    std::string role;  ///< "system", "user" or "assistant"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct GenerationParams {
    double temperature = 0.0;
    int max_tokens = 1024;
    std::vector<std::string> stop;
};

struct ChatResponse {
    std::string text;
    std::string finish_reason;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;

    virtual ChatResponse chat(std::span<const ChatMessage> messages, const GenerationParams& params) = 0;
    virtual std::string name() const = 0;
};

/// Chat-completions over HTTP.
class HttpChatProvider final : public ChatProvider {
public:
    explicit HttpChatProvider(HttpEndpoint endpoint, RetryPolicy policy = {}, Sleeper sleeper = {});

    ChatResponse chat(std::span<const ChatMessage> messages, const GenerationParams& params) override;
    std::string name() const override { return "http:" + client_.endpoint().model; }
    const ProviderMetrics& metrics() const noexcept { return client_.metrics(); }

private:
    JsonHttpClient client_;
};

/// Canonical serialization hashed by the mock provider: compact JSON array
/// of {"role","content"} objects.
std::string serialize_messages(std::span<const ChatMessage> messages);
std::string messages_digest(std::span<const ChatMessage> messages);

/// Offline provider answering from a file. Lookup order: exact SHA-256 of
/// the serialized messages, then the first rule whose substrings all occur
/// in the message contents, then the default response.
///
/// File format: either a flat object {"<sha256>": "<response>", ...} or
/// {"responses": {...}, "rules": [{"contains": [...], "response": "..."}],
/// "default": "..."}.
class MockChatProvider final : public ChatProvider {
public:
    struct Rule {
        std::vector<std::string> contains;
        std::string response;
    };

    MockChatProvider() = default;
    MockChatProvider(MockChatProvider&& other) noexcept
        : responses_(std::move(other.responses_)),
          rules_(std::move(other.rules_)),
          default_(std::move(other.default_)),
          requests_(other.requests_.load()) {}
    static MockChatProvider parse(std::string_view json_text);
    static MockChatProvider load(const std::filesystem::path& path);

    void add_response(std::string digest, std::string response);
    void add_rule(Rule rule);
    void set_default(std::string response) { default_ = std::move(response); }

    ChatResponse chat(std::span<const ChatMessage> messages, const GenerationParams& params) override;
    std::string name() const override { return "mock"; }
    std::uint64_t requests() const noexcept { return requests_.load(); }

    std::string to_json() const;

private:
    std::map<std::string, std::string> responses_;
    std::vector<Rule> rules_;
    std::optional<std::string> default_;
    std::atomic<std::uint64_t> requests_{0};
};

struct Completion {
    std::string text;
    std::vector<std::string> warnings;
};

/// Validates the message list and surfaces truncated responses as warnings.
Completion complete(ChatProvider& provider, std::span<const ChatMessage> messages, const GenerationParams& params);

/// Asks the model to split a blob of concatenated cases into a JSON array
/// of case strings. One repair retry for a non-array reply; the pieces must
/// account for at least `min_coverage` of the blob's non-whitespace
/// characters.
std::vector<std::string> split_cases(ChatProvider& provider, std::string_view blob, const GenerationParams& params = {},
                                     double min_coverage = 0.8);

/// Share of `blob`'s non-whitespace characters (as a multiset) found in
/// the concatenated pieces.
double split_coverage(std::string_view blob, std::span<const std::string> pieces);

/// Asks the model for the structured fields of one raw case. The result
/// has an empty case_id. One repair retry on a schema failure.
ClinicalCase extract_fields(ChatProvider& provider, std::string_view raw_case, const GenerationParams& params = {});

struct GenerationResult {
    std::string raw;  ///< text of the last attempt
    int attempts = 0;
    bool repaired = false;
    std::vector<std::string> warnings;
};

/// One completion; when it does not parse, exactly one repair request with
/// the parse error appended. The second raw text is returned either way.
GenerationResult generate_answer(ChatProvider& provider, const PromptBundle& bundle, const TaskItem& item,
                                 const GenerationParams& params = {});

}  // namespace tcmrag
