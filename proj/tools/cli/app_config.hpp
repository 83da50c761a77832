#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <tcmrag/corpus.hpp>
#include <tcmrag/llm.hpp>
#include <tcmrag/retrieve.hpp>
#include <tcmrag/transport.hpp>

namespace tcmrag::cli {

/// Flat `key = value` settings; `#` starts a comment. Unknown keys are
/// rejected so typos surface as configuration errors.
class KeyValueFile {
public:
    static KeyValueFile parse(std::string_view text, std::string_view origin = "<config>");
    static KeyValueFile load(const std::filesystem::path& path);

    const std::map<std::string, std::string, std::less<>>& values() const noexcept { return values_; }
    std::optional<std::string> get(std::string_view key) const;

private:
    std::map<std::string, std::string, std::less<>> values_;
};

struct ProviderSettings {
    std::string url;
    std::string model;
    int parallelism = 4;
    int timeout_ms = 60'000;

    bool configured() const { return !url.empty(); }
    HttpEndpoint endpoint(std::string api_key_env) const;
};

struct AppConfig {
    std::filesystem::path base_dir;  ///< relative paths resolve against this
    std::filesystem::path lexicon;
    std::filesystem::path hmm;       ///< empty disables the HMM pass
    std::filesystem::path templates;
    std::filesystem::path chat_mock;
    ChunkingParams chunking;
    std::size_t stub_dim = 256;
    ProviderSettings embed;
    ProviderSettings rerank;
    ProviderSettings chat;
    RetrievalConfig retrieval;
    GenerationParams generation;
    std::size_t prompt_budget = 6000;
    int parallelism = 4;

    /// Defaults point at the data directory the tool was built with.
    static AppConfig defaults();
    /// Applies a config file over the defaults. Throws ConfigError for
    /// unknown keys or values outside their ranges.
    void apply(const KeyValueFile& file, const std::filesystem::path& file_dir);
    /// Checks that referenced files exist and numbers are in range.
    void validate() const;
};

}  // namespace tcmrag::cli
