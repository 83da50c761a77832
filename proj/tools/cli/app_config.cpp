#include "app_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include <tcmrag/error.hpp>

#ifndef TCMRAG_DEFAULT_DATA_DIR
#define TCMRAG_DEFAULT_DATA_DIR "data"
#endif

namespace tcmrag::cli {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, value));
    return out;
}

template <typename T>
T parse_at_least(std::string_view key, std::string_view value, T lo) {
    const T v = parse_number<T>(key, value);
    if (v < lo) throw ConfigError(fmt::format("{} must be >= {} (got {})", key, lo, value));
    return v;
}

fs::path resolve(const fs::path& base, std::string_view value) {
    fs::path p{std::string(value)};
    return p.is_absolute() || base.empty() ? p : base / p;
}

bool apply_provider(ProviderSettings& p, std::string_view field, std::string_view key, std::string_view value) {
    if (field == "url") {
        p.url = value;
    } else if (field == "model") {
        p.model = value;
    } else if (field == "parallelism") {
        p.parallelism = parse_at_least<int>(key, value, 1);
    } else if (field == "timeout_ms") {
        p.timeout_ms = parse_at_least<int>(key, value, 1);
    } else {
        return false;
    }
    return true;
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string_view origin) {
    KeyValueFile f;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
        }
        const auto key = trim(t.substr(0, eq));
        auto value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, lineno));
        if (!f.values_.emplace(std::string(key), std::string(value)).second) {
            throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", origin, lineno, key));
        }
    }
    return f;
}

KeyValueFile KeyValueFile::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

std::optional<std::string> KeyValueFile::get(std::string_view key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

HttpEndpoint ProviderSettings::endpoint(std::string api_key_env) const {
    HttpEndpoint e;
    e.url = url;
    e.model = model;
    e.api_key_env = std::move(api_key_env);
    e.parallelism = parallelism;
    e.timeout = std::chrono::milliseconds(timeout_ms);
    e.validate();
    return e;
}

AppConfig AppConfig::defaults() {
    AppConfig c;
    const fs::path data = TCMRAG_DEFAULT_DATA_DIR;
    c.lexicon = data / "lexicon.txt";
    c.hmm = data / "hmm_model.json";
    c.templates = data / "templates";
    return c;
}

void AppConfig::apply(const KeyValueFile& file, const fs::path& file_dir) {
    base_dir = file_dir;
    for (const auto& [key, value] : file.values()) {
        const std::string_view k = key;
        if (k == "lexicon") {
            lexicon = resolve(file_dir, value);
        } else if (k == "hmm") {
            hmm = value.empty() ? fs::path{} : resolve(file_dir, value);
        } else if (k == "templates") {
            templates = resolve(file_dir, value);
        } else if (k == "chat.mock") {
            chat_mock = resolve(file_dir, value);
        } else if (k == "chunk.window") {
            chunking.window = parse_at_least<std::size_t>(k, value, 1);
        } else if (k == "chunk.overlap") {
            chunking.overlap = parse_number<std::size_t>(k, value);
        } else if (k == "chunk.max_tokens") {
            chunking.max_tokens = parse_at_least<std::size_t>(k, value, 1);
        } else if (k == "chunk.overlap_tokens") {
            chunking.overlap_tokens = parse_number<std::size_t>(k, value);
        } else if (k == "chunk.snap_lookback") {
            chunking.snap_lookback = parse_number<std::size_t>(k, value);
        } else if (k == "embed.dim") {
            stub_dim = parse_at_least<std::size_t>(k, value, 8);
        } else if (k.rfind("embed.", 0) == 0 && apply_provider(embed, k.substr(6), k, value)) {
        } else if (k.rfind("rerank.", 0) == 0 && apply_provider(rerank, k.substr(7), k, value)) {
        } else if (k.rfind("chat.", 0) == 0 && apply_provider(chat, k.substr(5), k, value)) {
        } else if (k == "retrieval.n_dense") {
            retrieval.n_dense = parse_at_least<std::size_t>(k, value, 1);
        } else if (k == "retrieval.n_sparse") {
            retrieval.n_sparse = parse_at_least<std::size_t>(k, value, 1);
        } else if (k == "retrieval.top_k") {
            retrieval.top_k = parse_at_least<std::size_t>(k, value, 1);
        } else if (k == "retrieval.alpha") {
            retrieval.alpha = parse_number<double>(k, value);
        } else if (k == "generation.temperature") {
            generation.temperature = parse_number<double>(k, value);
        } else if (k == "generation.max_tokens") {
            generation.max_tokens = parse_at_least<int>(k, value, 1);
        } else if (k == "prompt.budget") {
            prompt_budget = parse_at_least<std::size_t>(k, value, 1);
        } else if (k == "parallelism") {
            parallelism = parse_at_least<int>(k, value, 1);
        } else {
            throw ConfigError(fmt::format("unknown config key '{}'", key));
        }
    }
}

void AppConfig::validate() const {
    if (!fs::is_regular_file(lexicon)) throw ConfigError(fmt::format("lexicon file {} does not exist", lexicon.string()));
    if (!hmm.empty() && !fs::is_regular_file(hmm)) {
        throw ConfigError(fmt::format("HMM model file {} does not exist", hmm.string()));
    }
    if (!fs::is_directory(templates)) {
        throw ConfigError(fmt::format("template directory {} does not exist", templates.string()));
    }
    if (!chat_mock.empty() && !fs::is_regular_file(chat_mock)) {
        throw ConfigError(fmt::format("mock chat file {} does not exist", chat_mock.string()));
    }
    if (chunking.overlap >= chunking.window) {
        throw ConfigError(fmt::format("chunk.overlap ({}) must be below chunk.window ({})", chunking.overlap,
                                      chunking.window));
    }
    if (chunking.overlap_tokens >= chunking.max_tokens) {
        throw ConfigError(fmt::format("chunk.overlap_tokens ({}) must be below chunk.max_tokens ({})",
                                      chunking.overlap_tokens, chunking.max_tokens));
    }
    if (!(generation.temperature >= 0.0 && generation.temperature <= 2.0)) {
        throw ConfigError(fmt::format("generation.temperature must be in [0, 2] (got {})", generation.temperature));
    }
    retrieval.validate();
}

}  // namespace tcmrag::cli
