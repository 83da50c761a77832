#include "tcmrag/transport.hpp"

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <openssl/evp.h>

namespace tcmrag {

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/\s]+)(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError(fmt::format("malformed provider URL '{}'", url));
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

}  // namespace

void HttpEndpoint::validate() const {
    if (url.empty()) throw ConfigError("provider URL is not configured");
    split_url(url);
    if (parallelism < 1) throw ConfigError("provider parallelism must be >= 1");
    if (timeout.count() <= 0) throw ConfigError("provider timeout must be > 0");
}

// Counting gate limiting concurrent requests per provider handle.
struct JsonHttpClient::Gate {
    explicit Gate(int limit) : free(limit) {}

    void acquire() {
        std::unique_lock lock(mu);
        cv.wait(lock, [this] { return free > 0; });
        --free;
    }
    void release() {
        {
            std::lock_guard lock(mu);
            ++free;
        }
        cv.notify_one();
    }

    std::mutex mu;
    std::condition_variable cv;
    int free;
};

JsonHttpClient::JsonHttpClient(HttpEndpoint endpoint, RetryPolicy policy, Sleeper sleeper)
    : endpoint_(std::move(endpoint)),
      policy_(std::move(policy)),
      sleeper_(std::move(sleeper)),
      gate_(std::make_unique<Gate>(endpoint_.parallelism)) {
    endpoint_.validate();
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

JsonHttpClient::~JsonHttpClient() = default;

std::string JsonHttpClient::attempt(const std::string& json_body) {
    const auto url = split_url(endpoint_.url);
    httplib::Client client(url.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!endpoint_.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key != nullptr && *key != '\0') {
            headers.emplace("Authorization", fmt::format("Bearer {}", key));
        }
    }

    metrics_.requests.fetch_add(1, std::memory_order_relaxed);
    gate_->acquire();
    auto res = client.Post(url.path, headers, json_body, "application/json");
    gate_->release();

    if (!res) {
        throw TransportError(fmt::format("request to {} failed: {}", endpoint_.url, httplib::to_string(res.error())),
                             true);
    }
    const int status = res->status;
    if (status >= 200 && status < 300) return res->body;
    const bool transient = status == 408 || status == 429 || status >= 500;
    throw TransportError(fmt::format("{} answered HTTP {}: {}", endpoint_.url, status, res->body.substr(0, 200)),
                         transient, status);
}

std::string JsonHttpClient::post(const std::string& json_body) {
    std::string causes;
    const std::size_t max_retries = policy_.backoff.size();
    for (std::size_t retry = 0;; ++retry) {
        try {
            return attempt(json_body);
        } catch (const TransportError& e) {
            if (!causes.empty()) causes += "; ";
            causes += e.what();
            if (!e.transient() || retry >= max_retries) {
                metrics_.failures.fetch_add(1, std::memory_order_relaxed);
                throw ProviderError(fmt::format("provider request failed after {} attempt(s): {}", retry + 1, causes),
                                    static_cast<int>(retry + 1));
            }
        }
        metrics_.retries.fetch_add(1, std::memory_order_relaxed);
        sleeper_(policy_.backoff[retry]);
    }
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    std::string hex;
    hex.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

}  // namespace tcmrag
