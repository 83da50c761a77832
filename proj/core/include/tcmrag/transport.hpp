#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tcmrag/error.hpp"

namespace tcmrag {

/// Connection settings for one remote provider.
struct HttpEndpoint {
    std::string url;          ///< full URL, e.g. https://host/v1/embeddings
    std::string model;
    std::string api_key_env;  ///< environment variable holding the bearer token
    int parallelism = 4;
    std::chrono::milliseconds timeout{60'000};

    /// Throws ConfigError when the URL is empty or malformed, parallelism < 1
    /// or timeout <= 0.
    void validate() const;
};

struct RetryPolicy {
    /// Delay before retry i; its size is the maximum number of retries.
    std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(2),
                                                   std::chrono::seconds(4)};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Counters shared by a provider handle.
struct ProviderMetrics {
    std::atomic<std::uint64_t> requests{0};
    std::atomic<std::uint64_t> retries{0};
    std::atomic<std::uint64_t> failures{0};
};

/// Thrown by a single attempt; transient failures are retried.
class TransportError : public ProviderError {
public:
    TransportError(const std::string& what, bool transient, int status = 0)
        : ProviderError(what), transient_(transient), status_(status) {}

    bool transient() const noexcept { return transient_; }
    int status() const noexcept { return status_; }

private:
    bool transient_;
    int status_;
};

/// POSTs JSON bodies with bearer auth, bounded concurrency and the retry
/// policy. Connection failures, 408, 429 and 5xx are retried; any other
/// non-2xx status fails immediately.
class JsonHttpClient {
public:
    explicit JsonHttpClient(HttpEndpoint endpoint, RetryPolicy policy = {}, Sleeper sleeper = {});
    ~JsonHttpClient();

    JsonHttpClient(const JsonHttpClient&) = delete;
    JsonHttpClient& operator=(const JsonHttpClient&) = delete;

    /// Returns the response body of the first successful attempt.
    std::string post(const std::string& json_body);

    const HttpEndpoint& endpoint() const noexcept { return endpoint_; }
    const ProviderMetrics& metrics() const noexcept { return metrics_; }

private:
    std::string attempt(const std::string& json_body);

    struct Gate;

    HttpEndpoint endpoint_;
    RetryPolicy policy_;
    Sleeper sleeper_;
    ProviderMetrics metrics_;
    std::unique_ptr<Gate> gate_;
};

/// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(const std::string& data);

}  // namespace tcmrag
