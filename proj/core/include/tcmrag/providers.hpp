#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcmrag/dense.hpp"
#include "tcmrag/retrieve.hpp"
#include "tcmrag/transport.hpp"

namespace tcmrag {

/// POST {"model","input":[...]} -> {"data":[{"embedding":[...]}...]}.
/// The bearer token is read from EMBED_API_KEY unless the endpoint names
/// another variable.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpEndpoint endpoint, RetryPolicy policy = {}, Sleeper sleeper = {});

    std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override;
    std::string name() const override { return "http:" + client_.endpoint().model; }
    const ProviderMetrics& metrics() const noexcept { return client_.metrics(); }

private:
    JsonHttpClient client_;
};

/// POST {"model","query","documents":[...]} ->
/// {"results":[{"index":i,"relevance_score":s}...]}. Token from RERANK_API_KEY.
class HttpReranker final : public Reranker {
public:
    explicit HttpReranker(HttpEndpoint endpoint, RetryPolicy policy = {}, Sleeper sleeper = {});

    std::vector<double> score(std::string_view query, std::span<const std::string> documents) override;
    std::string name() const override { return "http:" + client_.endpoint().model; }
    const ProviderMetrics& metrics() const noexcept { return client_.metrics(); }

private:
    JsonHttpClient client_;
};

}  // namespace tcmrag
