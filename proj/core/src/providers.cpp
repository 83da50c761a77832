#include "tcmrag/providers.hpp"

#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "tcmrag/error.hpp"

namespace tcmrag {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

HttpEndpoint with_key_env(HttpEndpoint e, const char* fallback) {
    if (e.api_key_env.empty()) e.api_key_env = fallback;
    return e;
}

std::string dump(const ordered_json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEndpoint endpoint, RetryPolicy policy, Sleeper sleeper)
    : client_(with_key_env(std::move(endpoint), "EMBED_API_KEY"), std::move(policy), std::move(sleeper)) {}

std::vector<std::vector<double>> HttpEmbeddingProvider::embed_raw(std::span<const std::string> texts) {
    ordered_json body;
    body["model"] = client_.endpoint().model;
    body["input"] = ordered_json::array();
    for (const auto& t : texts) body["input"].push_back(t);

    const auto text = client_.post(dump(body));
    std::vector<std::vector<double>> out;
    try {
        const auto doc = json::parse(text);
        for (const auto& item : doc.at("data")) out.push_back(item.at("embedding").get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw ProviderError(fmt::format("embedding provider returned an unexpected body: {}", e.what()));
    }
    if (out.size() != texts.size()) {
        throw ProviderError(
            fmt::format("embedding provider returned {} vectors for {} inputs", out.size(), texts.size()));
    }
    return out;
}

HttpReranker::HttpReranker(HttpEndpoint endpoint, RetryPolicy policy, Sleeper sleeper)
    : client_(with_key_env(std::move(endpoint), "RERANK_API_KEY"), std::move(policy), std::move(sleeper)) {}

std::vector<double> HttpReranker::score(std::string_view query, std::span<const std::string> documents) {
    ordered_json body;
    body["model"] = client_.endpoint().model;
    body["query"] = std::string(query);
    body["documents"] = ordered_json::array();
    for (const auto& d : documents) body["documents"].push_back(d);

    const auto text = client_.post(dump(body));
    std::vector<double> scores(documents.size(), std::nan(""));
    try {
        const auto doc = json::parse(text);
        for (const auto& r : doc.at("results")) {
            const auto idx = r.at("index").get<long long>();
            if (idx < 0 || static_cast<std::size_t>(idx) >= documents.size()) {
                throw ProviderError(fmt::format("reranker returned index {} for {} documents", idx, documents.size()));
            }
            scores[static_cast<std::size_t>(idx)] = r.at("relevance_score").get<double>();
        }
    } catch (const json::exception& e) {
        throw ProviderError(fmt::format("reranker returned an unexpected body: {}", e.what()));
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw ProviderError(fmt::format("reranker gave no score for document {}", i));
    }
    return scores;
}

}  // namespace tcmrag
