#pragma once

#include <string>

#include "cfqa/gateway.hpp"

namespace cfqa::gateway {

struct HttpBackendConfig {
    std::string base_url;     // e.g. "http://localhost:8080"
    std::string api_key_env;  // name of the env var holding the bearer token; empty = none
    std::string backend_id;   // defaults to the base_url when empty
    int timeout_ms = 30000;
};

/// Generic JSON-over-HTTP completion adapter.
///
/// POST {base_url}/v1/complete
///   {"prompt", "temperature", "max_output_units", "stop_sequences",
///    "sample_index", "seed"}                -> {"text": str, "truncated": bool}
/// POST {base_url}/v1/next_token
///   {"prompt", "tokens": [str]}             -> {"probabilities": {token: prob}}
///
/// HTTP 5xx and connection failures are transient (retried by the gateway);
/// 4xx responses are permanent content errors.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    std::string id() const override { return config_.backend_id; }
    bool supports_token_probabilities() const override { return true; }
    CompletionResponse complete(const CompletionRequest& request) override;
    TokenDistribution next_token_probabilities(const std::string& prompt,
                                               const std::vector<std::string>& tokens,
                                               std::uint64_t seed) override;

private:
    nlohmann::json post_json(const std::string& route, const nlohmann::json& body);

    HttpBackendConfig config_;
    std::string host_;
    std::string api_key_;
};

}  // namespace cfqa::gateway
