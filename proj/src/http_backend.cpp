#include "cfqa/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

#include "cfqa/errors.hpp"

namespace cfqa::gateway {

using nlohmann::json;

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) {
        throw ConfigError("http backend requires a base_url");
    }
    if (config_.backend_id.empty()) {
        config_.backend_id = config_.base_url;
    }
    host_ = config_.base_url;
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (key == nullptr) {
            throw ConfigError("environment variable \"" + config_.api_key_env +
                              "\" (api key) is not set");
        }
        api_key_ = key;
    }
}

json HttpBackend::post_json(const std::string& route, const json& body) {
    httplib::Client client(host_);
    client.set_connection_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!api_key_.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key_);
    }
    auto result = client.Post(route, headers, body.dump(), "application/json");
    if (!result) {
        throw TransientBackendError("connection to " + host_ + route + " failed: " +
                                    httplib::to_string(result.error()));
    }
    if (result->status >= 500) {
        throw TransientBackendError("server error " + std::to_string(result->status) + " from " +
                                    host_ + route);
    }
    if (result->status != 200) {
        throw ContentError("backend rejected request (" + std::to_string(result->status) +
                           "): " + result->body);
    }
    json j = json::parse(result->body, nullptr, false);
    if (j.is_discarded()) {
        throw ContentError("backend returned non-JSON body from " + route);
    }
    return j;
}

CompletionResponse HttpBackend::complete(const CompletionRequest& request) {
    json body;
    body["prompt"] = request.prompt;
    body["temperature"] = request.temperature;
    body["max_output_units"] = request.max_output_units;
    body["stop_sequences"] = request.stop_sequences;
    body["sample_index"] = request.sample_index;
    body["seed"] = request.seed;
    json j = post_json("/v1/complete", body);
    if (!j.contains("text") || !j["text"].is_string()) {
        throw ContentError("backend response missing \"text\"");
    }
    CompletionResponse resp;
    resp.text = j["text"].get<std::string>();
    resp.truncated = j.value("truncated", false);
    resp.backend_id = config_.backend_id;
    resp.created_at = now_utc_iso8601();
    return resp;
}

TokenDistribution HttpBackend::next_token_probabilities(const std::string& prompt,
                                                        const std::vector<std::string>& tokens,
                                                        std::uint64_t /*seed*/) {
    json body;
    body["prompt"] = prompt;
    body["tokens"] = tokens;
    json j = post_json("/v1/next_token", body);
    if (!j.contains("probabilities") || !j["probabilities"].is_object()) {
        throw ContentError("backend response missing \"probabilities\"");
    }
    TokenDistribution dist;
    for (const auto& t : tokens) {
        auto it = j["probabilities"].find(t);
        dist.entries[t] = it == j["probabilities"].end() ? 0.0 : it->get<double>();
    }
    return dist;
}

}  // namespace cfqa::gateway
