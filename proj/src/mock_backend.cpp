#include "cfqa/mock_backend.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "cfqa/errors.hpp"
#include "cfqa/sha256.hpp"

namespace cfqa::gateway {

using nlohmann::json;

namespace {

constexpr const char* kMockTimestamp = "1970-01-01T00:00:00Z";

std::uint64_t hash_u64(const std::string& material) {
    const std::string hex = sha256_hex(material);
    std::uint64_t v = 0;
    for (int i = 0; i < 16; ++i) {
        char c = hex[i];
        v = (v << 4) | static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
    }
    return v;
}

const std::array<const char*, 16> kVocab = {
    "granite", "harbor", "willow",  "meridian", "falcon", "ember",   "quartz", "lantern",
    "juniper", "cobalt", "thistle", "onyx",     "breeze", "saffron", "tundra", "violet"};

}  // namespace

double hash_uniform(const std::string& material) {
    return static_cast<double>(hash_u64(material) >> 11) * 0x1.0p-53;
}

MockBackend::MockBackend(MockBackendConfig config) : config_(std::move(config)) {
    if (config_.fixture.empty()) return;
    std::ifstream in(config_.fixture, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open mock fixture: " + config_.fixture.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("prompt_hash") ||
            !j["prompt_hash"].is_string()) {
            std::ostringstream os;
            os << "malformed mock fixture entry at " << config_.fixture.string() << ":"
               << line_no;
            throw ConfigError(os.str());
        }
        const std::string hash = j["prompt_hash"].get<std::string>();
        if (j.contains("completion") && !j["completion"].is_null()) {
            int sample = -1;
            if (j.contains("sample_index") && !j["sample_index"].is_null()) {
                sample = j["sample_index"].get<int>();
            }
            completions_[{hash, sample}] = j["completion"].get<std::string>();
        }
        if (j.contains("token_probs") && !j["token_probs"].is_null()) {
            std::map<std::string, double> probs;
            for (auto& [tok, p] : j["token_probs"].items()) {
                const double v = p.get<double>();
                if (v < 0.0 || v > 1.0) {
                    throw ConfigError("mock fixture probability outside [0,1] for token \"" +
                                      tok + "\"");
                }
                probs[tok] = v;
            }
            token_probs_[hash] = std::move(probs);
        }
    }
}

void MockBackend::count_call() {
    const std::int64_t abort_at = abort_after_.load();
    if (abort_at >= 0 && served_total_.load() >= abort_at) {
        throw MockAbort{};
    }
    const int now = concurrent_.fetch_add(1) + 1;
    int prev = max_concurrent_.load();
    while (now > prev && !max_concurrent_.compare_exchange_weak(prev, now)) {
    }
}

std::string MockBackend::fallback_completion(const std::string& prompt_hash, int sample_index,
                                             std::uint64_t seed) const {
    std::ostringstream material;
    material << prompt_hash << ':' << sample_index << ':' << config_.seed << ':' << seed;
    const std::string base = material.str();

    const auto pick = [&](const std::string& tag, std::size_t n) {
        return static_cast<std::size_t>(hash_u64(base + ':' + tag) % n);
    };
    const std::string answer_a = kVocab[pick("a", kVocab.size())];
    const std::string answer_b = kVocab[pick("b", kVocab.size())];
    const std::string answer = answer_a + " " + answer_b;
    const std::string topic = kVocab[pick("t", kVocab.size())];

    std::ostringstream doc;
    doc << "The " << topic << " archive records that the subject of this question is " << answer
        << ". Documented in survey " << (1 + pick("s", 97)) << ", the " << topic
        << " entry lists " << answer << " as the accepted attribution.";

    if (hash_uniform(base + ":viol") < config_.fallback_violation_rate) {
        // malformed on purpose: no blank line before the answer marker
        return doc.str() + "\n" + config_.fallback_answer_marker + answer;
    }
    return doc.str() + "\n\n" + config_.fallback_answer_marker + answer;
}

CompletionResponse MockBackend::complete(const CompletionRequest& request) {
    const std::string prompt_hash = sha256_hex(request.prompt);
    {
        std::lock_guard lock(mutex_);
        auto it = transient_failures_left_.find(prompt_hash);
        if (it != transient_failures_left_.end() && it->second > 0) {
            --it->second;
            throw TransientBackendError("injected transient failure for " + prompt_hash);
        }
    }
    count_call();
    struct Exit {
        std::atomic<int>& c;
        ~Exit() { c.fetch_sub(1); }
    } exit_guard{concurrent_};

    std::string text;
    auto exact = completions_.find({prompt_hash, request.sample_index});
    if (exact != completions_.end()) {
        text = exact->second;
    } else {
        auto wildcard = completions_.find({prompt_hash, -1});
        if (wildcard != completions_.end()) {
            text = wildcard->second;
        } else if (config_.strict) {
            throw ContentError("mock backend has no completion for prompt_hash " + prompt_hash);
        } else {
            text = fallback_completion(prompt_hash, request.sample_index, request.seed);
        }
    }

    CompletionResponse resp;
    resp.backend_id = config_.backend_id;
    resp.created_at = kMockTimestamp;
    resp.truncated = false;
    if (request.max_output_units > 0 &&
        text.size() > static_cast<std::size_t>(request.max_output_units)) {
        text.resize(static_cast<std::size_t>(request.max_output_units));
        resp.truncated = true;
    }
    resp.text = std::move(text);

    served_total_.fetch_add(1);
    {
        std::lock_guard lock(mutex_);
        ++served_per_key_[("c:" + prompt_hash + ":") + std::to_string(request.sample_index)];
    }
    return resp;
}

TokenDistribution MockBackend::next_token_probabilities(const std::string& prompt,
                                                        const std::vector<std::string>& tokens,
                                                        std::uint64_t seed) {
    const std::string prompt_hash = sha256_hex(prompt);
    count_call();
    struct Exit {
        std::atomic<int>& c;
        ~Exit() { c.fetch_sub(1); }
    } exit_guard{concurrent_};

    TokenDistribution dist;
    auto it = token_probs_.find(prompt_hash);
    if (it != token_probs_.end()) {
        for (const auto& t : tokens) {
            auto p = it->second.find(t);
            dist.entries[t] = p == it->second.end() ? 0.0 : p->second;
        }
    } else if (config_.strict) {
        throw ContentError("mock backend has no token distribution for prompt_hash " +
                           prompt_hash);
    } else {
        std::ostringstream material;
        material << prompt_hash << ':' << config_.seed << ':' << seed << ":yes";
        const double p_yes = hash_uniform(material.str());
        for (const auto& t : tokens) {
            if (t == "Yes") {
                dist.entries[t] = p_yes;
            } else if (t == "No") {
                dist.entries[t] = 1.0 - p_yes;
            } else {
                dist.entries[t] = 0.0;
            }
        }
    }

    served_total_.fetch_add(1);
    {
        std::lock_guard lock(mutex_);
        ++served_per_key_["t:" + prompt_hash];
    }
    return dist;
}

int MockBackend::max_served_per_key() const {
    std::lock_guard lock(mutex_);
    int best = 0;
    for (const auto& [key, count] : served_per_key_) best = std::max(best, count);
    return best;
}

void MockBackend::inject_transient_failures(const std::string& prompt_hash, int times) {
    std::lock_guard lock(mutex_);
    transient_failures_left_[prompt_hash] = times;
}

}  // namespace cfqa::gateway
