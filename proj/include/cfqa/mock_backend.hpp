#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "cfqa/gateway.hpp"

namespace cfqa::gateway {

/// Thrown by abort injection (see MockBackend::abort_after). Deliberately not
/// a cfqa::Error so it bypasses retry and per-candidate error handling,
/// emulating a killed process.
struct MockAbort {};

struct MockBackendConfig {
    std::filesystem::path fixture;  // empty: no scripted entries
    std::uint64_t seed = 0;
    bool strict = true;  // unknown prompt -> error; false -> deterministic fallback
    std::string backend_id = "mock";
    std::string fallback_answer_marker = "Answer: ";
    double fallback_violation_rate = 0.0;  // fraction of fallback completions made malformed
};

/// Fully deterministic backend for desk-scale runs and tests.
///
/// Scripted behavior comes from a JSONL fixture of
///   {"prompt_hash": str, "sample_index": int|null,
///    "completion": str|null, "token_probs": {token: prob}|null}
/// Completions match on (prompt_hash, sample_index), falling back to a
/// null-sample_index entry for the same hash. Token distributions match on
/// prompt_hash alone.
///
/// In non-strict mode, unknown prompts get deterministic fallback output
/// derived from SHA-256 of (prompt, sample_index, seed): a short document
/// plus answer line for completions, and a Yes/No split for distributions.
class MockBackend : public Backend {
public:
    explicit MockBackend(MockBackendConfig config);

    std::string id() const override { return config_.backend_id; }
    bool supports_token_probabilities() const override { return true; }
    CompletionResponse complete(const CompletionRequest& request) override;
    TokenDistribution next_token_probabilities(const std::string& prompt,
                                               const std::vector<std::string>& tokens,
                                               std::uint64_t seed) override;

    // Instrumentation for cache/resume and rate-limit assertions.
    std::int64_t served_total() const { return served_total_.load(); }
    int max_concurrent_observed() const { return max_concurrent_.load(); }
    /// Highest number of times any single (kind, prompt, sample) was served.
    int max_served_per_key() const;

    /// Once served_total() reaches `n`, every subsequent call throws MockAbort
    /// before serving. Pass a negative value to disable.
    void abort_after(std::int64_t n) { abort_after_.store(n); }

    /// Fail each completion for this prompt hash transiently `times` times
    /// before succeeding.
    void inject_transient_failures(const std::string& prompt_hash, int times);

private:
    struct ScriptKey {
        std::string prompt_hash;
        int sample_index;  // -1 encodes the null wildcard
        bool operator<(const ScriptKey& o) const {
            return std::tie(prompt_hash, sample_index) < std::tie(o.prompt_hash, o.sample_index);
        }
    };

    void count_call();
    std::string fallback_completion(const std::string& prompt_hash, int sample_index,
                                    std::uint64_t seed) const;

    MockBackendConfig config_;
    std::map<ScriptKey, std::string> completions_;
    std::map<std::string, std::map<std::string, double>> token_probs_;

    mutable std::mutex mutex_;
    std::unordered_map<std::string, int> served_per_key_;
    std::unordered_map<std::string, int> transient_failures_left_;
    std::atomic<std::int64_t> served_total_{0};
    std::atomic<std::int64_t> abort_after_{-1};
    std::atomic<int> concurrent_{0};
    std::atomic<int> max_concurrent_{0};
};

/// Derives a uniform double in [0, 1) from SHA-256 of the given material.
/// Stable across platforms and word sizes.
double hash_uniform(const std::string& material);

}  // namespace cfqa::gateway
