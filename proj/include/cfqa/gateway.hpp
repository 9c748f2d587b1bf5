#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cfqa::gateway {

struct CompletionRequest {
    std::string prompt;
    double temperature = 0.7;
    int max_output_units = 512;
    std::vector<std::string> stop_sequences;
    int sample_index = 0;
    std::uint64_t seed = 0;
};

struct CompletionResponse {
    std::string text;
    std::string backend_id;
    bool truncated = false;
    std::string created_at;  // ISO-8601 UTC; preserved through the cache
};

struct TokenDistribution {
    std::map<std::string, double> entries;

    /// 0.0 for tokens absent from the backend's support.
    double probability_of(const std::string& token) const {
        auto it = entries.find(token);
        return it == entries.end() ? 0.0 : it->second;
    }
};

/// Text-completion backend contract. Adapters classify their own failures:
/// throw TransientBackendError for retryable conditions and ContentError for
/// permanent per-request failures.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    virtual bool supports_token_probabilities() const { return false; }
    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
    virtual TokenDistribution next_token_probabilities(const std::string& prompt,
                                                       const std::vector<std::string>& tokens,
                                                       std::uint64_t seed) = 0;
};

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds initial_backoff{100};  // doubles per attempt
};

/// Bounds both concurrent in-flight requests and requests started per second.
/// A per_second budget of 0 means unlimited.
class RateLimiter {
public:
    RateLimiter(int max_inflight, int per_second);

    void acquire();
    void release();

    class Ticket {
    public:
        explicit Ticket(RateLimiter& limiter) : limiter_(&limiter) { limiter_->acquire(); }
        ~Ticket() {
            if (limiter_) limiter_->release();
        }
        Ticket(const Ticket&) = delete;
        Ticket& operator=(const Ticket&) = delete;

    private:
        RateLimiter* limiter_;
    };

    int max_inflight() const { return max_inflight_; }

private:
    const int max_inflight_;
    const int per_second_;
    std::mutex mutex_;
    std::condition_variable cv_;
    int inflight_ = 0;
    std::deque<std::chrono::steady_clock::time_point> recent_starts_;
};

struct CacheKey {
    std::string backend_id;
    std::string prompt_hash;
    double temperature = 0.0;
    std::uint64_t seed = 0;
    int sample_index = 0;
    std::string request_kind;   // "completion" | "next_token"
    std::string tokens_digest;  // empty for completions

    /// Content digest; the on-disk filename for this entry.
    std::string digest() const;
};

/// Immutable content-addressed store, one file per cache key digest.
/// Writes go through a temp file + atomic rename, so concurrent writers of
/// the same key are safe and partial files are never observed.
class DiskCache {
public:
    explicit DiskCache(std::filesystem::path dir);

    std::optional<nlohmann::json> get(const std::string& digest) const;
    void put(const std::string& digest, const nlohmann::json& value);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

/// Uniform front door to a backend: response caching, retry with exponential
/// backoff, and rate limiting. Cache hits never touch the backend.
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend,
            std::optional<std::filesystem::path> cache_dir = std::nullopt,
            RetryPolicy retry = {},
            std::shared_ptr<RateLimiter> limiter = nullptr);

    CompletionResponse complete(const CompletionRequest& request);

    /// Probability for each requested token (0 when absent from the backend's
    /// support). Tokens must be non-empty and mutually distinct.
    TokenDistribution next_token_probabilities(const std::string& prompt,
                                               const std::vector<std::string>& tokens,
                                               std::uint64_t seed);

    std::string backend_id() const { return backend_->id(); }
    Backend& backend() { return *backend_; }

private:
    template <typename Fn>
    auto with_retries(Fn&& call) -> decltype(call());

    std::shared_ptr<Backend> backend_;
    std::optional<DiskCache> cache_;
    RetryPolicy retry_;
    std::shared_ptr<RateLimiter> limiter_;
};

/// Trims `text` at the first occurrence of any stop sequence.
std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops);

/// Current wall-clock time as an ISO-8601 UTC string.
std::string now_utc_iso8601();

/// Runs fn(i) for i in [0, n) on up to max_workers threads. Rethrows the
/// first exception after all workers have stopped.
void parallel_for(std::size_t n, int max_workers, const std::function<void(std::size_t)>& fn);

}  // namespace cfqa::gateway
