#include "cfqa/gateway.hpp"

#include <atomic>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "cfqa/errors.hpp"
#include "cfqa/sha256.hpp"

namespace cfqa::gateway {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RateLimiter
// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(int max_inflight, int per_second)
    : max_inflight_(max_inflight), per_second_(per_second) {
    if (max_inflight < 1) {
        throw ConfigError("max_inflight must be >= 1");
    }
    if (per_second < 0) {
        throw ConfigError("per_second must be >= 0");
    }
}

void RateLimiter::acquire() {
    std::unique_lock lock(mutex_);
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        while (!recent_starts_.empty() &&
               now - recent_starts_.front() >= std::chrono::seconds(1)) {
            recent_starts_.pop_front();
        }
        const bool inflight_ok = inflight_ < max_inflight_;
        const bool rate_ok =
            per_second_ == 0 || static_cast<int>(recent_starts_.size()) < per_second_;
        if (inflight_ok && rate_ok) {
            ++inflight_;
            if (per_second_ != 0) recent_starts_.push_back(now);
            return;
        }
        if (!inflight_ok) {
            cv_.wait(lock);
        } else {
            // wait until the oldest start ages out of the 1s window
            cv_.wait_until(lock, recent_starts_.front() + std::chrono::seconds(1));
        }
    }
}

void RateLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        --inflight_;
    }
    cv_.notify_all();
}

// ---------------------------------------------------------------------------
// DiskCache
// ---------------------------------------------------------------------------

std::string CacheKey::digest() const {
    // json serialization gives exact round-trip formatting for temperature
    const std::string material =
        json::array({backend_id, prompt_hash, temperature, seed, sample_index, request_kind,
                     tokens_digest})
            .dump();
    return sha256_hex(material);
}

DiskCache::DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::optional<json> DiskCache::get(const std::string& digest) const {
    const auto path = dir_ / (digest + ".json");
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw DataError("corrupt cache entry: " + path.string());
    }
    return j;
}

void DiskCache::put(const std::string& digest, const json& value) {
    const auto final_path = dir_ / (digest + ".json");
    if (std::filesystem::exists(final_path)) return;  // entries are immutable
    std::ostringstream tmp_name;
    tmp_name << digest << "." << std::this_thread::get_id() << ".tmp";
    const auto tmp_path = dir_ / tmp_name.str();
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write cache entry: " + tmp_path.string());
        }
        out << value.dump();
    }
    std::filesystem::rename(tmp_path, final_path);
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend,
                 std::optional<std::filesystem::path> cache_dir, RetryPolicy retry,
                 std::shared_ptr<RateLimiter> limiter)
    : backend_(std::move(backend)), retry_(retry), limiter_(std::move(limiter)) {
    if (!backend_) {
        throw ConfigError("gateway requires a backend");
    }
    if (cache_dir) {
        cache_.emplace(*cache_dir);
    }
}

template <typename Fn>
auto Gateway::with_retries(Fn&& call) -> decltype(call()) {
    auto backoff = retry_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            if (limiter_) {
                RateLimiter::Ticket ticket(*limiter_);
                return call();
            }
            return call();
        } catch (const TransientBackendError& e) {
            if (attempt >= retry_.max_retries) {
                std::ostringstream os;
                os << "backend \"" << backend_->id() << "\" failed after " << attempt + 1
                   << " attempts: " << e.what();
                throw TransportError(os.str());
            }
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
}

CompletionResponse Gateway::complete(const CompletionRequest& request) {
    if (request.prompt.empty()) {
        throw ConfigError("completion request with empty prompt");
    }
    CacheKey key{backend_->id(), sha256_hex(request.prompt), request.temperature,
                 request.seed,   request.sample_index,       "completion",
                 ""};
    const std::string digest = key.digest();
    if (cache_) {
        if (auto hit = cache_->get(digest)) {
            CompletionResponse resp;
            resp.text = hit->at("text").get<std::string>();
            resp.backend_id = hit->at("backend_id").get<std::string>();
            resp.truncated = hit->at("truncated").get<bool>();
            resp.created_at = hit->at("created_at").get<std::string>();
            return resp;
        }
    }
    CompletionResponse resp = with_retries([&] { return backend_->complete(request); });
    resp.backend_id = backend_->id();
    resp.text = apply_stop_sequences(std::move(resp.text), request.stop_sequences);
    if (cache_) {
        json entry;
        entry["text"] = resp.text;
        entry["backend_id"] = resp.backend_id;
        entry["truncated"] = resp.truncated;
        entry["created_at"] = resp.created_at;
        cache_->put(digest, entry);
    }
    return resp;
}

TokenDistribution Gateway::next_token_probabilities(const std::string& prompt,
                                                    const std::vector<std::string>& tokens,
                                                    std::uint64_t seed) {
    if (prompt.empty()) {
        throw ConfigError("next-token request with empty prompt");
    }
    if (tokens.empty()) {
        throw ConfigError("next-token request with no candidate tokens");
    }
    std::set<std::string_view> distinct(tokens.begin(), tokens.end());
    if (distinct.size() != tokens.size()) {
        throw ConfigError("candidate tokens must be mutually distinct");
    }
    if (!backend_->supports_token_probabilities()) {
        throw CapabilityError("backend \"" + backend_->id() +
                              "\" does not expose token probabilities");
    }
    std::string token_material;
    for (const auto& t : tokens) {
        token_material += t;
        token_material.push_back('\0');
    }
    CacheKey key{backend_->id(), sha256_hex(prompt), 0.0, seed, 0, "next_token",
                 sha256_hex(token_material)};
    const std::string digest = key.digest();
    if (cache_) {
        if (auto hit = cache_->get(digest)) {
            TokenDistribution dist;
            for (auto& [tok, p] : hit->at("probabilities").items()) {
                dist.entries[tok] = p.get<double>();
            }
            return dist;
        }
    }
    TokenDistribution dist =
        with_retries([&] { return backend_->next_token_probabilities(prompt, tokens, seed); });
    // Every requested token resolves to a probability, absent ones to 0.
    for (const auto& t : tokens) {
        dist.entries.emplace(t, 0.0);
    }
    if (cache_) {
        json entry;
        json probs = json::object();
        for (const auto& [tok, p] : dist.entries) probs[tok] = p;
        entry["probabilities"] = probs;
        cache_->put(digest, entry);
    }
    return dist;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops) {
    std::size_t cut = std::string::npos;
    for (const auto& stop : stops) {
        if (stop.empty()) continue;
        auto pos = text.find(stop);
        if (pos != std::string::npos && pos < cut) cut = pos;
    }
    if (cut != std::string::npos) text.resize(cut);
    return text;
}

std::string now_utc_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

void parallel_for(std::size_t n, int max_workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(std::max(1, max_workers), n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                {
                    std::lock_guard lock(error_mutex);
                    if (first_error) return;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cfqa::gateway
