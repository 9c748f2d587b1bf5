#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cfqa/corpus.hpp"
#include "cfqa/filters.hpp"
#include "cfqa/gateway.hpp"
#include "cfqa/metrics.hpp"
#include "cfqa/quality.hpp"
#include "cfqa/recitation.hpp"

namespace cfqa::pipeline {

struct BackendSpec {
    std::string type = "mock";  // "mock" | "http"
    // mock
    std::filesystem::path fixture;
    std::optional<std::uint64_t> seed;  // defaults to the pipeline seed
    std::string on_unknown = "error";   // "error" | "fallback"
    std::string backend_id;
    std::string fallback_answer_marker = "Answer: ";
    double fallback_violation_rate = 0.0;
    // http
    std::string base_url;
    std::string api_key_env;
    int timeout_ms = 30000;
};

struct ScorerSpec {
    std::string type = "mock";  // "mock" | "http"
    std::filesystem::path fixture;
    std::optional<std::uint64_t> seed;
    bool strict = false;
    std::string base_url;
    std::string api_key_env;
    int timeout_ms = 30000;
};

struct ConcurrencyConfig {
    int max_inflight = 4;
    int per_second = 0;  // 0 = unlimited
    int max_retries = 2;
    int initial_backoff_ms = 100;
};

/// Flag-level overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::filesystem::path> cache_dir;
    std::optional<int> max_inflight;
};

struct PipelineConfig {
    std::filesystem::path source_path;
    corpus::SourceFormat source_format = corpus::SourceFormat::TriviaQaMrqa;
    std::filesystem::path recitation_template_path;
    std::filesystem::path factuality_template_path;
    std::filesystem::path attribution_template_path;
    BackendSpec generator;
    BackendSpec judge;
    recitation::RecitationConfig recitation;
    filters::FilterConfig filters;
    std::filesystem::path cache_dir;
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;
    ConcurrencyConfig concurrency;

    /// The raw configuration (overrides applied, environment references NOT
    /// expanded) recorded in the manifest.
    corpus::ordered_json snapshot = corpus::ordered_json::object();

    /// Parses a config file, applies overrides, expands ${VAR} references in
    /// string values, and checks that referenced input paths exist. Relative
    /// paths resolve against the config file's directory.
    static PipelineConfig load(const std::filesystem::path& path, const Overrides& overrides = {});

    void validate() const;
};

std::shared_ptr<gateway::Backend> make_backend(const BackendSpec& spec, std::uint64_t seed);
std::unique_ptr<quality::NliScorer> make_scorer(const ScorerSpec& spec, std::uint64_t seed);

/// Owns the gateways shared by the pipeline stages. Tests may construct one
/// around instrumented backends.
struct PipelineContext {
    PipelineConfig config;
    std::shared_ptr<gateway::Backend> generator_backend;
    std::shared_ptr<gateway::Backend> judge_backend;
    std::shared_ptr<gateway::RateLimiter> limiter;
    std::unique_ptr<gateway::Gateway> generator;
    std::unique_ptr<gateway::Gateway> judge;

    static PipelineContext create(PipelineConfig config);
    static PipelineContext create(PipelineConfig config,
                                  std::shared_ptr<gateway::Backend> generator_backend,
                                  std::shared_ptr<gateway::Backend> judge_backend);
};

// Stage entry points. Each writes its outputs under config.output_dir and
// keeps manifest.json current:
//   generate -> candidates.jsonl
//   filter   -> post_surface.jsonl, post_factuality.jsonl, post_attribution.jsonl
//   select   -> dataset.jsonl
std::filesystem::path run_generate(PipelineContext& ctx);
std::filesystem::path run_filter(PipelineContext& ctx,
                                 std::optional<std::filesystem::path> candidates_path = {});
std::filesystem::path run_select(PipelineContext& ctx,
                                 std::optional<std::filesystem::path> post_attribution_path = {});

/// generate -> filter -> select. Returns the dataset path.
std::filesystem::path run_pipeline(PipelineContext& ctx);

quality::QualityReport run_quality(const std::filesystem::path& dataset_path,
                                   quality::NliScorer& scorer,
                                   const quality::QualityConfig& config,
                                   const std::filesystem::path& report_path);

struct ScoreInput {
    std::string dataset_name;
    std::filesystem::path dataset_path;
    std::filesystem::path predictions_path;
};

metrics::MetricReport run_score(const std::vector<ScoreInput>& inputs,
                                const std::vector<std::string>& ood_datasets,
                                const metrics::MetricNormalizationRules& rules,
                                const std::filesystem::path& report_path);

/// Human-readable manifest summary for the stats subcommand.
std::string render_manifest_summary(const corpus::DatasetManifest& manifest);

}  // namespace cfqa::pipeline
