// cfqa: build counterfactual open-book QA datasets from a factual QA source
// and evaluate dataset quality and downstream predictions.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfqa/corpus.hpp"
#include "cfqa/errors.hpp"
#include "cfqa/pipeline.hpp"

namespace {

using namespace cfqa;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitTransport = 3;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::string> cache_dir;
    std::optional<int> max_inflight;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("-c,--config", flags.config_path, "pipeline config file (JSON)")
        ->required();
    cmd->add_option("--seed", flags.seed, "override the configured seed");
    cmd->add_option("--mode", flags.mode, "override the filter mode")
        ->check(CLI::IsMember({"counterfactual", "factual"}));
    cmd->add_option("--cache-dir", flags.cache_dir, "override the cache directory");
    cmd->add_option("--max-inflight", flags.max_inflight,
                    "override the concurrent request limit");
}

pipeline::PipelineContext make_context(const CommonFlags& flags) {
    pipeline::Overrides overrides;
    overrides.seed = flags.seed;
    overrides.mode = flags.mode;
    if (flags.cache_dir) overrides.cache_dir = *flags.cache_dir;
    overrides.max_inflight = flags.max_inflight;
    return pipeline::PipelineContext::create(
        pipeline::PipelineConfig::load(flags.config_path, overrides));
}

pipeline::ScorerSpec parse_scorer_flags(const std::string& type, const std::string& fixture,
                                        std::optional<std::uint64_t> seed,
                                        const std::string& base_url,
                                        const std::string& api_key_env) {
    pipeline::ScorerSpec spec;
    spec.type = type;
    spec.fixture = fixture;
    spec.seed = seed;
    spec.base_url = base_url;
    spec.api_key_env = api_key_env;
    if (spec.type == "http" && spec.base_url.empty()) {
        throw ConfigError("--scorer-url is required for an http scorer");
    }
    return spec;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"counterfactual open-book QA dataset pipeline"};
    app.require_subcommand(1);

    CommonFlags generate_flags, filter_flags, select_flags, pipeline_flags, stats_flags;

    auto* cmd_generate =
        app.add_subcommand("generate", "sample recitation candidates for every question");
    add_common_flags(cmd_generate, generate_flags);

    auto* cmd_filter =
        app.add_subcommand("filter", "run surface, factuality, and attribution filters");
    add_common_flags(cmd_filter, filter_flags);
    std::string filter_candidates;
    cmd_filter->add_option("--candidates", filter_candidates,
                           "candidates file (default: <output_dir>/candidates.jsonl)");

    auto* cmd_select = app.add_subcommand("select", "select the best candidate per question");
    add_common_flags(cmd_select, select_flags);
    std::string select_input;
    cmd_select->add_option("--survivors", select_input,
                           "post-attribution file (default: <output_dir>/post_attribution.jsonl)");

    auto* cmd_pipeline = app.add_subcommand("pipeline", "generate, filter, and select");
    add_common_flags(cmd_pipeline, pipeline_flags);

    auto* cmd_stats = app.add_subcommand("stats", "print the manifest");
    add_common_flags(cmd_stats, stats_flags);

    auto* cmd_quality = app.add_subcommand("quality", "NLI quality report for a dataset");
    std::string quality_dataset, quality_report = "quality_report.json";
    std::string scorer_type = "mock", scorer_fixture, scorer_url, scorer_key_env;
    std::optional<std::uint64_t> scorer_seed;
    std::string quality_aggregate = "mean";
    double quality_tau = 0.5;
    int quality_workers = 4;
    cmd_quality->add_option("--dataset", quality_dataset, "counterfactual dataset (JSONL)")
        ->required();
    cmd_quality->add_option("--out", quality_report, "report path");
    cmd_quality->add_option("--scorer", scorer_type, "NLI scorer type")
        ->check(CLI::IsMember({"mock", "http"}));
    cmd_quality->add_option("--scorer-fixture", scorer_fixture, "mock scorer fixture (JSONL)");
    cmd_quality->add_option("--scorer-seed", scorer_seed, "mock scorer seed");
    cmd_quality->add_option("--scorer-url", scorer_url, "http scorer base URL");
    cmd_quality->add_option("--scorer-api-key-env", scorer_key_env,
                            "env var holding the scorer API key");
    cmd_quality->add_option("--aggregate", quality_aggregate, "aggregation rule")
        ->check(CLI::IsMember({"mean", "fraction"}));
    cmd_quality->add_option("--tau", quality_tau, "threshold for fraction aggregation");
    cmd_quality->add_option("--workers", quality_workers, "concurrent scorer queries");

    auto* cmd_score = app.add_subcommand("score", "token F1 / exact match for prediction files");
    std::vector<std::string> score_specs;
    std::vector<std::string> ood_set;
    std::string score_report = "metric_report.json";
    cmd_score
        ->add_option("--input", score_specs,
                     "name=dataset.jsonl:predictions.jsonl (repeatable)")
        ->required();
    cmd_score->add_option("--ood", ood_set, "dataset names forming the OOD average");
    cmd_score->add_option("--out", score_report, "report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints the usage message
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (cmd_generate->parsed()) {
            auto ctx = make_context(generate_flags);
            const auto path = pipeline::run_generate(ctx);
            std::cout << "wrote " << path.string() << "\n";
        } else if (cmd_filter->parsed()) {
            auto ctx = make_context(filter_flags);
            std::optional<std::filesystem::path> in;
            if (!filter_candidates.empty()) in = filter_candidates;
            const auto path = pipeline::run_filter(ctx, in);
            std::cout << "wrote " << path.string() << "\n";
        } else if (cmd_select->parsed()) {
            auto ctx = make_context(select_flags);
            std::optional<std::filesystem::path> in;
            if (!select_input.empty()) in = select_input;
            const auto path = pipeline::run_select(ctx, in);
            std::cout << "wrote " << path.string() << "\n";
        } else if (cmd_pipeline->parsed()) {
            auto ctx = make_context(pipeline_flags);
            const auto path = pipeline::run_pipeline(ctx);
            std::cout << "wrote " << path.string() << "\n";
        } else if (cmd_stats->parsed()) {
            pipeline::Overrides overrides;
            auto config = pipeline::PipelineConfig::load(stats_flags.config_path, overrides);
            const auto manifest = corpus::load_manifest(config.output_dir / "manifest.json");
            std::cout << pipeline::render_manifest_summary(manifest);
        } else if (cmd_quality->parsed()) {
            auto spec = parse_scorer_flags(scorer_type, scorer_fixture, scorer_seed, scorer_url,
                                           scorer_key_env);
            auto scorer = pipeline::make_scorer(spec, scorer_seed.value_or(0));
            quality::QualityConfig qc;
            qc.aggregate = quality_aggregate == "mean" ? quality::Aggregate::Mean
                                                       : quality::Aggregate::FractionAboveTau;
            qc.tau = quality_tau;
            qc.max_workers = quality_workers;
            const auto report = pipeline::run_quality(quality_dataset, *scorer, qc, quality_report);
            std::cout << "attribution_mean " << report.attribution_mean
                      << "\ncounterfactuality_mean " << report.counterfactuality_mean << "\nn "
                      << report.n << " skipped " << report.skipped << "\n";
        } else if (cmd_score->parsed()) {
            std::vector<pipeline::ScoreInput> inputs;
            for (const auto& spec : score_specs) {
                const auto eq = spec.find('=');
                const auto colon = spec.find(':', eq == std::string::npos ? 0 : eq + 1);
                if (eq == std::string::npos || colon == std::string::npos) {
                    throw ConfigError("bad --input spec (want name=dataset:predictions): " +
                                      spec);
                }
                inputs.push_back({spec.substr(0, eq), spec.substr(eq + 1, colon - eq - 1),
                                  spec.substr(colon + 1)});
            }
            const auto report =
                pipeline::run_score(inputs, ood_set, metrics::MetricNormalizationRules{},
                                    score_report);
            std::cout << metrics::render_metric_table(report);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CapabilityError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
