#include "cfqa/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "cfqa/errors.hpp"
#include "cfqa/http_backend.hpp"
#include "cfqa/mock_backend.hpp"
#include "cfqa/text.hpp"

namespace cfqa::pipeline {

using corpus::DatasetManifest;
using corpus::ordered_json;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

std::string interpolate_env(const std::string& value) {
    std::string out;
    std::size_t pos = 0;
    while (pos < value.size()) {
        const std::size_t open = value.find("${", pos);
        if (open == std::string::npos) {
            out.append(value, pos, std::string::npos);
            break;
        }
        const std::size_t close = value.find('}', open + 2);
        if (close == std::string::npos) {
            out.append(value, pos, std::string::npos);
            break;
        }
        out.append(value, pos, open - pos);
        const std::string name = value.substr(open + 2, close - open - 2);
        const char* v = std::getenv(name.c_str());
        if (v == nullptr) {
            throw ConfigError("config references unset environment variable \"" + name + "\"");
        }
        out += v;
        pos = close + 1;
    }
    return out;
}

void interpolate_env_inplace(json& j) {
    if (j.is_string()) {
        j = interpolate_env(j.get<std::string>());
    } else if (j.is_object() || j.is_array()) {
        for (auto& child : j) interpolate_env_inplace(child);
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

BackendSpec parse_backend_spec(const json& j, const std::filesystem::path& base) {
    BackendSpec spec;
    spec.type = j.value("type", spec.type);
    if (spec.type == "mock") {
        if (j.contains("fixture") && !j["fixture"].is_null()) {
            spec.fixture = resolve(base, j["fixture"].get<std::string>());
        }
        if (j.contains("seed") && !j["seed"].is_null()) {
            spec.seed = j["seed"].get<std::uint64_t>();
        }
        spec.on_unknown = j.value("on_unknown", spec.on_unknown);
        if (spec.on_unknown != "error" && spec.on_unknown != "fallback") {
            throw ConfigError("backend on_unknown must be \"error\" or \"fallback\"");
        }
        spec.backend_id = j.value("backend_id", std::string("mock"));
        spec.fallback_answer_marker =
            j.value("fallback_answer_marker", spec.fallback_answer_marker);
        spec.fallback_violation_rate =
            j.value("fallback_violation_rate", spec.fallback_violation_rate);
    } else if (spec.type == "http") {
        spec.base_url = j.value("base_url", std::string());
        spec.api_key_env = j.value("api_key_env", std::string());
        spec.backend_id = j.value("backend_id", spec.base_url);
        spec.timeout_ms = j.value("timeout_ms", spec.timeout_ms);
        if (spec.base_url.empty()) {
            throw ConfigError("http backend requires base_url");
        }
    } else {
        throw ConfigError("unknown backend type: " + spec.type);
    }
    return spec;
}

}  // namespace

PipelineConfig PipelineConfig::load(const std::filesystem::path& path,
                                    const Overrides& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    json raw = json::parse(in, nullptr, false);
    if (raw.is_discarded() || !raw.is_object()) {
        throw ConfigError("malformed config JSON: " + path.string());
    }

    // Flag overrides become part of the recorded configuration.
    if (overrides.seed) raw["seed"] = *overrides.seed;
    if (overrides.mode) raw["filters"]["mode"] = *overrides.mode;
    if (overrides.cache_dir) raw["cache_dir"] = overrides.cache_dir->string();
    if (overrides.max_inflight) raw["concurrency"]["max_inflight"] = *overrides.max_inflight;

    const ordered_json snapshot = ordered_json::parse(raw.dump());
    interpolate_env_inplace(raw);

    const std::filesystem::path base = path.has_parent_path()
                                           ? path.parent_path()
                                           : std::filesystem::path(".");
    PipelineConfig cfg;
    cfg.snapshot = snapshot;
    try {
        const auto& source = raw.at("source");
        cfg.source_path = resolve(base, source.at("path").get<std::string>());
        cfg.source_format =
            corpus::source_format_from_string(source.value("format", "triviaqa-mrqa"));

        const auto& templates = raw.at("templates");
        cfg.recitation_template_path =
            resolve(base, templates.at("recitation").get<std::string>());
        cfg.factuality_template_path =
            resolve(base, templates.at("factuality").get<std::string>());
        cfg.attribution_template_path =
            resolve(base, templates.at("attribution").get<std::string>());

        const auto& backends = raw.at("backends");
        cfg.generator = parse_backend_spec(backends.at("generator"), base);
        cfg.judge = parse_backend_spec(backends.at("judge"), base);

        if (raw.contains("recitation")) {
            const auto& r = raw["recitation"];
            cfg.recitation.k_samples = r.value("k_samples", cfg.recitation.k_samples);
            cfg.recitation.temperature = r.value("temperature", cfg.recitation.temperature);
            cfg.recitation.max_output_units =
                r.value("max_output_units", cfg.recitation.max_output_units);
            if (r.contains("stop_sequences")) {
                cfg.recitation.stop_sequences =
                    r["stop_sequences"].get<std::vector<std::string>>();
            }
            cfg.recitation.multiline_answers =
                r.value("multiline_answers", cfg.recitation.multiline_answers);
        }
        if (raw.contains("filters")) {
            const auto& f = raw["filters"];
            cfg.filters.factuality_threshold =
                f.value("factuality_threshold", cfg.filters.factuality_threshold);
            cfg.filters.attribution_threshold =
                f.value("attribution_threshold", cfg.filters.attribution_threshold);
            if (f.contains("yes_variants")) {
                cfg.filters.yes_variants = f["yes_variants"].get<std::vector<std::string>>();
            }
            if (f.contains("no_variants")) {
                cfg.filters.no_variants = f["no_variants"].get<std::vector<std::string>>();
            }
            cfg.filters.mode = filters::mode_from_string(f.value("mode", "counterfactual"));
            cfg.filters.use_gold_aliases =
                f.value("use_gold_aliases", cfg.filters.use_gold_aliases);
            cfg.filters.factuality_filter_enabled =
                f.value("factuality_filter_enabled", cfg.filters.factuality_filter_enabled);
            cfg.filters.attribution_filter_enabled =
                f.value("attribution_filter_enabled", cfg.filters.attribution_filter_enabled);
        }
        cfg.cache_dir = resolve(base, raw.at("cache_dir").get<std::string>());
        cfg.output_dir = resolve(base, raw.at("output_dir").get<std::string>());
        cfg.seed = raw.value("seed", std::uint64_t{0});
        if (raw.contains("concurrency")) {
            const auto& c = raw["concurrency"];
            cfg.concurrency.max_inflight = c.value("max_inflight", cfg.concurrency.max_inflight);
            cfg.concurrency.per_second = c.value("per_second", cfg.concurrency.per_second);
            cfg.concurrency.max_retries = c.value("max_retries", cfg.concurrency.max_retries);
            cfg.concurrency.initial_backoff_ms =
                c.value("initial_backoff_ms", cfg.concurrency.initial_backoff_ms);
        }
    } catch (const json::exception& e) {
        throw ConfigError("bad config file " + path.string() + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

void PipelineConfig::validate() const {
    recitation.validate();
    filters.validate();
    if (concurrency.max_inflight < 1) {
        throw ConfigError("concurrency.max_inflight must be >= 1");
    }
    for (const auto& [what, p] :
         std::initializer_list<std::pair<const char*, const std::filesystem::path*>>{
             {"source", &source_path},
             {"recitation template", &recitation_template_path},
             {"factuality template", &factuality_template_path},
             {"attribution template", &attribution_template_path}}) {
        if (p->empty() || !std::filesystem::exists(*p)) {
            throw ConfigError(std::string(what) + " path does not exist: " + p->string());
        }
    }
    for (const BackendSpec* spec : {&generator, &judge}) {
        if (spec->type == "mock" && !spec->fixture.empty() &&
            !std::filesystem::exists(spec->fixture)) {
            throw ConfigError("mock fixture does not exist: " + spec->fixture.string());
        }
    }
    if (cache_dir.empty() || output_dir.empty()) {
        throw ConfigError("cache_dir and output_dir must be set");
    }
}

std::shared_ptr<gateway::Backend> make_backend(const BackendSpec& spec, std::uint64_t seed) {
    if (spec.type == "mock") {
        gateway::MockBackendConfig mc;
        mc.fixture = spec.fixture;
        mc.seed = spec.seed.value_or(seed);
        mc.strict = spec.on_unknown == "error";
        mc.backend_id = spec.backend_id.empty() ? "mock" : spec.backend_id;
        mc.fallback_answer_marker = spec.fallback_answer_marker;
        mc.fallback_violation_rate = spec.fallback_violation_rate;
        return std::make_shared<gateway::MockBackend>(std::move(mc));
    }
    if (spec.type == "http") {
        gateway::HttpBackendConfig hc;
        hc.base_url = spec.base_url;
        hc.api_key_env = spec.api_key_env;
        hc.backend_id = spec.backend_id;
        hc.timeout_ms = spec.timeout_ms;
        return std::make_shared<gateway::HttpBackend>(std::move(hc));
    }
    throw ConfigError("unknown backend type: " + spec.type);
}

std::unique_ptr<quality::NliScorer> make_scorer(const ScorerSpec& spec, std::uint64_t seed) {
    if (spec.type == "mock") {
        return std::make_unique<quality::MockNliScorer>(spec.fixture, spec.seed.value_or(seed),
                                                        spec.strict);
    }
    if (spec.type == "http") {
        return std::make_unique<quality::HttpNliScorer>(spec.base_url, spec.api_key_env,
                                                        spec.timeout_ms);
    }
    throw ConfigError("unknown scorer type: " + spec.type);
}

PipelineContext PipelineContext::create(PipelineConfig config) {
    auto generator = make_backend(config.generator, config.seed);
    auto judge = make_backend(config.judge, config.seed);
    return create(std::move(config), std::move(generator), std::move(judge));
}

PipelineContext PipelineContext::create(PipelineConfig config,
                                        std::shared_ptr<gateway::Backend> generator_backend,
                                        std::shared_ptr<gateway::Backend> judge_backend) {
    PipelineContext ctx;
    ctx.config = std::move(config);
    ctx.generator_backend = std::move(generator_backend);
    ctx.judge_backend = std::move(judge_backend);
    ctx.limiter = std::make_shared<gateway::RateLimiter>(ctx.config.concurrency.max_inflight,
                                                         ctx.config.concurrency.per_second);
    gateway::RetryPolicy retry;
    retry.max_retries = ctx.config.concurrency.max_retries;
    retry.initial_backoff = std::chrono::milliseconds(ctx.config.concurrency.initial_backoff_ms);
    ctx.generator = std::make_unique<gateway::Gateway>(ctx.generator_backend,
                                                       ctx.config.cache_dir, retry, ctx.limiter);
    ctx.judge = std::make_unique<gateway::Gateway>(ctx.judge_backend, ctx.config.cache_dir,
                                                   retry, ctx.limiter);
    return ctx;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

DatasetManifest load_or_new_manifest(const PipelineConfig& config) {
    const auto path = config.output_dir / "manifest.json";
    if (std::filesystem::exists(path)) {
        return corpus::load_manifest(path);
    }
    DatasetManifest m;
    m.seed = config.seed;
    m.config_snapshot = config.snapshot;
    return m;
}

void save_manifest(const DatasetManifest& m, const PipelineConfig& config) {
    corpus::write_manifest(m, config.output_dir / "manifest.json");
}

std::map<std::string, corpus::SourceQuestion> question_index(
    const std::vector<corpus::SourceQuestion>& questions) {
    std::map<std::string, corpus::SourceQuestion> index;
    for (const auto& q : questions) index.emplace(q.question_id, q);
    return index;
}

}  // namespace

std::filesystem::path run_generate(PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.config;
    const auto questions = corpus::load_source_dataset(cfg.source_path, cfg.source_format);
    const auto tmpl = recitation::RecitationPromptTemplate::load(cfg.recitation_template_path);

    std::vector<std::vector<corpus::RecitationCandidate>> per_question(questions.size());
    gateway::parallel_for(questions.size(), cfg.concurrency.max_inflight, [&](std::size_t i) {
        try {
            per_question[i] = recitation::generate_recitations(
                *ctx.generator, tmpl, cfg.recitation, questions[i], cfg.seed, 1);
        } catch (const TransportError&) {
            throw;
        } catch (const Error& e) {
            // e.g. a question colliding with a template marker: record every
            // sample as a backend_error violation and carry on
            std::vector<corpus::RecitationCandidate> failed(
                static_cast<std::size_t>(cfg.recitation.k_samples));
            for (int s = 0; s < cfg.recitation.k_samples; ++s) {
                auto& c = failed[static_cast<std::size_t>(s)];
                c.question_id = questions[i].question_id;
                c.sample_index = s;
                c.raw_completion = std::string("error: ") + e.what();
                c.violation = corpus::ViolationReason::BackendError;
                c.provenance = {ctx.generator->backend_id(), std::string(64, '0'),
                                cfg.recitation.temperature, s, ""};
            }
            per_question[i] = std::move(failed);
        }
    });

    std::vector<corpus::RecitationCandidate> candidates;
    candidates.reserve(questions.size() * static_cast<std::size_t>(cfg.recitation.k_samples));
    for (auto& group : per_question) {
        for (auto& c : group) candidates.push_back(std::move(c));
    }
    const auto out_path = cfg.output_dir / "candidates.jsonl";
    corpus::write_candidates(candidates, out_path);

    DatasetManifest manifest = load_or_new_manifest(cfg);
    manifest.seed = cfg.seed;
    manifest.config_snapshot = cfg.snapshot;
    manifest.stage_counts["questions_in"] = static_cast<std::int64_t>(questions.size());
    manifest.stage_counts["raw_samples"] = static_cast<std::int64_t>(candidates.size());
    manifest.stage_counts["parsed"] = static_cast<std::int64_t>(
        std::count_if(candidates.begin(), candidates.end(), [](const auto& c) { return c.parsed; }));
    save_manifest(manifest, cfg);
    return out_path;
}

std::filesystem::path run_filter(PipelineContext& ctx,
                                 std::optional<std::filesystem::path> candidates_path) {
    const PipelineConfig& cfg = ctx.config;
    const auto questions =
        question_index(corpus::load_source_dataset(cfg.source_path, cfg.source_format));
    const auto in_path = candidates_path.value_or(cfg.output_dir / "candidates.jsonl");
    const auto candidates = corpus::load_candidates(in_path);

    // Answer diversity over parsed candidates, and per-question parse health.
    std::unordered_map<std::string, std::set<std::string>> unique_answers;
    std::unordered_map<std::string, bool> any_parsed;
    for (const auto& c : candidates) {
        if (c.parsed) {
            unique_answers[c.question_id].insert(filters::normalize_answer_surface(c.answer));
            any_parsed[c.question_id] = true;
        } else {
            any_parsed.emplace(c.question_id, false);
        }
    }
    double diversity = 0.0;
    if (!unique_answers.empty()) {
        for (const auto& [qid, answers] : unique_answers) {
            diversity += static_cast<double>(answers.size());
        }
        diversity /= static_cast<double>(unique_answers.size());
    }
    std::int64_t all_parse_failures = 0;
    for (const auto& [qid, parsed] : any_parsed) {
        if (!parsed) ++all_parse_failures;
    }

    filters::StageStats stats;
    auto scored = filters::attach_surface_match(candidates, questions, cfg.filters);
    auto post_surface = filters::apply_surface_prefilter(std::move(scored), cfg.filters, stats);
    corpus::write_scored(post_surface, cfg.output_dir / "post_surface.jsonl");
    const auto post_surface_count = static_cast<std::int64_t>(post_surface.size());

    const auto factuality_tmpl =
        filters::FactualityPromptTemplate::load(cfg.factuality_template_path);
    filters::score_factuality(*ctx.judge, factuality_tmpl, post_surface, questions, cfg.filters,
                              cfg.seed, cfg.concurrency.max_inflight, stats);
    const std::int64_t factuality_errors = stats.judge_errors;
    auto post_factuality =
        filters::apply_factuality_filter(std::move(post_surface), cfg.filters, stats);
    corpus::write_scored(post_factuality, cfg.output_dir / "post_factuality.jsonl");
    const auto post_factuality_count = static_cast<std::int64_t>(post_factuality.size());

    const auto attribution_tmpl =
        filters::AttributionPromptTemplate::load(cfg.attribution_template_path);
    filters::score_attribution(*ctx.judge, attribution_tmpl, post_factuality, questions,
                               cfg.filters, cfg.seed, cfg.concurrency.max_inflight, stats);
    auto post_attribution =
        filters::apply_attribution_filter(std::move(post_factuality), cfg.filters, stats);
    const auto out_path = cfg.output_dir / "post_attribution.jsonl";
    corpus::write_scored(post_attribution, out_path);

    DatasetManifest manifest = load_or_new_manifest(cfg);
    manifest.stage_counts["post_surface"] = post_surface_count;
    manifest.stage_counts["post_factuality"] = post_factuality_count;
    manifest.stage_counts["post_attribution"] =
        static_cast<std::int64_t>(post_attribution.size());
    manifest.judge_errors_factuality = factuality_errors;
    manifest.judge_errors_attribution = stats.judge_errors - factuality_errors;
    manifest.unique_answers_per_question = diversity;
    manifest.questions_all_parse_failures = all_parse_failures;
    save_manifest(manifest, cfg);
    return out_path;
}

std::filesystem::path run_select(PipelineContext& ctx,
                                 std::optional<std::filesystem::path> post_attribution_path) {
    const PipelineConfig& cfg = ctx.config;
    const auto questions =
        question_index(corpus::load_source_dataset(cfg.source_path, cfg.source_format));
    const auto in_path = post_attribution_path.value_or(cfg.output_dir / "post_attribution.jsonl");
    const auto survivors = corpus::load_scored(in_path);

    const auto records = filters::select_best_per_question(survivors, questions, cfg.filters);
    const auto out_path = cfg.output_dir / "dataset.jsonl";
    corpus::write_cf_dataset(records, out_path);

    DatasetManifest manifest = load_or_new_manifest(cfg);
    manifest.stage_counts["selected"] = static_cast<std::int64_t>(records.size());
    manifest.questions_selected = static_cast<std::int64_t>(records.size());
    const std::int64_t questions_in = manifest.stage_counts.count("questions_in")
                                          ? manifest.stage_counts["questions_in"]
                                          : static_cast<std::int64_t>(questions.size());
    if (manifest.questions_all_parse_failures < 0) manifest.questions_all_parse_failures = 0;
    manifest.questions_no_survivors =
        questions_in - manifest.questions_selected - manifest.questions_all_parse_failures;
    save_manifest(manifest, cfg);
    return out_path;
}

std::filesystem::path run_pipeline(PipelineContext& ctx) {
    run_generate(ctx);
    run_filter(ctx);
    return run_select(ctx);
}

quality::QualityReport run_quality(const std::filesystem::path& dataset_path,
                                   quality::NliScorer& scorer,
                                   const quality::QualityConfig& config,
                                   const std::filesystem::path& report_path) {
    const auto records = corpus::load_cf_dataset(dataset_path);
    quality::QualityReport report = quality::score_dataset(records, scorer, config);
    quality::write_quality_report(report, report_path);
    return report;
}

metrics::MetricReport run_score(const std::vector<ScoreInput>& inputs,
                                const std::vector<std::string>& ood_datasets,
                                const metrics::MetricNormalizationRules& rules,
                                const std::filesystem::path& report_path) {
    if (inputs.empty()) {
        throw ConfigError("score requires at least one dataset/predictions pair");
    }
    metrics::MetricReport report;
    for (const auto& input : inputs) {
        const auto dataset =
            corpus::load_source_dataset(input.dataset_path, corpus::SourceFormat::TriviaQaMrqa);
        const auto predictions = corpus::load_predictions(input.predictions_path);
        if (!report.per_dataset
                 .emplace(input.dataset_name, metrics::score_predictions(dataset, predictions, rules))
                 .second) {
            throw ConfigError("duplicate dataset name \"" + input.dataset_name + "\"");
        }
    }
    report.ood_datasets = ood_datasets;
    if (!ood_datasets.empty()) {
        report.ood_average = metrics::aggregate_ood(report.per_dataset, ood_datasets);
    }
    metrics::write_metric_report(report, report_path);
    return report;
}

std::string render_manifest_summary(const DatasetManifest& manifest) {
    std::ostringstream os;
    os << "stage counts:\n";
    for (const char* stage : corpus::kStageOrder) {
        auto it = manifest.stage_counts.find(stage);
        if (it == manifest.stage_counts.end()) continue;
        os << "  " << stage << ": " << it->second << '\n';
    }
    if (manifest.questions_selected >= 0) {
        os << "question outcomes: selected=" << manifest.questions_selected
           << " no_survivors=" << manifest.questions_no_survivors
           << " all_parse_failures=" << manifest.questions_all_parse_failures << '\n';
    }
    if (manifest.unique_answers_per_question >= 0.0) {
        os << "unique answers per question: " << manifest.unique_answers_per_question << '\n';
    }
    os << "judge errors: factuality=" << manifest.judge_errors_factuality
       << " attribution=" << manifest.judge_errors_attribution << '\n';
    os << "seed: " << manifest.seed << '\n';
    return os.str();
}

}  // namespace cfqa::pipeline
