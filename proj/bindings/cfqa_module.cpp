#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cfqa/corpus.hpp"
#include "cfqa/errors.hpp"
#include "cfqa/filters.hpp"
#include "cfqa/metrics.hpp"
#include "cfqa/pipeline.hpp"
#include "cfqa/quality.hpp"
#include "cfqa/recitation.hpp"
#include "cfqa/sha256.hpp"

namespace py = pybind11;
using namespace cfqa;

namespace {

recitation::RecitationPromptTemplate template_from_path(const std::string& path) {
    return recitation::RecitationPromptTemplate::load(path);
}

py::dict parse_to_dict(const std::string& raw, const recitation::RecitationPromptTemplate& tmpl,
                       bool multiline) {
    const auto outcome = recitation::parse_recitation(raw, tmpl, multiline);
    py::dict d;
    d["parsed"] = outcome.parsed;
    if (outcome.parsed) {
        d["document"] = outcome.document;
        d["answer"] = outcome.answer;
    } else {
        d["reason"] = corpus::to_string(outcome.reason);
    }
    return d;
}

py::dict manifest_to_dict(const std::filesystem::path& output_dir) {
    const auto manifest = corpus::load_manifest(output_dir / "manifest.json");
    py::dict d;
    py::dict counts;
    for (const auto& [stage, n] : manifest.stage_counts) counts[py::str(stage)] = n;
    d["stage_counts"] = counts;
    d["seed"] = manifest.seed;
    d["unique_answers_per_question"] = manifest.unique_answers_per_question;
    if (manifest.questions_selected >= 0) {
        py::dict outcomes;
        outcomes["selected"] = manifest.questions_selected;
        outcomes["no_survivors"] = manifest.questions_no_survivors;
        outcomes["all_parse_failures"] = manifest.questions_all_parse_failures;
        d["question_outcomes"] = outcomes;
    }
    return d;
}

}  // namespace

PYBIND11_MODULE(_cfqa, m) {
    m.doc() = "counterfactual open-book QA dataset pipeline";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<TransportError>(m, "TransportError", PyExc_RuntimeError);

    py::class_<corpus::SourceQuestion>(m, "SourceQuestion")
        .def(py::init<>())
        .def_readwrite("question_id", &corpus::SourceQuestion::question_id)
        .def_readwrite("question_text", &corpus::SourceQuestion::question_text)
        .def_readwrite("gold_answers", &corpus::SourceQuestion::gold_answers)
        .def_readwrite("source_dataset", &corpus::SourceQuestion::source_dataset);

    m.def(
        "load_source_dataset",
        [](const std::filesystem::path& path, const std::string& format) {
            return corpus::load_source_dataset(path, corpus::source_format_from_string(format));
        },
        py::arg("path"), py::arg("format") = "triviaqa-mrqa");

    m.def("sha256_hex", [](const std::string& s) { return sha256_hex(s); });

    // surface-form operations
    m.def("normalize_answer_surface",
          [](const std::string& s) { return filters::normalize_answer_surface(s); });
    m.def(
        "surface_form_match",
        [](const std::string& answer, const std::vector<std::string>& aliases) {
            return filters::surface_form_match(answer, aliases);
        },
        py::arg("answer"), py::arg("gold_aliases"));
    m.def("normalized_yes", &filters::normalized_yes, py::arg("p_yes"), py::arg("p_no"));

    // recitation prompt building and parsing
    py::class_<recitation::RecitationPromptTemplate>(m, "RecitationPromptTemplate")
        .def_static("load", &template_from_path)
        .def_readonly("question_marker", &recitation::RecitationPromptTemplate::question_marker)
        .def_readonly("answer_marker", &recitation::RecitationPromptTemplate::answer_marker);
    m.def(
        "build_recitation_prompt",
        [](const recitation::RecitationPromptTemplate& tmpl, const std::string& question_text) {
            corpus::SourceQuestion q;
            q.question_id = "q";
            q.question_text = question_text;
            q.gold_answers = {"-"};
            return recitation::build_recitation_prompt(tmpl, q);
        },
        py::arg("template"), py::arg("question"));
    m.def("parse_recitation", &parse_to_dict, py::arg("raw_completion"), py::arg("template"),
          py::arg("multiline_answers") = false);

    // NLI formatting
    m.def("format_premise",
          [](const std::string& d, const std::string& q) { return quality::format_premise(d, q); });
    m.def("format_hypothesis", [](const std::string& q, const std::string& a) {
        return quality::format_hypothesis(q, a);
    });

    // metrics
    py::class_<metrics::MetricNormalizationRules>(m, "MetricNormalizationRules")
        .def(py::init<>())
        .def_readwrite("lowercase", &metrics::MetricNormalizationRules::lowercase)
        .def_readwrite("strip_punctuation", &metrics::MetricNormalizationRules::strip_punctuation)
        .def_readwrite("remove_articles", &metrics::MetricNormalizationRules::remove_articles)
        .def_readwrite("collapse_whitespace",
                       &metrics::MetricNormalizationRules::collapse_whitespace);
    m.def(
        "normalize_for_metric",
        [](const std::string& s, const metrics::MetricNormalizationRules& rules) {
            return metrics::normalize_for_metric(s, rules);
        },
        py::arg("s"), py::arg("rules") = metrics::MetricNormalizationRules{});
    m.def(
        "token_f1",
        [](const std::string& p, const std::string& g,
           const metrics::MetricNormalizationRules& rules) { return metrics::token_f1(p, g, rules); },
        py::arg("prediction"), py::arg("gold"),
        py::arg("rules") = metrics::MetricNormalizationRules{});
    m.def(
        "exact_match",
        [](const std::string& p, const std::string& g,
           const metrics::MetricNormalizationRules& rules) {
            return metrics::exact_match(p, g, rules);
        },
        py::arg("prediction"), py::arg("gold"),
        py::arg("rules") = metrics::MetricNormalizationRules{});
    m.def(
        "aggregate_ood",
        [](const std::map<std::string, std::pair<double, double>>& per_dataset,
           const std::vector<std::string>& ood) {
            std::map<std::string, metrics::DatasetScore> scores;
            for (const auto& [name, fe] : per_dataset) {
                scores[name] = {fe.first, fe.second, 0, 0};
            }
            const auto avg = metrics::aggregate_ood(scores, ood);
            return std::make_pair(avg.f1, avg.em);
        },
        py::arg("per_dataset"), py::arg("ood_datasets"),
        "per_dataset maps name -> (f1, em); returns (f1, em) unweighted means");

    // pipeline entry point
    m.def(
        "run_pipeline",
        [](const std::filesystem::path& config_path, py::object seed, py::object mode,
           py::object cache_dir) {
            pipeline::Overrides overrides;
            if (!seed.is_none()) overrides.seed = seed.cast<std::uint64_t>();
            if (!mode.is_none()) overrides.mode = mode.cast<std::string>();
            if (!cache_dir.is_none()) {
                overrides.cache_dir = cache_dir.cast<std::filesystem::path>();
            }
            auto config = pipeline::PipelineConfig::load(config_path, overrides);
            auto ctx = pipeline::PipelineContext::create(std::move(config));
            const auto dataset_path = pipeline::run_pipeline(ctx);
            py::dict result = manifest_to_dict(ctx.config.output_dir);
            result["dataset_path"] = dataset_path;
            return result;
        },
        py::arg("config_path"), py::arg("seed") = py::none(), py::arg("mode") = py::none(),
        py::arg("cache_dir") = py::none(),
        "Run generate -> filter -> select; returns the manifest summary");
}
