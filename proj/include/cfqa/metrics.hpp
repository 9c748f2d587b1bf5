#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfqa/corpus.hpp"

namespace cfqa::metrics {

/// Answer normalization knobs. The default profile (all four enabled) is the
/// standard extractive-QA convention: lowercase, strip ASCII punctuation,
/// remove English articles, whitespace-tokenize.
struct MetricNormalizationRules {
    bool lowercase = true;
    bool strip_punctuation = true;
    bool remove_articles = true;  // "a", "an", "the"
    bool collapse_whitespace = true;
};

std::vector<std::string> normalize_for_metric(std::string_view s,
                                              const MetricNormalizationRules& rules = {});

/// Multiset-intersection F1 over normalized tokens, in [0,1]. Two empty
/// normalized answers agree (1.0); one-sided emptiness scores 0.0.
double token_f1(std::string_view prediction, std::string_view gold,
                const MetricNormalizationRules& rules = {});

/// True iff the joined normalized token sequences are equal.
bool exact_match(std::string_view prediction, std::string_view gold,
                 const MetricNormalizationRules& rules = {});

struct DatasetScore {
    double f1 = 0.0;  // 0-100 scale
    double em = 0.0;  // 0-100 scale
    std::int64_t n = 0;
    std::int64_t missing = 0;  // questions without a prediction (scored 0)
};

/// Per-question score is the max over gold aliases; the dataset score is
/// 100 x mean over all questions. Predictions with unknown question_ids are
/// an error; duplicate predictions for one question are an error.
DatasetScore score_predictions(std::span<const corpus::SourceQuestion> dataset,
                               std::span<const corpus::PredictionRecord> predictions,
                               const MetricNormalizationRules& rules = {});

struct OodAverage {
    double f1 = 0.0;
    double em = 0.0;
};

/// Unweighted arithmetic mean across the named datasets.
OodAverage aggregate_ood(const std::map<std::string, DatasetScore>& per_dataset,
                         std::span<const std::string> ood_datasets);

struct MetricReport {
    std::map<std::string, DatasetScore> per_dataset;
    std::vector<std::string> ood_datasets;
    OodAverage ood_average;
};

void write_metric_report(const MetricReport& report, const std::filesystem::path& path);

/// Aligned-column text table: one row per dataset plus the OOD average.
std::string render_metric_table(const MetricReport& report);

}  // namespace cfqa::metrics
