#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cfqa::corpus {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Data model shared by every pipeline stage.
// ---------------------------------------------------------------------------

/// One source question. gold_answers is never empty; the first entry is the
/// canonical gold answer and the rest are aliases.
struct SourceQuestion {
    std::string question_id;
    std::string question_text;
    std::vector<std::string> gold_answers;
    std::string source_dataset;
};

enum class SourceFormat { TriviaQaMrqa, GenericJsonl };

SourceFormat source_format_from_string(std::string_view s);
std::string to_string(SourceFormat f);

struct Provenance {
    std::string backend_id;
    std::string prompt_hash;  // 64 lowercase hex chars (SHA-256 of the prompt bytes)
    double temperature = 0.0;
    int sample_index = 0;
    std::string created_at;  // ISO-8601 UTC, empty when unknown
};

enum class ViolationReason {
    MissingBlankLine,
    MissingAnswerMarker,
    EmptyDocument,
    EmptyAnswer,
    TrailingGarbage,
    BackendError,
};

std::string to_string(ViolationReason r);
ViolationReason violation_reason_from_string(std::string_view s);

/// One sampled generation for a question. When parsed is true, document and
/// answer are non-empty; otherwise violation holds the rejection reason and
/// raw_completion is retained for audit.
struct RecitationCandidate {
    std::string question_id;
    int sample_index = 0;
    std::string raw_completion;
    bool parsed = false;
    std::optional<ViolationReason> violation;
    std::string document;
    std::string answer;
    Provenance provenance;
};

/// Normalized Yes-token probability from a judge backend plus the raw
/// per-class probability mass it was computed from.
struct FilterVerdict {
    double p_yes_raw = 0.0;
    double p_no_raw = 0.0;
    double normalized_yes = 0.0;
};

/// A parsed candidate moving through the filter stages. Absent factuality
/// means the candidate was removed by the surface pre-filter or not yet
/// scored; attribution present implies factuality was resolved first.
struct ScoredCandidate {
    RecitationCandidate candidate;
    bool surface_match = false;
    std::optional<FilterVerdict> factuality;
    std::optional<FilterVerdict> attribution;
};

struct CounterfactualRecord {
    std::string question_id;
    std::string question_text;
    std::string document;
    std::string answer;
    std::string original_gold_answer;
    double attribution_score = 0.0;
    double factuality_score = 0.0;
    Provenance provenance;
};

/// Pipeline accounting. stage_counts holds any subset of the stage names in
/// kStageOrder; retention rates are derived from consecutive present stages
/// at write time.
struct DatasetManifest {
    std::map<std::string, std::int64_t> stage_counts;
    std::int64_t questions_selected = -1;
    std::int64_t questions_no_survivors = -1;
    std::int64_t questions_all_parse_failures = -1;
    std::int64_t judge_errors_factuality = 0;
    std::int64_t judge_errors_attribution = 0;
    double unique_answers_per_question = -1.0;  // < 0 means not yet computed
    std::uint64_t seed = 0;
    ordered_json config_snapshot = ordered_json::object();
};

inline constexpr const char* kStageOrder[] = {
    "questions_in",   "raw_samples",      "parsed",   "post_surface",
    "post_factuality", "post_attribution", "selected",
};

struct PredictionRecord {
    std::string question_id;
    std::string predicted_answer;
};

// ---------------------------------------------------------------------------
// File ingestion and emission. All readers reject malformed lines with the
// 1-based line number and byte offset; all writers emit byte-stable output.
// ---------------------------------------------------------------------------

std::vector<SourceQuestion> load_source_dataset(const std::filesystem::path& path,
                                                SourceFormat format);

/// Writes one JSONL line per record, sorted by question_id (byte order),
/// fields in a fixed order. Validates before writing anything: duplicate
/// question_ids, empty fields, and out-of-range scores are rejected.
void write_cf_dataset(const std::vector<CounterfactualRecord>& records,
                      const std::filesystem::path& path);

std::vector<CounterfactualRecord> load_cf_dataset(const std::filesystem::path& path);

/// Pretty-printed JSON with stable key order. Rejects stage counts that are
/// not monotonically non-increasing along kStageOrder (raw_samples exempt,
/// being questions_in * k).
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);

void write_candidates(const std::vector<RecitationCandidate>& candidates,
                      const std::filesystem::path& path);
std::vector<RecitationCandidate> load_candidates(const std::filesystem::path& path);

void write_scored(const std::vector<ScoredCandidate>& candidates,
                  const std::filesystem::path& path);
std::vector<ScoredCandidate> load_scored(const std::filesystem::path& path);

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

ordered_json to_json(const Provenance& p);
Provenance provenance_from_json(const nlohmann::json& j);
ordered_json to_json(const CounterfactualRecord& r);

}  // namespace cfqa::corpus
