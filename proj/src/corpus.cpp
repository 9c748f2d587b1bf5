#include "cfqa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cfqa/errors.hpp"
#include "cfqa/text.hpp"

namespace cfqa::corpus {

namespace {

using nlohmann::json;

std::string line_context(const std::filesystem::path& path, std::size_t line_no,
                         std::size_t byte_offset) {
    std::ostringstream os;
    os << path.string() << ":" << line_no << " (byte offset " << byte_offset << ")";
    return os.str();
}

/// Calls fn(line, line_no, byte_offset) for every line of a JSONL file.
/// Blank lines are skipped; the final line may lack a trailing newline.
template <typename Fn>
void for_each_jsonl_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t line_bytes = line.size() + 1;  // getline consumed the '\n'
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!text::is_blank(line)) {
            fn(line, line_no, offset);
        }
        offset += line_bytes;
    }
}

json parse_json_line(const std::filesystem::path& path, const std::string& line,
                     std::size_t line_no, std::size_t offset) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw DataError("malformed JSON object at " + line_context(path, line_no, offset));
    }
    return j;
}

std::string require_string(const json& j, const char* key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw DataError(std::string("missing or non-string field \"") + key + "\" at " + ctx);
    }
    return it->get<std::string>();
}

double require_number(const json& j, const char* key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) {
        throw DataError(std::string("missing or non-numeric field \"") + key + "\" at " + ctx);
    }
    return it->get<double>();
}

std::vector<std::string> require_string_array(const json& j, const char* key,
                                              const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_array()) {
        throw DataError(std::string("missing or non-array field \"") + key + "\" at " + ctx);
    }
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw DataError(std::string("non-string entry in \"") + key + "\" at " + ctx);
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

void validate_gold_answers(const std::vector<std::string>& answers, const std::string& ctx) {
    if (answers.empty()) {
        throw DataError("empty answer list at " + ctx);
    }
    for (const auto& a : answers) {
        if (text::trim(a).empty()) {
            throw DataError("blank answer entry at " + ctx);
        }
    }
}

/// Opens for writing, truncating. Binary mode keeps emission byte-stable.
std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open file for writing: " + path.string());
    }
    return out;
}

}  // namespace

SourceFormat source_format_from_string(std::string_view s) {
    if (s == "triviaqa-mrqa") return SourceFormat::TriviaQaMrqa;
    if (s == "generic-jsonl") return SourceFormat::GenericJsonl;
    throw ConfigError("unknown source format: " + std::string(s));
}

std::string to_string(SourceFormat f) {
    return f == SourceFormat::TriviaQaMrqa ? "triviaqa-mrqa" : "generic-jsonl";
}

std::string to_string(ViolationReason r) {
    switch (r) {
        case ViolationReason::MissingBlankLine: return "missing_blank_line";
        case ViolationReason::MissingAnswerMarker: return "missing_answer_marker";
        case ViolationReason::EmptyDocument: return "empty_document";
        case ViolationReason::EmptyAnswer: return "empty_answer";
        case ViolationReason::TrailingGarbage: return "trailing_garbage";
        case ViolationReason::BackendError: return "backend_error";
    }
    throw DataError("unknown violation reason value");
}

ViolationReason violation_reason_from_string(std::string_view s) {
    if (s == "missing_blank_line") return ViolationReason::MissingBlankLine;
    if (s == "missing_answer_marker") return ViolationReason::MissingAnswerMarker;
    if (s == "empty_document") return ViolationReason::EmptyDocument;
    if (s == "empty_answer") return ViolationReason::EmptyAnswer;
    if (s == "trailing_garbage") return ViolationReason::TrailingGarbage;
    if (s == "backend_error") return ViolationReason::BackendError;
    throw DataError("unknown violation reason: " + std::string(s));
}

std::vector<SourceQuestion> load_source_dataset(const std::filesystem::path& path,
                                                SourceFormat format) {
    std::vector<SourceQuestion> questions;
    std::unordered_set<std::string> seen_ids;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no,
                                  std::size_t offset) {
        const std::string ctx = line_context(path, line_no, offset);
        json j = parse_json_line(path, line, line_no, offset);
        SourceQuestion q;
        if (format == SourceFormat::TriviaQaMrqa) {
            q.question_id = require_string(j, "qid", ctx);
            q.question_text = require_string(j, "question", ctx);
            q.gold_answers = require_string_array(j, "answers", ctx);
            q.source_dataset = "triviaqa-mrqa";
        } else {
            q.question_id = require_string(j, "question_id", ctx);
            q.question_text = require_string(j, "question_text", ctx);
            q.gold_answers = require_string_array(j, "gold_answers", ctx);
            q.source_dataset = j.value("source_dataset", std::string("generic"));
        }
        validate_gold_answers(q.gold_answers, ctx);
        if (q.question_id.empty()) {
            throw DataError("empty question id at " + ctx);
        }
        if (!seen_ids.insert(q.question_id).second) {
            throw DataError("duplicate question_id \"" + q.question_id + "\" at " + ctx);
        }
        questions.push_back(std::move(q));
    });
    return questions;
}

ordered_json to_json(const Provenance& p) {
    ordered_json j;
    j["backend_id"] = p.backend_id;
    j["prompt_hash"] = p.prompt_hash;
    j["temperature"] = p.temperature;
    j["sample_index"] = p.sample_index;
    j["created_at"] = p.created_at;
    return j;
}

Provenance provenance_from_json(const json& j) {
    Provenance p;
    p.backend_id = j.at("backend_id").get<std::string>();
    p.prompt_hash = j.at("prompt_hash").get<std::string>();
    p.temperature = j.at("temperature").get<double>();
    p.sample_index = j.at("sample_index").get<int>();
    p.created_at = j.at("created_at").get<std::string>();
    return p;
}

ordered_json to_json(const CounterfactualRecord& r) {
    ordered_json j;
    j["qid"] = r.question_id;
    j["question"] = r.question_text;
    j["document"] = r.document;
    j["answer"] = r.answer;
    j["original_gold_answer"] = r.original_gold_answer;
    j["attribution_score"] = r.attribution_score;
    j["factuality_score"] = r.factuality_score;
    j["provenance"] = to_json(r.provenance);
    return j;
}

namespace {

bool is_hex64(const std::string& s) {
    if (s.size() != 64) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    });
}

void validate_record(const CounterfactualRecord& r) {
    const auto fail = [&](const std::string& why) {
        throw DataError("invalid counterfactual record (qid \"" + r.question_id + "\"): " + why);
    };
    if (r.question_id.empty()) fail("empty question_id");
    if (r.question_text.empty()) fail("empty question");
    if (r.document.empty()) fail("empty document");
    if (r.answer.empty()) fail("empty answer");
    if (r.original_gold_answer.empty()) fail("empty original_gold_answer");
    if (!(r.attribution_score >= 0.0 && r.attribution_score <= 1.0)) {
        fail("attribution_score outside [0,1]");
    }
    if (!(r.factuality_score >= 0.0 && r.factuality_score <= 1.0)) {
        fail("factuality_score outside [0,1]");
    }
    if (!is_hex64(r.provenance.prompt_hash)) fail("prompt_hash is not 64 lowercase hex chars");
}

}  // namespace

void write_cf_dataset(const std::vector<CounterfactualRecord>& records,
                      const std::filesystem::path& path) {
    std::vector<const CounterfactualRecord*> sorted;
    sorted.reserve(records.size());
    std::set<std::string> ids;
    for (const auto& r : records) {
        validate_record(r);
        if (!ids.insert(r.question_id).second) {
            throw DataError("duplicate question_id in dataset: \"" + r.question_id + "\"");
        }
        sorted.push_back(&r);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
        return a->question_id < b->question_id;
    });
    auto out = open_output(path);
    for (const auto* r : sorted) {
        out << to_json(*r).dump() << '\n';
    }
}

std::vector<CounterfactualRecord> load_cf_dataset(const std::filesystem::path& path) {
    std::vector<CounterfactualRecord> records;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no,
                                  std::size_t offset) {
        const std::string ctx = line_context(path, line_no, offset);
        json j = parse_json_line(path, line, line_no, offset);
        try {
            CounterfactualRecord r;
            r.question_id = j.at("qid").get<std::string>();
            r.question_text = j.at("question").get<std::string>();
            r.document = j.at("document").get<std::string>();
            r.answer = j.at("answer").get<std::string>();
            r.original_gold_answer = j.at("original_gold_answer").get<std::string>();
            r.attribution_score = j.at("attribution_score").get<double>();
            r.factuality_score = j.at("factuality_score").get<double>();
            r.provenance = provenance_from_json(j.at("provenance"));
            records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError("bad counterfactual record at " + ctx + ": " + e.what());
        }
    });
    return records;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    // Monotone shrinkage along the stage chain after raw_samples; questions_in
    // only bounds raw_samples from below (k >= 1).
    const auto count_of = [&](const char* name) -> std::optional<std::int64_t> {
        auto it = manifest.stage_counts.find(name);
        if (it == manifest.stage_counts.end()) return std::nullopt;
        if (it->second < 0) {
            throw DataError(std::string("negative stage count for ") + name);
        }
        return it->second;
    };
    for (std::size_t i = 1; i + 1 < std::size(kStageOrder); ++i) {
        // chain raw_samples -> parsed -> ... -> selected
        auto cur = count_of(kStageOrder[i]);
        auto next = count_of(kStageOrder[i + 1]);
        if (cur && next && *next > *cur) {
            throw DataError(std::string("non-monotone stage counts: ") + kStageOrder[i + 1] +
                            " > " + kStageOrder[i]);
        }
    }
    auto qin = count_of("questions_in");
    auto raw = count_of("raw_samples");
    if (qin && raw && *raw < *qin && *raw != 0) {
        throw DataError("raw_samples below questions_in");
    }

    ordered_json j;
    ordered_json counts = ordered_json::object();
    for (const char* name : kStageOrder) {
        if (auto c = count_of(name)) counts[name] = *c;
    }
    j["stage_counts"] = counts;

    ordered_json rates = ordered_json::object();
    for (std::size_t i = 2; i < std::size(kStageOrder); ++i) {
        auto cur = count_of(kStageOrder[i]);
        auto before = count_of(kStageOrder[i - 1]);
        if (cur && before) {
            rates[kStageOrder[i]] =
                *before == 0 ? 0.0 : static_cast<double>(*cur) / static_cast<double>(*before);
        }
    }
    j["retention_rates"] = rates;

    if (manifest.questions_selected >= 0) {
        ordered_json outcomes;
        outcomes["selected"] = manifest.questions_selected;
        outcomes["no_survivors"] = manifest.questions_no_survivors;
        outcomes["all_parse_failures"] = manifest.questions_all_parse_failures;
        j["question_outcomes"] = outcomes;
    }
    ordered_json judge_errors;
    judge_errors["factuality"] = manifest.judge_errors_factuality;
    judge_errors["attribution"] = manifest.judge_errors_attribution;
    j["judge_errors"] = judge_errors;
    if (manifest.unique_answers_per_question >= 0.0) {
        j["unique_answers_per_question"] = manifest.unique_answers_per_question;
    }
    j["seed"] = manifest.seed;
    j["config_snapshot"] = manifest.config_snapshot;

    auto out = open_output(path);
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open manifest: " + path.string());
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw DataError("malformed manifest JSON: " + path.string());
    }
    DatasetManifest m;
    const json counts = j.value("stage_counts", json::object());
    for (const auto& [key, value] : counts.items()) {
        m.stage_counts[key] = value.get<std::int64_t>();
    }
    if (j.contains("question_outcomes")) {
        const auto& o = j["question_outcomes"];
        m.questions_selected = o.value("selected", -1);
        m.questions_no_survivors = o.value("no_survivors", -1);
        m.questions_all_parse_failures = o.value("all_parse_failures", -1);
    }
    if (j.contains("judge_errors")) {
        m.judge_errors_factuality = j["judge_errors"].value("factuality", 0);
        m.judge_errors_attribution = j["judge_errors"].value("attribution", 0);
    }
    m.unique_answers_per_question = j.value("unique_answers_per_question", -1.0);
    m.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("config_snapshot")) {
        m.config_snapshot = ordered_json::parse(j["config_snapshot"].dump());
    }
    return m;
}

namespace {

ordered_json candidate_to_json(const RecitationCandidate& c) {
    ordered_json j;
    j["qid"] = c.question_id;
    j["sample_index"] = c.sample_index;
    j["parse_status"] = c.parsed ? "parsed" : "violation";
    if (!c.parsed) {
        j["violation_reason"] = to_string(c.violation.value());
    }
    j["document"] = c.parsed ? json(c.document) : json(nullptr);
    j["answer"] = c.parsed ? json(c.answer) : json(nullptr);
    j["raw_completion"] = c.raw_completion;
    j["provenance"] = to_json(c.provenance);
    return j;
}

RecitationCandidate candidate_from_json(const json& j, const std::string& ctx) {
    try {
        RecitationCandidate c;
        c.question_id = j.at("qid").get<std::string>();
        c.sample_index = j.at("sample_index").get<int>();
        c.parsed = j.at("parse_status").get<std::string>() == "parsed";
        if (!c.parsed) {
            c.violation = violation_reason_from_string(j.at("violation_reason").get<std::string>());
        } else {
            c.document = j.at("document").get<std::string>();
            c.answer = j.at("answer").get<std::string>();
        }
        c.raw_completion = j.at("raw_completion").get<std::string>();
        c.provenance = provenance_from_json(j.at("provenance"));
        if (c.parsed && (c.document.empty() || c.answer.empty())) {
            throw DataError("parsed candidate with empty document or answer at " + ctx);
        }
        return c;
    } catch (const json::exception& e) {
        throw DataError("bad candidate record at " + ctx + ": " + e.what());
    }
}

ordered_json verdict_to_json(const FilterVerdict& v) {
    ordered_json j;
    j["p_yes_raw"] = v.p_yes_raw;
    j["p_no_raw"] = v.p_no_raw;
    j["normalized_yes"] = v.normalized_yes;
    return j;
}

FilterVerdict verdict_from_json(const json& j) {
    FilterVerdict v;
    v.p_yes_raw = j.at("p_yes_raw").get<double>();
    v.p_no_raw = j.at("p_no_raw").get<double>();
    v.normalized_yes = j.at("normalized_yes").get<double>();
    return v;
}

}  // namespace

void write_candidates(const std::vector<RecitationCandidate>& candidates,
                      const std::filesystem::path& path) {
    auto out = open_output(path);
    for (const auto& c : candidates) {
        out << candidate_to_json(c).dump() << '\n';
    }
}

std::vector<RecitationCandidate> load_candidates(const std::filesystem::path& path) {
    std::vector<RecitationCandidate> out;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no,
                                  std::size_t offset) {
        const std::string ctx = line_context(path, line_no, offset);
        out.push_back(candidate_from_json(parse_json_line(path, line, line_no, offset), ctx));
    });
    return out;
}

void write_scored(const std::vector<ScoredCandidate>& candidates,
                  const std::filesystem::path& path) {
    auto out = open_output(path);
    for (const auto& s : candidates) {
        ordered_json j = candidate_to_json(s.candidate);
        j["surface_match"] = s.surface_match;
        j["factuality"] = s.factuality ? ordered_json(verdict_to_json(*s.factuality))
                                       : ordered_json(nullptr);
        j["attribution"] = s.attribution ? ordered_json(verdict_to_json(*s.attribution))
                                         : ordered_json(nullptr);
        out << j.dump() << '\n';
    }
}

std::vector<ScoredCandidate> load_scored(const std::filesystem::path& path) {
    std::vector<ScoredCandidate> out;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no,
                                  std::size_t offset) {
        const std::string ctx = line_context(path, line_no, offset);
        json j = parse_json_line(path, line, line_no, offset);
        try {
            ScoredCandidate s;
            s.candidate = candidate_from_json(j, ctx);
            s.surface_match = j.at("surface_match").get<bool>();
            if (!j.at("factuality").is_null()) s.factuality = verdict_from_json(j["factuality"]);
            if (!j.at("attribution").is_null()) s.attribution = verdict_from_json(j["attribution"]);
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw DataError("bad scored-candidate record at " + ctx + ": " + e.what());
        }
    });
    return out;
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
    std::vector<PredictionRecord> out;
    for_each_jsonl_line(path, [&](const std::string& line, std::size_t line_no,
                                  std::size_t offset) {
        const std::string ctx = line_context(path, line_no, offset);
        json j = parse_json_line(path, line, line_no, offset);
        PredictionRecord p;
        p.question_id = require_string(j, "qid", ctx);
        p.predicted_answer = require_string(j, "answer", ctx);
        out.push_back(std::move(p));
    });
    return out;
}

}  // namespace cfqa::corpus
