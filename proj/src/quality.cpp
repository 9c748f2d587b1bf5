#include "cfqa/quality.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>

#include <httplib.h>

#include "cfqa/errors.hpp"
#include "cfqa/gateway.hpp"
#include "cfqa/mock_backend.hpp"
#include "cfqa/sha256.hpp"

namespace cfqa::quality {

using nlohmann::json;

MockNliScorer::MockNliScorer(std::filesystem::path fixture, std::uint64_t seed, bool strict)
    : seed_(seed), strict_(strict) {
    if (fixture.empty()) return;
    std::ifstream in(fixture, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open NLI fixture: " + fixture.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw ConfigError("malformed NLI fixture entry at " + fixture.string() + ":" +
                              std::to_string(line_no));
        }
        Key key;
        if (j.contains("premise_hash") && !j["premise_hash"].is_null()) {
            key.premise_hash = j["premise_hash"].get<std::string>();
        }
        if (j.contains("hypothesis_hash") && !j["hypothesis_hash"].is_null()) {
            key.hypothesis_hash = j["hypothesis_hash"].get<std::string>();
        }
        NliDistribution d;
        d.entailment = j.at("entailment").get<double>();
        d.neutral = j.at("neutral").get<double>();
        d.contradiction = j.at("contradiction").get<double>();
        entries_[key] = d;
    }
}

NliDistribution MockNliScorer::score(const NliQuery& query) {
    if (query.premise.empty() || query.hypothesis.empty()) {
        throw DataError("NLI query fields must be non-empty");
    }
    const std::string ph = sha256_hex(query.premise);
    const std::string hh = sha256_hex(query.hypothesis);
    // most specific first
    for (const Key& key : {Key{ph, hh}, Key{ph, ""}, Key{"", hh}}) {
        auto it = entries_.find(key);
        if (it != entries_.end()) return it->second;
    }
    if (strict_) {
        throw DataError("mock NLI scorer has no entry for premise_hash " + ph +
                        " / hypothesis_hash " + hh);
    }
    const std::string base = ph + ':' + hh + ':' + std::to_string(seed_);
    const double a = gateway::hash_uniform(base + ":e");
    const double b = gateway::hash_uniform(base + ":c");
    NliDistribution d;
    const double total = a + b + 0.2;  // keep some neutral mass
    d.entailment = a / total;
    d.contradiction = b / total;
    d.neutral = 0.2 / total;
    return d;
}

HttpNliScorer::HttpNliScorer(std::string base_url, std::string api_key_env, int timeout_ms)
    : base_url_(std::move(base_url)), timeout_ms_(timeout_ms) {
    if (base_url_.empty()) {
        throw ConfigError("http NLI scorer requires a base_url");
    }
    if (!api_key_env.empty()) {
        const char* key = std::getenv(api_key_env.c_str());
        if (key == nullptr) {
            throw ConfigError("environment variable \"" + api_key_env +
                              "\" (api key) is not set");
        }
        api_key_ = key;
    }
}

NliDistribution HttpNliScorer::score(const NliQuery& query) {
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    json body;
    body["premise"] = query.premise;
    body["hypothesis"] = query.hypothesis;
    auto result = client.Post("/v1/nli", headers, body.dump(), "application/json");
    if (!result || result->status != 200) {
        throw TransportError("NLI scorer request to " + base_url_ + " failed");
    }
    json j = json::parse(result->body, nullptr, false);
    if (j.is_discarded()) {
        throw ContentError("NLI scorer returned non-JSON body");
    }
    NliDistribution d;
    d.entailment = j.at("entailment").get<double>();
    d.neutral = j.at("neutral").get<double>();
    d.contradiction = j.at("contradiction").get<double>();
    return d;
}

std::string format_premise(std::string_view document, std::string_view question) {
    if (document.empty() || question.empty()) {
        throw DataError("premise requires non-empty document and question");
    }
    std::string out(document);
    out += "\n\n";
    out += question;
    return out;
}

std::string format_hypothesis(std::string_view question, std::string_view answer) {
    if (question.empty() || answer.empty()) {
        throw DataError("hypothesis requires non-empty question and answer");
    }
    std::string out(question);
    out += "\n";
    out += answer;
    return out;
}

QualityReport score_dataset(std::span<const corpus::CounterfactualRecord> records,
                            NliScorer& scorer, const QualityConfig& config) {
    if (records.empty()) {
        throw DataError("cannot score an empty dataset: aggregates are undefined");
    }
    std::vector<std::optional<PerExampleQuality>> slots(records.size());
    std::atomic<std::int64_t> skipped{0};
    gateway::parallel_for(records.size(), config.max_workers, [&](std::size_t i) {
        const auto& r = records[i];
        try {
            const std::string premise = format_premise(r.document, r.question_text);
            const NliDistribution vs_generated =
                scorer.score({premise, format_hypothesis(r.question_text, r.answer)});
            const NliDistribution vs_gold = scorer.score(
                {premise, format_hypothesis(r.question_text, r.original_gold_answer)});
            slots[i] = PerExampleQuality{r.question_id, vs_generated.entailment,
                                         vs_gold.contradiction};
        } catch (const Error&) {
            skipped.fetch_add(1);
        }
    });

    QualityReport report;
    report.skipped = skipped.load();
    double attribution_sum = 0.0;
    double counterfactuality_sum = 0.0;
    for (auto& slot : slots) {
        if (!slot) continue;
        if (config.aggregate == Aggregate::Mean) {
            attribution_sum += slot->entailment_generated;
            counterfactuality_sum += slot->contradiction_gold;
        } else {
            attribution_sum += slot->entailment_generated > config.tau ? 1.0 : 0.0;
            counterfactuality_sum += slot->contradiction_gold > config.tau ? 1.0 : 0.0;
        }
        report.per_example.push_back(std::move(*slot));
    }
    report.n = static_cast<std::int64_t>(report.per_example.size());
    if (report.n == 0) {
        throw DataError("every record failed NLI scoring; aggregates are undefined");
    }
    report.attribution_mean = attribution_sum / static_cast<double>(report.n);
    report.counterfactuality_mean = counterfactuality_sum / static_cast<double>(report.n);
    return report;
}

void write_quality_report(const QualityReport& report, const std::filesystem::path& path) {
    corpus::ordered_json j;
    j["attribution_mean"] = report.attribution_mean;
    j["counterfactuality_mean"] = report.counterfactuality_mean;
    j["n"] = report.n;
    j["skipped"] = report.skipped;
    corpus::ordered_json per = corpus::ordered_json::array();
    for (const auto& e : report.per_example) {
        corpus::ordered_json row;
        row["question_id"] = e.question_id;
        row["entailment_vs_generated"] = e.entailment_generated;
        row["contradiction_vs_gold"] = e.contradiction_gold;
        per.push_back(row);
    }
    j["per_example"] = per;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write quality report: " + path.string());
    }
    out << j.dump(2) << '\n';
}

}  // namespace cfqa::quality
