#include "cfqa/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cfqa/errors.hpp"
#include "cfqa/text.hpp"

namespace cfqa::metrics {

namespace {

bool is_ascii_punct(char c) {
    static const std::string punct = R"(!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~)";
    return punct.find(c) != std::string::npos;
}

// Word characters for article-boundary detection; non-ASCII bytes count as
// word characters, mirroring unicode-aware \b on letters.
bool is_word_char(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c >= 0x80;
}

std::string remove_articles(const std::string& s) {
    static const char* articles[] = {"a", "an", "the"};
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        bool replaced = false;
        if (i == 0 || !is_word_char(static_cast<unsigned char>(s[i - 1]))) {
            for (const char* article : articles) {
                const std::size_t len = std::char_traits<char>::length(article);
                if (s.compare(i, len, article) == 0 &&
                    (i + len == s.size() ||
                     !is_word_char(static_cast<unsigned char>(s[i + len])))) {
                    out.push_back(' ');
                    i += len;
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) {
            out.push_back(s[i]);
            ++i;
        }
    }
    return out;
}

std::unordered_map<std::string, int> token_counts(const std::vector<std::string>& tokens) {
    std::unordered_map<std::string, int> counts;
    for (const auto& t : tokens) ++counts[t];
    return counts;
}

}  // namespace

std::vector<std::string> normalize_for_metric(std::string_view s,
                                              const MetricNormalizationRules& rules) {
    std::string work = rules.lowercase ? text::fold_case(s) : std::string(s);
    if (rules.strip_punctuation) {
        std::string stripped;
        stripped.reserve(work.size());
        for (char c : work) {
            if (!is_ascii_punct(c)) stripped.push_back(c);
        }
        work = std::move(stripped);
    }
    if (rules.remove_articles) {
        work = remove_articles(work);
    }
    std::vector<std::string> tokens;
    if (rules.collapse_whitespace) {
        std::istringstream stream(work);
        std::string token;
        while (stream >> token) tokens.push_back(token);
    } else {
        // split on single spaces only, preserving other whitespace in tokens
        std::size_t start = 0;
        for (std::size_t i = 0; i <= work.size(); ++i) {
            if (i == work.size() || work[i] == ' ') {
                if (i > start) tokens.push_back(work.substr(start, i - start));
                start = i + 1;
            }
        }
    }
    return tokens;
}

double token_f1(std::string_view prediction, std::string_view gold,
                const MetricNormalizationRules& rules) {
    const auto pred_tokens = normalize_for_metric(prediction, rules);
    const auto gold_tokens = normalize_for_metric(gold, rules);
    if (pred_tokens.empty() || gold_tokens.empty()) {
        return pred_tokens == gold_tokens ? 1.0 : 0.0;
    }
    const auto gold_counts = token_counts(gold_tokens);
    auto remaining = gold_counts;
    int overlap = 0;
    for (const auto& t : pred_tokens) {
        auto it = remaining.find(t);
        if (it != remaining.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / pred_tokens.size();
    const double recall = static_cast<double>(overlap) / gold_tokens.size();
    return 2.0 * precision * recall / (precision + recall);
}

bool exact_match(std::string_view prediction, std::string_view gold,
                 const MetricNormalizationRules& rules) {
    return normalize_for_metric(prediction, rules) == normalize_for_metric(gold, rules);
}

DatasetScore score_predictions(std::span<const corpus::SourceQuestion> dataset,
                               std::span<const corpus::PredictionRecord> predictions,
                               const MetricNormalizationRules& rules) {
    std::unordered_map<std::string, const corpus::SourceQuestion*> by_id;
    for (const auto& q : dataset) {
        by_id.emplace(q.question_id, &q);
    }
    std::unordered_map<std::string, const std::string*> answers;
    for (const auto& p : predictions) {
        if (by_id.find(p.question_id) == by_id.end()) {
            throw DataError("prediction references unknown question_id \"" + p.question_id +
                            "\"");
        }
        if (!answers.emplace(p.question_id, &p.predicted_answer).second) {
            throw DataError("duplicate prediction for question_id \"" + p.question_id + "\"");
        }
    }

    DatasetScore score;
    score.n = static_cast<std::int64_t>(dataset.size());
    if (dataset.empty()) return score;
    double f1_sum = 0.0;
    double em_sum = 0.0;
    for (const auto& q : dataset) {
        auto it = answers.find(q.question_id);
        if (it == answers.end()) {
            ++score.missing;  // unanswered questions score 0
            continue;
        }
        double best_f1 = 0.0;
        bool best_em = false;
        for (const auto& gold : q.gold_answers) {
            best_f1 = std::max(best_f1, token_f1(*it->second, gold, rules));
            best_em = best_em || exact_match(*it->second, gold, rules);
        }
        f1_sum += best_f1;
        em_sum += best_em ? 1.0 : 0.0;
    }
    score.f1 = 100.0 * f1_sum / static_cast<double>(dataset.size());
    score.em = 100.0 * em_sum / static_cast<double>(dataset.size());
    return score;
}

OodAverage aggregate_ood(const std::map<std::string, DatasetScore>& per_dataset,
                         std::span<const std::string> ood_datasets) {
    if (ood_datasets.empty()) {
        throw ConfigError("OOD aggregation requires at least one dataset name");
    }
    std::unordered_set<std::string> seen;
    OodAverage avg;
    for (const auto& name : ood_datasets) {
        if (!seen.insert(name).second) {
            throw ConfigError("duplicate dataset \"" + name + "\" in OOD set");
        }
        auto it = per_dataset.find(name);
        if (it == per_dataset.end()) {
            throw DataError("OOD set names unknown dataset \"" + name + "\"");
        }
        avg.f1 += it->second.f1;
        avg.em += it->second.em;
    }
    avg.f1 /= static_cast<double>(ood_datasets.size());
    avg.em /= static_cast<double>(ood_datasets.size());
    return avg;
}

void write_metric_report(const MetricReport& report, const std::filesystem::path& path) {
    corpus::ordered_json j;
    corpus::ordered_json per = corpus::ordered_json::object();
    for (const auto& [name, score] : report.per_dataset) {
        corpus::ordered_json row;
        row["f1"] = score.f1;
        row["em"] = score.em;
        row["n"] = score.n;
        row["missing"] = score.missing;
        per[name] = row;
    }
    j["per_dataset"] = per;
    j["ood_datasets"] = report.ood_datasets;
    if (!report.ood_datasets.empty()) {
        corpus::ordered_json avg;
        avg["f1"] = report.ood_average.f1;
        avg["em"] = report.ood_average.em;
        j["ood_average"] = avg;
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write metric report: " + path.string());
    }
    out << j.dump(2) << '\n';
}

std::string render_metric_table(const MetricReport& report) {
    std::size_t name_width = std::string("OOD Avg.").size();
    for (const auto& [name, score] : report.per_dataset) {
        name_width = std::max(name_width, name.size());
    }
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_width + 2)) << "Dataset" << std::right
       << std::setw(8) << "F1" << std::setw(8) << "EM" << std::setw(8) << "N" << '\n';
    os << std::string(name_width + 2 + 24, '-') << '\n';
    os << std::fixed << std::setprecision(1);
    for (const auto& [name, score] : report.per_dataset) {
        os << std::left << std::setw(static_cast<int>(name_width + 2)) << name << std::right
           << std::setw(8) << score.f1 << std::setw(8) << score.em << std::setw(8) << score.n
           << '\n';
    }
    if (!report.ood_datasets.empty()) {
        os << std::string(name_width + 2 + 24, '-') << '\n';
        os << std::left << std::setw(static_cast<int>(name_width + 2)) << "OOD Avg."
           << std::right << std::setw(8) << report.ood_average.f1 << std::setw(8)
           << report.ood_average.em << std::setw(8) << "" << '\n';
    }
    return os.str();
}

}  // namespace cfqa::metrics
