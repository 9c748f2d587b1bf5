#include "cfqa/filters.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>

#include "cfqa/errors.hpp"
#include "cfqa/text.hpp"

namespace cfqa::filters {

Mode mode_from_string(std::string_view s) {
    if (s == "counterfactual") return Mode::Counterfactual;
    if (s == "factual") return Mode::Factual;
    throw ConfigError("unknown filter mode: " + std::string(s));
}

std::string to_string(Mode m) {
    return m == Mode::Counterfactual ? "counterfactual" : "factual";
}

void FilterConfig::validate() const {
    if (!(factuality_threshold > 0.0 && factuality_threshold < 1.0)) {
        throw ConfigError("factuality_threshold must lie in (0,1)");
    }
    if (!(attribution_threshold > 0.0 && attribution_threshold < 1.0)) {
        throw ConfigError("attribution_threshold must lie in (0,1)");
    }
    if (yes_variants.empty() || no_variants.empty()) {
        throw ConfigError("yes/no token variant lists must be non-empty");
    }
}

std::string normalize_answer_surface(std::string_view s) {
    return text::fold_and_collapse(s);
}

bool surface_form_match(std::string_view answer, std::span<const std::string> gold_aliases) {
    if (gold_aliases.empty()) {
        throw DataError("surface_form_match requires at least one gold alias");
    }
    const std::string norm = normalize_answer_surface(answer);
    return std::any_of(gold_aliases.begin(), gold_aliases.end(), [&](const std::string& alias) {
        return normalize_answer_surface(alias) == norm;
    });
}

double normalized_yes(double p_yes, double p_no) {
    if (p_yes < 0.0 || p_yes > 1.0 || p_no < 0.0 || p_no > 1.0) {
        throw DataError("token probabilities must lie in [0,1]");
    }
    const double mass = p_yes + p_no;
    if (mass <= 0.0) {
        throw DataError("undefined verdict: zero probability mass on Yes and No");
    }
    return p_yes / mass;
}

// ---------------------------------------------------------------------------
// Judge prompt templates
// ---------------------------------------------------------------------------

namespace {

nlohmann::json load_template_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open template file: " + path.string());
    }
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ConfigError("malformed template JSON: " + path.string());
    }
    return j;
}

void require_distinct_markers(std::initializer_list<const std::string*> markers,
                              const char* what) {
    std::set<std::string> seen;
    for (const auto* m : markers) {
        if (m->empty()) {
            throw ConfigError(std::string(what) + " template markers must be non-empty");
        }
        if (!seen.insert(*m).second) {
            throw ConfigError(std::string(what) + " template markers must be mutually distinct");
        }
    }
}

}  // namespace

void FactualityPromptTemplate::validate() const {
    require_distinct_markers({&question_marker, &gold_marker, &generated_marker, &verdict_marker},
                             "factuality");
    if (exemplars.empty()) {
        throw ConfigError("factuality template requires at least one exemplar");
    }
    if (yes_label.empty() || no_label.empty() || yes_label == no_label) {
        throw ConfigError("factuality template labels must be non-empty and distinct");
    }
    for (const auto& ex : exemplars) {
        if (ex.question.empty() || ex.gold_answer.empty() || ex.generated_answer.empty()) {
            throw ConfigError("factuality exemplar with empty field");
        }
    }
}

FactualityPromptTemplate FactualityPromptTemplate::load(const std::filesystem::path& path) {
    nlohmann::json j = load_template_json(path);
    FactualityPromptTemplate tmpl;
    try {
        tmpl.preamble = j.at("preamble").get<std::string>();
        for (const auto& e : j.at("exemplars")) {
            tmpl.exemplars.push_back({e.at("question").get<std::string>(),
                                      e.at("gold_answer").get<std::string>(),
                                      e.at("generated_answer").get<std::string>(),
                                      e.at("same_answer").get<bool>()});
        }
        if (j.contains("markers")) {
            const auto& m = j["markers"];
            tmpl.question_marker = m.value("question", tmpl.question_marker);
            tmpl.gold_marker = m.value("gold", tmpl.gold_marker);
            tmpl.generated_marker = m.value("generated", tmpl.generated_marker);
            tmpl.verdict_marker = m.value("verdict", tmpl.verdict_marker);
        }
        tmpl.yes_label = j.value("yes_label", tmpl.yes_label);
        tmpl.no_label = j.value("no_label", tmpl.no_label);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad template file " + path.string() + ": " + e.what());
    }
    tmpl.validate();
    return tmpl;
}

std::string build_factuality_prompt(const FactualityPromptTemplate& tmpl,
                                    std::string_view question, std::string_view generated_answer,
                                    std::string_view gold_answer) {
    if (question.empty() || generated_answer.empty() || gold_answer.empty()) {
        throw DataError("factuality prompt requires non-empty question and answers");
    }
    std::string out = tmpl.preamble;
    const auto append_block = [&](std::string_view q, std::string_view gold,
                                  std::string_view generated) {
        if (!out.empty()) out += "\n\n";
        out += tmpl.question_marker;
        out += q;
        out += '\n';
        out += tmpl.gold_marker;
        out += gold;
        out += '\n';
        out += tmpl.generated_marker;
        out += generated;
        out += '\n';
        out += tmpl.verdict_marker;
    };
    for (const auto& ex : tmpl.exemplars) {
        append_block(ex.question, ex.gold_answer, ex.generated_answer);
        out += ex.same_answer ? tmpl.yes_label : tmpl.no_label;
    }
    append_block(question, gold_answer, generated_answer);
    return out;
}

void AttributionPromptTemplate::validate() const {
    require_distinct_markers({&question_marker, &document_marker, &answer_marker, &verdict_marker},
                             "attribution");
    if (exemplars.empty()) {
        throw ConfigError("attribution template requires at least one exemplar");
    }
    if (yes_label.empty() || no_label.empty() || yes_label == no_label) {
        throw ConfigError("attribution template labels must be non-empty and distinct");
    }
    for (const auto& ex : exemplars) {
        if (ex.question.empty() || ex.document.empty() || ex.answer.empty()) {
            throw ConfigError("attribution exemplar with empty field");
        }
    }
}

AttributionPromptTemplate AttributionPromptTemplate::load(const std::filesystem::path& path) {
    nlohmann::json j = load_template_json(path);
    AttributionPromptTemplate tmpl;
    try {
        tmpl.preamble = j.at("preamble").get<std::string>();
        for (const auto& e : j.at("exemplars")) {
            tmpl.exemplars.push_back({e.at("question").get<std::string>(),
                                      e.at("document").get<std::string>(),
                                      e.at("answer").get<std::string>(),
                                      e.at("grounded").get<bool>()});
        }
        if (j.contains("markers")) {
            const auto& m = j["markers"];
            tmpl.question_marker = m.value("question", tmpl.question_marker);
            tmpl.document_marker = m.value("document", tmpl.document_marker);
            tmpl.answer_marker = m.value("answer", tmpl.answer_marker);
            tmpl.verdict_marker = m.value("verdict", tmpl.verdict_marker);
        }
        tmpl.yes_label = j.value("yes_label", tmpl.yes_label);
        tmpl.no_label = j.value("no_label", tmpl.no_label);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad template file " + path.string() + ": " + e.what());
    }
    tmpl.validate();
    return tmpl;
}

std::string build_attribution_prompt(const AttributionPromptTemplate& tmpl,
                                     std::string_view question, std::string_view document,
                                     std::string_view answer) {
    if (question.empty() || document.empty() || answer.empty()) {
        throw DataError("attribution prompt requires non-empty question, document, and answer");
    }
    std::string out = tmpl.preamble;
    const auto append_block = [&](std::string_view q, std::string_view doc,
                                  std::string_view ans) {
        if (!out.empty()) out += "\n\n";
        out += tmpl.question_marker;
        out += q;
        out += '\n';
        out += tmpl.document_marker;
        out += '\n';
        out += doc;
        out += '\n';
        out += tmpl.answer_marker;
        out += ans;
        out += '\n';
        out += tmpl.verdict_marker;
    };
    for (const auto& ex : tmpl.exemplars) {
        append_block(ex.question, ex.document, ex.answer);
        out += ex.grounded ? tmpl.yes_label : tmpl.no_label;
    }
    append_block(question, document, answer);
    return out;
}

FilterVerdict judge_verdict(gateway::Gateway& judge, const std::string& prompt,
                            const FilterConfig& config, std::uint64_t seed) {
    std::vector<std::string> tokens;
    tokens.reserve(config.yes_variants.size() + config.no_variants.size());
    tokens.insert(tokens.end(), config.yes_variants.begin(), config.yes_variants.end());
    tokens.insert(tokens.end(), config.no_variants.begin(), config.no_variants.end());
    const gateway::TokenDistribution dist = judge.next_token_probabilities(prompt, tokens, seed);

    FilterVerdict v;
    for (const auto& t : config.yes_variants) v.p_yes_raw += dist.probability_of(t);
    for (const auto& t : config.no_variants) v.p_no_raw += dist.probability_of(t);
    v.p_yes_raw = std::min(v.p_yes_raw, 1.0);
    v.p_no_raw = std::min(v.p_no_raw, 1.0);
    v.normalized_yes = normalized_yes(v.p_yes_raw, v.p_no_raw);
    return v;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

const SourceQuestion& question_for(const std::map<std::string, SourceQuestion>& questions,
                                   const std::string& qid) {
    auto it = questions.find(qid);
    if (it == questions.end()) {
        throw DataError("candidate references unknown question_id \"" + qid + "\"");
    }
    return it->second;
}

std::span<const std::string> aliases_for(const SourceQuestion& q, const FilterConfig& config) {
    if (q.gold_answers.empty()) {
        throw DataError("question \"" + q.question_id + "\" has no gold answers");
    }
    return config.use_gold_aliases ? std::span<const std::string>(q.gold_answers)
                                   : std::span<const std::string>(q.gold_answers.data(), 1);
}

}  // namespace

std::vector<ScoredCandidate> attach_surface_match(
    const std::vector<corpus::RecitationCandidate>& candidates,
    const std::map<std::string, SourceQuestion>& questions, const FilterConfig& config) {
    std::vector<ScoredCandidate> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        if (!c.parsed) continue;
        const SourceQuestion& q = question_for(questions, c.question_id);
        ScoredCandidate s;
        s.candidate = c;
        s.surface_match = surface_form_match(c.answer, aliases_for(q, config));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ScoredCandidate> apply_surface_prefilter(std::vector<ScoredCandidate> candidates,
                                                     const FilterConfig& config,
                                                     StageStats& stats) {
    std::vector<ScoredCandidate> out;
    out.reserve(candidates.size());
    for (auto& s : candidates) {
        if (config.mode == Mode::Factual) {
            if (s.surface_match) out.push_back(std::move(s));
            continue;
        }
        if (config.factuality_filter_enabled && s.surface_match) {
            ++stats.surface_removed;
            continue;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void score_factuality(gateway::Gateway& judge, const FactualityPromptTemplate& tmpl,
                      std::vector<ScoredCandidate>& candidates,
                      const std::map<std::string, SourceQuestion>& questions,
                      const FilterConfig& config, std::uint64_t seed, int max_workers,
                      StageStats& stats) {
    if (config.mode == Mode::Factual) return;  // surface comparison decides
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].factuality) continue;
        if (candidates[i].surface_match && config.factuality_filter_enabled) continue;
        todo.push_back(i);
    }
    std::atomic<std::int64_t> errors{0};
    gateway::parallel_for(todo.size(), max_workers, [&](std::size_t t) {
        ScoredCandidate& s = candidates[todo[t]];
        const SourceQuestion& q = question_for(questions, s.candidate.question_id);
        try {
            const std::string prompt = build_factuality_prompt(
                tmpl, q.question_text, s.candidate.answer, q.gold_answers.front());
            s.factuality = judge_verdict(judge, prompt, config, seed);
        } catch (const TransportError&) {
            throw;  // judge backend unreachable: abort the run
        } catch (const Error&) {
            errors.fetch_add(1);  // verdict stays absent; dropped at apply time
        }
    });
    stats.judge_errors += errors.load();
}

std::vector<ScoredCandidate> apply_factuality_filter(std::vector<ScoredCandidate> candidates,
                                                     const FilterConfig& config,
                                                     StageStats& stats) {
    std::vector<ScoredCandidate> out;
    out.reserve(candidates.size());
    for (auto& s : candidates) {
        if (config.mode == Mode::Factual) {
            if (s.surface_match) out.push_back(std::move(s));
            continue;
        }
        if (config.factuality_filter_enabled && s.surface_match) {
            ++stats.surface_removed;
            continue;
        }
        if (!s.factuality) {
            continue;  // judge error; already counted during scoring
        }
        if (config.factuality_filter_enabled &&
            s.factuality->normalized_yes >= config.factuality_threshold) {
            ++stats.factual_removed;
            continue;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void score_attribution(gateway::Gateway& judge, const AttributionPromptTemplate& tmpl,
                       std::vector<ScoredCandidate>& candidates,
                       const std::map<std::string, SourceQuestion>& questions,
                       const FilterConfig& config, std::uint64_t seed, int max_workers,
                       StageStats& stats) {
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!candidates[i].attribution) todo.push_back(i);
    }
    std::atomic<std::int64_t> errors{0};
    gateway::parallel_for(todo.size(), max_workers, [&](std::size_t t) {
        ScoredCandidate& s = candidates[todo[t]];
        const SourceQuestion& q = question_for(questions, s.candidate.question_id);
        try {
            const std::string prompt = build_attribution_prompt(
                tmpl, q.question_text, s.candidate.document, s.candidate.answer);
            s.attribution = judge_verdict(judge, prompt, config, seed);
        } catch (const TransportError&) {
            throw;
        } catch (const Error&) {
            errors.fetch_add(1);
        }
    });
    stats.judge_errors += errors.load();
}

std::vector<ScoredCandidate> apply_attribution_filter(std::vector<ScoredCandidate> candidates,
                                                      const FilterConfig& config,
                                                      StageStats& stats) {
    std::vector<ScoredCandidate> out;
    out.reserve(candidates.size());
    for (auto& s : candidates) {
        if (!s.attribution) {
            continue;  // judge error; counted during scoring
        }
        if (config.attribution_filter_enabled &&
            s.attribution->normalized_yes < config.attribution_threshold) {
            ++stats.unattributed_removed;
            continue;
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<CounterfactualRecord> select_best_per_question(
    std::span<const ScoredCandidate> candidates,
    const std::map<std::string, SourceQuestion>& questions, const FilterConfig& config) {
    std::map<std::string, const ScoredCandidate*> best;
    for (const auto& s : candidates) {
        if (!s.attribution) {
            throw DataError("selection requires attribution verdicts on every candidate");
        }
        auto [it, inserted] = best.emplace(s.candidate.question_id, &s);
        if (inserted) continue;
        const ScoredCandidate& cur = *it->second;
        const auto key = [](const ScoredCandidate& c) {
            return std::make_tuple(-c.attribution->normalized_yes, c.candidate.sample_index,
                                   std::cref(c.candidate.answer));
        };
        if (key(s) < key(cur)) it->second = &s;
    }

    std::vector<CounterfactualRecord> records;
    records.reserve(best.size());
    for (const auto& [qid, chosen] : best) {
        const SourceQuestion& q = question_for(questions, qid);
        CounterfactualRecord r;
        r.question_id = qid;
        r.question_text = q.question_text;
        r.document = chosen->candidate.document;
        r.answer = chosen->candidate.answer;
        r.original_gold_answer = q.gold_answers.front();
        r.attribution_score = chosen->attribution->normalized_yes;
        // Factual-mode records are surface-equal to the gold answer by
        // construction; the judge is never consulted there.
        r.factuality_score = chosen->factuality ? chosen->factuality->normalized_yes
                             : config.mode == Mode::Factual ? 1.0
                                                            : 0.0;
        r.provenance = chosen->candidate.provenance;
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace cfqa::filters
