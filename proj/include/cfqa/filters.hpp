#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfqa/corpus.hpp"
#include "cfqa/gateway.hpp"

namespace cfqa::filters {

using corpus::CounterfactualRecord;
using corpus::FilterVerdict;
using corpus::ScoredCandidate;
using corpus::SourceQuestion;

enum class Mode { Counterfactual, Factual };

Mode mode_from_string(std::string_view s);
std::string to_string(Mode m);

struct FilterConfig {
    double factuality_threshold = 0.5;   // open interval (0,1)
    double attribution_threshold = 0.5;  // open interval (0,1)
    std::vector<std::string> yes_variants = {"Yes", " Yes", "yes"};
    std::vector<std::string> no_variants = {"No", " No", "no"};
    Mode mode = Mode::Counterfactual;
    bool use_gold_aliases = true;  // false: match the canonical gold only
    // Ablation switches: when disabled, candidates are still scored but the
    // removal step is skipped.
    bool factuality_filter_enabled = true;
    bool attribution_filter_enabled = true;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Surface-form matching
// ---------------------------------------------------------------------------

/// Case-fold, collapse whitespace runs, trim. No punctuation or accent
/// stripping: transliterations and accent variants intentionally do not
/// match here; catching them is the factuality judge's job.
std::string normalize_answer_surface(std::string_view s);

bool surface_form_match(std::string_view answer, std::span<const std::string> gold_aliases);

// ---------------------------------------------------------------------------
// Judge verdicts
// ---------------------------------------------------------------------------

/// p_yes / (p_yes + p_no). Throws DataError when the mass is zero (the
/// candidate is dropped and counted by the caller).
double normalized_yes(double p_yes, double p_no);

struct FactualityExemplar {
    std::string question;
    std::string gold_answer;
    std::string generated_answer;
    bool same_answer = false;
};

/// 8-shot Yes/No template judging whether a generated answer means the same
/// thing as the gold answer. No document text appears in these prompts.
struct FactualityPromptTemplate {
    std::string preamble;
    std::vector<FactualityExemplar> exemplars;
    std::string question_marker = "Question: ";
    std::string gold_marker = "Answer 1: ";
    std::string generated_marker = "Answer 2: ";
    std::string verdict_marker = "Same answer: ";
    std::string yes_label = "Yes";
    std::string no_label = "No";

    void validate() const;
    static FactualityPromptTemplate load(const std::filesystem::path& path);
};

std::string build_factuality_prompt(const FactualityPromptTemplate& tmpl,
                                    std::string_view question, std::string_view generated_answer,
                                    std::string_view gold_answer);

struct AttributionExemplar {
    std::string question;
    std::string document;
    std::string answer;
    bool grounded = false;
};

/// 5-shot Yes/No template judging whether an answer is grounded in the
/// accompanying document.
struct AttributionPromptTemplate {
    std::string preamble;
    std::vector<AttributionExemplar> exemplars;
    std::string question_marker = "Question: ";
    std::string document_marker = "Document:";
    std::string answer_marker = "Answer: ";
    std::string verdict_marker = "Grounded: ";
    std::string yes_label = "Yes";
    std::string no_label = "No";

    void validate() const;
    static AttributionPromptTemplate load(const std::filesystem::path& path);
};

std::string build_attribution_prompt(const AttributionPromptTemplate& tmpl,
                                     std::string_view question, std::string_view document,
                                     std::string_view answer);

/// Queries the judge for Yes/No next-token probabilities, summing mass over
/// the configured surface variants of each class.
FilterVerdict judge_verdict(gateway::Gateway& judge, const std::string& prompt,
                            const FilterConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Filter stages. Scoring passes fan out judge calls and attach verdicts;
// apply passes are pure functions over the collected verdicts.
// ---------------------------------------------------------------------------

struct StageStats {
    std::int64_t surface_removed = 0;
    std::int64_t factual_removed = 0;       // judge said Yes at/above threshold
    std::int64_t unattributed_removed = 0;  // judge said Yes below threshold
    std::int64_t judge_errors = 0;          // zero-mass or per-candidate failures
};

/// Attaches surface_match to every parsed candidate.
std::vector<ScoredCandidate> attach_surface_match(
    const std::vector<corpus::RecitationCandidate>& candidates,
    const std::map<std::string, SourceQuestion>& questions, const FilterConfig& config);

/// The surface pre-filter stage. Counterfactual mode removes surface matches
/// (when the factuality filter is enabled); factual mode keeps exactly the
/// surface matches.
std::vector<ScoredCandidate> apply_surface_prefilter(std::vector<ScoredCandidate> candidates,
                                                     const FilterConfig& config,
                                                     StageStats& stats);

/// Scores factuality for candidates that need it. In counterfactual mode,
/// surface-matched candidates are skipped when the filter is enabled (they
/// are removed regardless); in factual mode the judge is never consulted.
void score_factuality(gateway::Gateway& judge, const FactualityPromptTemplate& tmpl,
                      std::vector<ScoredCandidate>& candidates,
                      const std::map<std::string, SourceQuestion>& questions,
                      const FilterConfig& config, std::uint64_t seed, int max_workers,
                      StageStats& stats);

/// Counterfactual mode: removes surface matches, then candidates whose
/// factuality normalized_yes is at or above the threshold. Factual mode:
/// keeps exactly the surface-matched candidates. With the filter disabled,
/// only candidates with judge errors are dropped.
std::vector<ScoredCandidate> apply_factuality_filter(std::vector<ScoredCandidate> candidates,
                                                     const FilterConfig& config,
                                                     StageStats& stats);

void score_attribution(gateway::Gateway& judge, const AttributionPromptTemplate& tmpl,
                       std::vector<ScoredCandidate>& candidates,
                       const std::map<std::string, SourceQuestion>& questions,
                       const FilterConfig& config, std::uint64_t seed, int max_workers,
                       StageStats& stats);

/// Removes candidates whose attribution normalized_yes is strictly below the
/// threshold (exactly-at-threshold survives). Applied in both modes.
std::vector<ScoredCandidate> apply_attribution_filter(std::vector<ScoredCandidate> candidates,
                                                      const FilterConfig& config,
                                                      StageStats& stats);

/// Groups by question and keeps the candidate with the highest attribution
/// normalized_yes; ties break on lowest sample_index, then lexicographically
/// smaller answer. Emits at most one record per question, ordered by
/// question_id.
std::vector<CounterfactualRecord> select_best_per_question(
    std::span<const ScoredCandidate> candidates,
    const std::map<std::string, SourceQuestion>& questions, const FilterConfig& config);

}  // namespace cfqa::filters
