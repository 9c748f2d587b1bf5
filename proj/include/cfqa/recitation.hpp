#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cfqa/corpus.hpp"
#include "cfqa/gateway.hpp"

namespace cfqa::recitation {

struct Exemplar {
    std::string question;
    std::string document;
    std::string answer;
};

/// Few-shot template conditioning the generator to produce a document
/// followed by a blank line and an answer line.
struct RecitationPromptTemplate {
    std::string preamble;
    std::vector<Exemplar> exemplars;
    std::string question_marker = "Question: ";
    std::string document_intro_marker = "Document:";
    std::string answer_marker = "Answer: ";

    /// Markers non-empty and mutually distinct; at least one exemplar; no
    /// exemplar field may contain a marker. Directly constructed templates
    /// (tests) may skip validation to use zero exemplars.
    void validate() const;

    static RecitationPromptTemplate load(const std::filesystem::path& path);
};

struct RecitationConfig {
    int k_samples = 24;
    double temperature = 0.7;
    int max_output_units = 2048;
    std::vector<std::string> stop_sequences = {"\nQuestion:"};
    bool multiline_answers = false;

    void validate() const;
};

/// Deterministic, byte-stable rendering: preamble, exemplar blocks separated
/// by blank lines, then the target question with an open document slot.
/// Rejects questions containing any marker substring.
std::string build_recitation_prompt(const RecitationPromptTemplate& tmpl,
                                    const corpus::SourceQuestion& question);

struct ParseOutcome {
    bool parsed = false;
    corpus::ViolationReason reason = corpus::ViolationReason::EmptyDocument;
    std::string document;
    std::string answer;
};

/// Accepts exactly: one non-empty document block, a blank line, a line
/// beginning with the answer marker, then a non-empty answer running to
/// end-of-text or the next question marker. Whitespace is trimmed from both
/// fields. Content after the answer is tolerated only if it starts a new
/// question block.
ParseOutcome parse_recitation(std::string_view raw_completion,
                              const RecitationPromptTemplate& tmpl,
                              bool multiline_answers = false);

/// Inverse of the completion grammar; parse_recitation round-trips its output
/// for marker-free fields.
std::string render_as_completion(std::string_view document, std::string_view answer,
                                 const RecitationPromptTemplate& tmpl);

/// Fans out k sampled completions for one question. Backend failures never
/// abort the question: the affected sample becomes a backend_error violation.
/// Results are ordered by sample_index.
std::vector<corpus::RecitationCandidate> generate_recitations(
    gateway::Gateway& gw, const RecitationPromptTemplate& tmpl, const RecitationConfig& config,
    const corpus::SourceQuestion& question, std::uint64_t seed, int max_workers = 1);

}  // namespace cfqa::recitation
