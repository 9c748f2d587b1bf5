#include "cfqa/recitation.hpp"

#include <fstream>

#include "cfqa/errors.hpp"
#include "cfqa/sha256.hpp"
#include "cfqa/text.hpp"

namespace cfqa::recitation {

using corpus::RecitationCandidate;
using corpus::ViolationReason;

namespace {

void check_marker_free(const std::string& value, const RecitationPromptTemplate& tmpl,
                       const std::string& what) {
    for (const std::string* marker :
         {&tmpl.question_marker, &tmpl.document_intro_marker, &tmpl.answer_marker}) {
        if (value.find(*marker) != std::string::npos) {
            throw ConfigError(what + " contains the template marker \"" + *marker + "\"");
        }
    }
}

}  // namespace

void RecitationPromptTemplate::validate() const {
    if (question_marker.empty() || document_intro_marker.empty() || answer_marker.empty()) {
        throw ConfigError("recitation template markers must be non-empty");
    }
    if (question_marker == document_intro_marker || question_marker == answer_marker ||
        document_intro_marker == answer_marker) {
        throw ConfigError("recitation template markers must be mutually distinct");
    }
    if (exemplars.empty()) {
        throw ConfigError("recitation template requires at least one exemplar");
    }
    for (const auto& ex : exemplars) {
        if (ex.question.empty() || ex.document.empty() || ex.answer.empty()) {
            throw ConfigError("recitation exemplar with empty field");
        }
        check_marker_free(ex.question, *this, "exemplar question");
        check_marker_free(ex.document, *this, "exemplar document");
        check_marker_free(ex.answer, *this, "exemplar answer");
    }
}

RecitationPromptTemplate RecitationPromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open template file: " + path.string());
    }
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ConfigError("malformed template JSON: " + path.string());
    }
    RecitationPromptTemplate tmpl;
    try {
        tmpl.preamble = j.at("preamble").get<std::string>();
        for (const auto& e : j.at("exemplars")) {
            tmpl.exemplars.push_back({e.at("question").get<std::string>(),
                                      e.at("document").get<std::string>(),
                                      e.at("answer").get<std::string>()});
        }
        if (j.contains("markers")) {
            const auto& m = j["markers"];
            tmpl.question_marker = m.value("question", tmpl.question_marker);
            tmpl.document_intro_marker = m.value("document_intro", tmpl.document_intro_marker);
            tmpl.answer_marker = m.value("answer", tmpl.answer_marker);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad template file " + path.string() + ": " + e.what());
    }
    tmpl.validate();
    return tmpl;
}

void RecitationConfig::validate() const {
    if (k_samples < 1) throw ConfigError("k_samples must be >= 1");
    if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (max_output_units < 1) throw ConfigError("max_output_units must be >= 1");
}

std::string build_recitation_prompt(const RecitationPromptTemplate& tmpl,
                                    const corpus::SourceQuestion& question) {
    check_marker_free(question.question_text, tmpl, "question");
    std::string out = tmpl.preamble;
    const auto append_block_header = [&](const std::string& q) {
        if (!out.empty()) out += "\n\n";
        out += tmpl.question_marker;
        out += q;
        out += '\n';
        out += tmpl.document_intro_marker;
        out += '\n';
    };
    for (const auto& ex : tmpl.exemplars) {
        append_block_header(ex.question);
        out += ex.document;
        out += "\n\n";
        out += tmpl.answer_marker;
        out += ex.answer;
    }
    append_block_header(question.question_text);
    return out;
}

ParseOutcome parse_recitation(std::string_view raw_completion,
                              const RecitationPromptTemplate& tmpl, bool multiline_answers) {
    ParseOutcome out;
    const auto reject = [&](ViolationReason r) {
        out.parsed = false;
        out.reason = r;
        return out;
    };
    if (text::is_blank(raw_completion)) {
        return reject(ViolationReason::EmptyDocument);
    }
    const auto lines = text::split_lines(raw_completion);

    std::size_t answer_line = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].substr(0, tmpl.answer_marker.size()) == tmpl.answer_marker) {
            answer_line = i;
            break;
        }
    }
    if (answer_line == lines.size()) {
        return reject(ViolationReason::MissingAnswerMarker);
    }
    if (answer_line == 0 || !text::is_blank(lines[answer_line - 1])) {
        // document text runs straight into the answer line
        bool doc_before = false;
        for (std::size_t i = 0; i < answer_line; ++i) {
            if (!text::is_blank(lines[i])) doc_before = true;
        }
        return doc_before ? reject(ViolationReason::MissingBlankLine)
                          : reject(ViolationReason::EmptyDocument);
    }

    std::string document;
    for (std::size_t i = 0; i + 1 < answer_line; ++i) {
        if (i > 0) document += '\n';
        document += lines[i];
    }
    document = text::trim(document);
    if (document.empty()) {
        return reject(ViolationReason::EmptyDocument);
    }

    std::string answer(lines[answer_line].substr(tmpl.answer_marker.size()));
    std::size_t rest = answer_line + 1;
    if (multiline_answers) {
        while (rest < lines.size() &&
               lines[rest].substr(0, tmpl.question_marker.size()) != tmpl.question_marker &&
               !text::is_blank(lines[rest])) {
            answer += '\n';
            answer += lines[rest];
            ++rest;
        }
    }
    answer = text::trim(answer);
    if (answer.empty()) {
        return reject(ViolationReason::EmptyAnswer);
    }

    // Anything after the answer must be whitespace or the start of a next
    // question block (the model beginning another exemplar).
    for (std::size_t i = rest; i < lines.size(); ++i) {
        if (text::is_blank(lines[i])) continue;
        if (lines[i].substr(0, tmpl.question_marker.size()) == tmpl.question_marker) break;
        return reject(ViolationReason::TrailingGarbage);
    }

    out.parsed = true;
    out.document = std::move(document);
    out.answer = std::move(answer);
    return out;
}

std::string render_as_completion(std::string_view document, std::string_view answer,
                                 const RecitationPromptTemplate& tmpl) {
    std::string out(document);
    out += "\n\n";
    out += tmpl.answer_marker;
    out += answer;
    return out;
}

std::vector<RecitationCandidate> generate_recitations(gateway::Gateway& gw,
                                                      const RecitationPromptTemplate& tmpl,
                                                      const RecitationConfig& config,
                                                      const corpus::SourceQuestion& question,
                                                      std::uint64_t seed, int max_workers) {
    config.validate();
    const std::string prompt = build_recitation_prompt(tmpl, question);
    const std::string prompt_hash = sha256_hex(prompt);

    std::vector<RecitationCandidate> candidates(static_cast<std::size_t>(config.k_samples));
    gateway::parallel_for(candidates.size(), max_workers, [&](std::size_t i) {
        gateway::CompletionRequest request;
        request.prompt = prompt;
        request.temperature = config.temperature;
        request.max_output_units = config.max_output_units;
        request.stop_sequences = config.stop_sequences;
        request.sample_index = static_cast<int>(i);
        request.seed = seed;

        RecitationCandidate c;
        c.question_id = question.question_id;
        c.sample_index = static_cast<int>(i);
        c.provenance = {gw.backend_id(), prompt_hash, config.temperature, static_cast<int>(i),
                        ""};
        try {
            gateway::CompletionResponse resp = gw.complete(request);
            c.raw_completion = resp.text;
            c.provenance.created_at = resp.created_at;
            ParseOutcome parsed = parse_recitation(resp.text, tmpl, config.multiline_answers);
            if (parsed.parsed) {
                c.parsed = true;
                c.document = std::move(parsed.document);
                c.answer = std::move(parsed.answer);
            } else {
                c.violation = parsed.reason;
            }
        } catch (const TransportError&) {
            throw;  // backend unreachable after retries: abort the run
        } catch (const Error& e) {
            // backend refusal or bad response: isolate it to this sample
            c.violation = ViolationReason::BackendError;
            c.raw_completion = std::string("error: ") + e.what();
        }
        candidates[i] = std::move(c);
    });
    return candidates;
}

}  // namespace cfqa::recitation
