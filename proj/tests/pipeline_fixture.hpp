#pragma once

#include <sstream>
#include <string>

#include "cfqa/pipeline.hpp"
#include "test_support.hpp"

namespace cfqa::test {

/// Writes an n-question MRQA-style source file. Question texts and golds are
/// synthetic but unique per qid.
inline std::filesystem::path write_questions(const std::filesystem::path& path, int n) {
    std::ostringstream os;
    for (int i = 0; i < n; ++i) {
        nlohmann::json j;
        char qid[16];
        std::snprintf(qid, sizeof(qid), "q%03d", i);
        j["qid"] = qid;
        j["question"] = "What is recorded in archive entry number " + std::to_string(i) + "?";
        j["answers"] = {"gold answer " + std::to_string(i), "alias " + std::to_string(i)};
        os << j.dump() << "\n";
    }
    write_file(path, os.str());
    return path;
}

/// A ready-to-run pipeline config over mock backends in fallback mode.
inline pipeline::PipelineConfig desk_config(const TempDir& dir, int questions, int k,
                                            std::uint64_t seed = 11,
                                            double violation_rate = 0.05) {
    write_questions(dir / "questions.jsonl", questions);
    pipeline::PipelineConfig cfg;
    cfg.source_path = dir / "questions.jsonl";
    cfg.source_format = corpus::SourceFormat::TriviaQaMrqa;
    cfg.recitation_template_path = templates_dir() / "recitation.json";
    cfg.factuality_template_path = templates_dir() / "factuality.json";
    cfg.attribution_template_path = templates_dir() / "attribution.json";
    cfg.generator.type = "mock";
    cfg.generator.on_unknown = "fallback";
    cfg.generator.backend_id = "mock-generator";
    cfg.generator.fallback_violation_rate = violation_rate;
    cfg.judge.type = "mock";
    cfg.judge.on_unknown = "fallback";
    cfg.judge.backend_id = "mock-judge";
    cfg.recitation.k_samples = k;
    cfg.recitation.temperature = 0.7;
    cfg.cache_dir = dir / "cache";
    cfg.output_dir = dir / "out";
    cfg.seed = seed;
    cfg.concurrency.max_inflight = 4;

    corpus::ordered_json snapshot;
    snapshot["questions"] = questions;
    snapshot["k_samples"] = k;
    snapshot["seed"] = seed;
    cfg.snapshot = snapshot;
    return cfg;
}

}  // namespace cfqa::test
