"""Smoke tests for the python bindings."""

import json
import os
from pathlib import Path

import pytest

import cfqa

SOURCE_DIR = Path(os.environ.get("CFQA_SOURCE_DIR", Path(__file__).resolve().parents[2]))


def test_metrics_roundtrip():
    assert cfqa.token_f1("Paris", "Paris") == 1.0
    assert cfqa.token_f1("King Edward potato", "potato") == pytest.approx(0.5)
    assert cfqa.exact_match("the potato", "potato")
    assert not cfqa.exact_match("7 billion", "7,001,818,322")
    assert cfqa.normalize_for_metric("the Paris") == ["paris"]


def test_aggregate_ood_matches_reported_average():
    per_dataset = {
        "squad": (81.7, 68.6),
        "nq": (71.2, 50.5),
        "hotpotqa": (73.8, 51.9),
        "bioasq": (69.5, 53.3),
        "aqa": (44.9, 31.6),
        "ambigqa": (53.2, 46.8),
    }
    f1, em = cfqa.aggregate_ood(per_dataset, list(per_dataset))
    assert f1 == pytest.approx(65.7, abs=0.05)
    assert em == pytest.approx(50.4, abs=0.05)


def test_surface_and_filter_ops():
    assert cfqa.normalize_answer_surface("  JUDY   BLUME ") == "judy blume"
    assert cfqa.surface_form_match("paris", ["Paris"])
    assert not cfqa.surface_form_match("Eugene Delacroix", ["Eugène Delacroix"])
    assert cfqa.normalized_yes(0.6, 0.2) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        cfqa.normalized_yes(0.0, 0.0)


def test_nli_formatting():
    assert cfqa.format_premise("D", "Q?") == "D\n\nQ?"
    assert cfqa.format_hypothesis("Q?", "Judy Blume") == "Q?\nJudy Blume"


def test_recitation_parse():
    tmpl = cfqa.RecitationPromptTemplate.load(str(SOURCE_DIR / "templates" / "recitation.json"))
    prompt = cfqa.build_recitation_prompt(tmpl, "Who wrote it?")
    assert prompt.endswith("Document:\n")
    parsed = cfqa.parse_recitation("some document text\n\nAnswer: Judy Blume", tmpl)
    assert parsed["parsed"]
    assert parsed["answer"] == "Judy Blume"
    rejected = cfqa.parse_recitation("doc\nAnswer: X", tmpl)
    assert not rejected["parsed"]
    assert rejected["reason"] == "missing_blank_line"


def test_load_source_dataset(tmp_path):
    src = tmp_path / "q.jsonl"
    src.write_text(
        json.dumps({"qid": "q1", "question": "Q?", "answers": ["A", "B"]}) + "\n",
        encoding="utf-8",
    )
    questions = cfqa.load_source_dataset(str(src))
    assert len(questions) == 1
    assert questions[0].question_id == "q1"
    assert questions[0].gold_answers == ["A", "B"]


def test_run_pipeline_end_to_end(tmp_path):
    questions = tmp_path / "questions.jsonl"
    lines = [
        json.dumps({"qid": f"q{i}", "question": f"Question {i}?", "answers": [f"gold {i}"]})
        for i in range(3)
    ]
    questions.write_text("\n".join(lines) + "\n", encoding="utf-8")
    config = {
        "source": {"path": "questions.jsonl", "format": "triviaqa-mrqa"},
        "templates": {
            "recitation": str(SOURCE_DIR / "templates" / "recitation.json"),
            "factuality": str(SOURCE_DIR / "templates" / "factuality.json"),
            "attribution": str(SOURCE_DIR / "templates" / "attribution.json"),
        },
        "backends": {
            "generator": {"type": "mock", "on_unknown": "fallback"},
            "judge": {"type": "mock", "on_unknown": "fallback"},
        },
        "recitation": {"k_samples": 4},
        "cache_dir": "cache",
        "output_dir": "out",
        "seed": 13,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")

    result = cfqa.run_pipeline(str(config_path))
    assert result["stage_counts"]["questions_in"] == 3
    assert result["stage_counts"]["raw_samples"] == 12
    assert result["stage_counts"]["selected"] <= 3
    assert Path(result["dataset_path"]).exists()
