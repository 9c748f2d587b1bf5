"""Counterfactual open-book QA dataset pipeline."""

try:
    from ._cfqa import (  # noqa: F401
        ConfigError,
        DataError,
        MetricNormalizationRules,
        RecitationPromptTemplate,
        SourceQuestion,
        TransportError,
        aggregate_ood,
        build_recitation_prompt,
        exact_match,
        format_hypothesis,
        format_premise,
        load_source_dataset,
        normalize_answer_surface,
        normalize_for_metric,
        normalized_yes,
        parse_recitation,
        run_pipeline,
        sha256_hex,
        surface_form_match,
        token_f1,
    )
except ImportError:  # development layout: extension on sys.path, not in-package
    from _cfqa import (  # noqa: F401
        ConfigError,
        DataError,
        MetricNormalizationRules,
        RecitationPromptTemplate,
        SourceQuestion,
        TransportError,
        aggregate_ood,
        build_recitation_prompt,
        exact_match,
        format_hypothesis,
        format_premise,
        load_source_dataset,
        normalize_answer_surface,
        normalize_for_metric,
        normalized_yes,
        parse_recitation,
        run_pipeline,
        sha256_hex,
        surface_form_match,
        token_f1,
    )

__all__ = [
    "ConfigError",
    "DataError",
    "MetricNormalizationRules",
    "RecitationPromptTemplate",
    "SourceQuestion",
    "TransportError",
    "aggregate_ood",
    "build_recitation_prompt",
    "exact_match",
    "format_hypothesis",
    "format_premise",
    "load_source_dataset",
    "normalize_answer_surface",
    "normalize_for_metric",
    "normalized_yes",
    "parse_recitation",
    "run_pipeline",
    "sha256_hex",
    "surface_form_match",
    "token_f1",
]
