"""Confidence-aware annotation with a live LLM endpoint or a simulated oracle."""
from .batch import (AnnotationCache, BudgetExceeded, Request, Transcript, annotate_batch, estimate_cost,
                    estimate_tokens)
from .live import BackendConfig, BackendError, LiveBackend, TransportError
from .parsing import ParseFailure, aggregate_hybrid, normalize_label, parse_response
from .prompts import PromptStrategy, build_prompt, build_self_correction_prompt
from .simulator import (OracleNoiseModel, SimulatedBackend, calibrate_base_accuracy, confusable_transition,
                        draw_answer, simulated_annotate, uniform_transition)
from .types import ABSTAIN, Annotation, CostReport

__all__ = [
    "ABSTAIN", "Annotation", "AnnotationCache", "BackendConfig", "BackendError", "BudgetExceeded",
    "CostReport", "LiveBackend", "OracleNoiseModel", "ParseFailure", "PromptStrategy", "Request",
    "SimulatedBackend", "Transcript", "TransportError", "aggregate_hybrid", "annotate_batch",
    "build_prompt", "build_self_correction_prompt", "calibrate_base_accuracy", "confusable_transition",
    "draw_answer", "estimate_cost", "estimate_tokens", "normalize_label", "parse_response",
    "simulated_annotate", "uniform_transition",
]
