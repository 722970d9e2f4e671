"""Contextual Weisfeiler-Lehman graph features with online learning under drift."""

__version__ = "0.1.0"

from .graph import Context, ContextualGraph, GraphFormatError, GraphValidationError, Node, parse_graph, read_graphs
from .cwlk import (LabelCollisionError, LabelCompressor, RelabelParams, SparseVector, Vocabulary, kernel,
                   kernel_matrix, relabel, vectorize)
from .learners import (BatchConfig, ConfidenceWeighted, LearnerConfig, LogisticSGD, PassiveAggressive, Perceptron,
                       batch_train, load_model, save_model)
from .explain import Explanation, explain_prediction, family_report
from .harness import AuditingLearner, RegimenConfig, RunReport, compare_regimens, run_online, run_regimen
from .synthgen import FamilySpec, ScenarioConfig, default_scenario, flip_scenario, generate

__all__ = [
    "Context", "ContextualGraph", "GraphFormatError", "GraphValidationError", "Node", "parse_graph", "read_graphs",
    "LabelCollisionError", "LabelCompressor", "RelabelParams", "SparseVector", "Vocabulary", "kernel",
    "kernel_matrix", "relabel", "vectorize",
    "BatchConfig", "ConfidenceWeighted", "LearnerConfig", "LogisticSGD", "PassiveAggressive", "Perceptron",
    "batch_train", "load_model", "save_model",
    "Explanation", "explain_prediction", "family_report",
    "AuditingLearner", "RegimenConfig", "RunReport", "compare_regimens", "run_online", "run_regimen",
    "FamilySpec", "ScenarioConfig", "default_scenario", "flip_scenario", "generate",
]
