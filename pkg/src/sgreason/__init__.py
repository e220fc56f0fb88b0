"""Scene-graph reasoning-program execution and diagnosis toolkit."""

from .core import Box, Concept, MatchMap, Vocabulary, iou, match_boxes
from .datagen import GenSpec, QuestionRecord, default_vocabulary, gen_dataset
from .diagnosis import (
    DiagnosisReport,
    aggregate_attention,
    build_report,
    classify_roles,
    emit_report,
    flipping_rates,
    grounding_ap,
)
from .exec_neural import ExecutorParams, SoftTrace, exact_params, exec_neural
from .exec_symbolic import ExecutionTrace, exec_symbolic
from .program import Program, parse_program, serialize_program
from .scene_graph import (
    ProbabilisticSceneGraph,
    Relation,
    SceneObject,
    SymbolicSceneGraph,
    one_hot_encode,
    perturb_encode,
)
from .training import TrainConfig, generate_supervision, train

__version__ = "0.1.0"

__all__ = [
    "Box", "Concept", "MatchMap", "Vocabulary", "iou", "match_boxes",
    "GenSpec", "QuestionRecord", "default_vocabulary", "gen_dataset",
    "DiagnosisReport", "aggregate_attention", "build_report", "classify_roles",
    "emit_report", "flipping_rates", "grounding_ap",
    "ExecutorParams", "SoftTrace", "exact_params", "exec_neural",
    "ExecutionTrace", "exec_symbolic",
    "Program", "parse_program", "serialize_program",
    "ProbabilisticSceneGraph", "Relation", "SceneObject", "SymbolicSceneGraph",
    "one_hot_encode", "perturb_encode",
    "TrainConfig", "generate_supervision", "train",
]
