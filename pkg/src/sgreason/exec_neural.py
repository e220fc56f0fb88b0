"""Probabilistic program executor over probabilistic scene graphs.

Pointing scores follow p = (1-alpha)*a_in + alpha*(S_slice * sigmoid(psi(B)));
relate modulates the predicate slice with sigmoid(psi(B_subj) phi(B_obj)^T)
and reduces over the non-pool axis; binary operators calibrate max scores
with a per-operator linear layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Box, Vocabulary, position_predicate
from .errors import ExecutionError, SgError, UnanswerableError
from .program import Program
from .exec_symbolic import grounded_pointing_steps
from .scene_graph import DEFAULT_LOGIT_MAGNITUDE, ProbabilisticSceneGraph

RELATE_REDUCE_MODES = ("softmax_avg", "max")


@dataclass
class ExecutorParams:
    """Learnable weights plus inference knobs for the probabilistic executor."""

    alpha: float = 0.5
    psi: np.ndarray = field(default_factory=lambda: np.zeros(8))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(8))
    calib: dict = field(
        default_factory=lambda: {"exist": (1.0, 0.0), "verify": (1.0, 0.0)}
    )
    pointing_threshold: float = 5.0
    topk: int = 3
    relate_reduce: str = "softmax_avg"

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.psi.shape != (8,) or self.phi.shape != (8,):
            raise SgError("psi and phi must be 7-weight + bias vectors (length 8)")
        if not (0.0 < self.alpha <= 1.0):
            raise SgError(f"alpha must be in (0,1], got {self.alpha}")
        if self.topk < 1:
            raise SgError("topk must be >= 1")
        if self.relate_reduce not in RELATE_REDUCE_MODES:
            raise SgError(f"unknown relate_reduce mode {self.relate_reduce!r}")
        for key in ("exist", "verify"):
            if key not in self.calib:
                raise SgError(f"missing calibration for {key!r}")
            self.calib[key] = tuple(float(v) for v in self.calib[key])

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "psi": self.psi.tolist(),
            "phi": self.phi.tolist(),
            "calib": {k: list(v) for k, v in self.calib.items()},
            "pointing_threshold": self.pointing_threshold,
            "topk": self.topk,
            "relate_reduce": self.relate_reduce,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ExecutorParams":
        return cls(
            alpha=float(data["alpha"]),
            psi=np.asarray(data["psi"], dtype=np.float64),
            phi=np.asarray(data["phi"], dtype=np.float64),
            calib={k: tuple(v) for k, v in data["calib"].items()},
            pointing_threshold=float(data["pointing_threshold"]),
            topk=int(data["topk"]),
            relate_reduce=str(data["relate_reduce"]),
        )


def exact_params() -> ExecutorParams:
    """Parameters under which selection tracks score signs exactly: the
    executor then reproduces symbolic execution on one-hot graphs."""
    return ExecutorParams(
        alpha=1.0,
        psi=np.zeros(8),
        phi=np.zeros(8),
        calib={"exist": (1.0, 0.0), "verify": (1.0, 0.0)},
        pointing_threshold=0.0,
        topk=10**9,
        relate_reduce="max",
    )


def load_params(path) -> ExecutorParams:
    with open(path, encoding="utf-8") as fh:
        return ExecutorParams.from_json_dict(json.load(fh))


def save_params(params: ExecutorParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def box_features(box: Box) -> np.ndarray:
    """Geometric feature vector (x1, y1, x2, y2, w, h, area)."""
    return np.array(
        [box.x1, box.y1, box.x2, box.y2, box.width, box.height, box.area]
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def _feats(graph: ProbabilisticSceneGraph, indices) -> np.ndarray:
    return np.array([box_features(graph.boxes[i]) for i in indices]).reshape(len(indices), 7)


def _affine(feats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return feats @ weights[:7] + weights[7]


def score_column(
    graph: ProbabilisticSceneGraph,
    indices,
    concept_name: str,
    category: str | None,
    vocab: Vocabulary,
) -> np.ndarray:
    """Per-object logit column for (concept, category) restricted to indices.

    Category None takes the row-wise max over the concept's member columns.
    Position concepts have no score matrix; they get +/-M pseudo-logits
    derived from box geometry.
    """
    concept = vocab.concept(concept_name)
    indices = list(indices)
    if concept.kind == "position":
        names = vocab.names_for_kind("position")
        cats = [names[m] for m in concept.members] if category is None else [category]
        m = DEFAULT_LOGIT_MAGNITUDE
        return np.array(
            [
                m if any(position_predicate(graph.boxes[i], c) for c in cats) else -m
                for i in indices
            ]
        )
    matrix = graph.s_o if concept.kind == "object" else graph.s_a
    if category is None:
        cols = list(concept.members)
        return matrix[np.ix_(indices, cols)].max(axis=1)
    cid = vocab.category_id(concept_name, category)
    return matrix[indices, cid]


def _select(indices, p: np.ndarray, params: ExecutorParams):
    """Threshold + top-k selection with single-argmax fallback (never empty)."""
    order = sorted(range(len(indices)), key=lambda j: (-p[j], indices[j]))
    chosen = [j for j in order if p[j] > params.pointing_threshold][: params.topk]
    if not chosen:
        chosen = [order[0]]
    chosen.sort(key=lambda j: indices[j])
    return [indices[j] for j in chosen], p[chosen]


def filter_op(
    graph: ProbabilisticSceneGraph,
    z_in,
    a_in: np.ndarray,
    concept_name: str,
    category: str | None,
    params: ExecutorParams,
    vocab: Vocabulary,
):
    if not len(z_in):
        raise ExecutionError("filter over empty input set")
    z_in = list(z_in)
    col = score_column(graph, z_in, concept_name, category, vocab)
    mod = _sigmoid(_affine(_feats(graph, z_in), params.psi))
    p = (1.0 - params.alpha) * np.asarray(a_in) + params.alpha * (col * mod)
    return _select(z_in, p, params)


def relate_op(
    graph: ProbabilisticSceneGraph,
    z_subj,
    a_subj: np.ndarray,
    z_obj,
    a_obj: np.ndarray,
    concept: str,
    predicate: str,
    params: ExecutorParams,
    vocab: Vocabulary,
):
    if not len(z_subj) or not len(z_obj):
        raise ExecutionError("relate over empty input set")
    z_subj, z_obj = list(z_subj), list(z_obj)
    pid = vocab.predicate_id(predicate)
    s = graph.s_p[np.ix_(z_subj, z_obj)][:, :, pid]
    mod = _sigmoid(
        np.outer(
            _affine(_feats(graph, z_subj), params.psi),
            _affine(_feats(graph, z_obj), params.phi),
        )
    )
    scored = s * mod  # n_subj x n_obj
    if concept == "subject":
        pool, a_pool, a_other, axis = z_subj, a_subj, a_obj, 1
    elif concept == "object":
        pool, a_pool, a_other, axis = z_obj, a_obj, a_subj, 0
    else:
        raise ExecutionError(f"relate concept must be subject or object, got {concept!r}")
    if params.relate_reduce == "max":
        reduced = scored.max(axis=axis)
    else:
        weights = _softmax(np.asarray(a_other))
        reduced = np.tensordot(scored, weights, axes=([axis], [0]))
    p = (1.0 - params.alpha) * np.asarray(a_pool) + params.alpha * reduced
    return _select(pool, p, params)


def binary_op(
    kind: str,
    graph: ProbabilisticSceneGraph,
    z_in,
    a_in: np.ndarray,
    params: ExecutorParams,
    vocab: Vocabulary,
    concept_name: str | None = None,
    category: str | None = None,
) -> float:
    """Calibrated scalar logit for exist/verify."""
    if not len(a_in):
        raise ExecutionError(f"{kind} over empty input scores")
    if kind == "exist":
        w, b = params.calib["exist"]
        return float(w * np.max(a_in) + b)
    if kind == "verify":
        z_in = list(z_in)
        col = score_column(graph, z_in, concept_name, category, vocab)
        mod = _sigmoid(_affine(_feats(graph, z_in), params.psi))
        blended = (1.0 - params.alpha) * np.asarray(a_in) + params.alpha * (col * mod)
        w, b = params.calib["verify"]
        return float(w * np.max(blended) + b)
    raise ExecutionError(f"unknown binary operator {kind!r}")


def query_op(
    graph: ProbabilisticSceneGraph,
    z_in,
    a_in: np.ndarray,
    concept_name: str,
    params: ExecutorParams,
    vocab: Vocabulary,
):
    """Answer distribution over the concept's member categories."""
    if not len(z_in):
        raise UnanswerableError("query over empty referred set")
    z_in = list(z_in)
    concept = vocab.concept(concept_name)
    matrix = graph.s_o if concept.kind == "object" else graph.s_a
    members = list(concept.members)
    rows = matrix[np.ix_(z_in, members)]
    mod = _sigmoid(_affine(_feats(graph, z_in), params.psi))
    weights = _softmax(np.asarray(a_in))
    scores = weights @ (rows * mod[:, None])
    dist = _softmax(scores)
    names = vocab.names_for_kind(concept.kind)
    labels = [names[m] for m in members]
    return dist, labels, labels[int(np.argmax(scores))]


def choose_op(
    graph: ProbabilisticSceneGraph,
    z_in,
    a_in: np.ndarray,
    concept_name: str,
    categories,
    params: ExecutorParams,
    vocab: Vocabulary,
):
    """Pick the candidate with the larger verify-style logit (ties -> first)."""
    if not len(z_in):
        raise UnanswerableError("choose over empty referred set")
    c1, c2 = categories
    s1 = binary_op("verify", graph, z_in, a_in, params, vocab, concept_name, c1)
    s2 = binary_op("verify", graph, z_in, a_in, params, vocab, concept_name, c2)
    dist = _softmax(np.array([s1, s2]))
    return dist, [c1, c2], c1 if s1 >= s2 else c2


def common_op(
    graph: ProbabilisticSceneGraph,
    z1,
    a1: np.ndarray,
    z2,
    a2: np.ndarray,
    concept_name: str | None,
    params: ExecutorParams,
    vocab: Vocabulary,
):
    """Attribute shared by both sets: min of the two attention-weighted scores."""
    if not len(z1) or not len(z2):
        raise UnanswerableError("common over empty referred set")
    if concept_name is not None:
        members = list(vocab.concept(concept_name).members)
    else:
        members = list(range(1, len(vocab.attribute_names)))

    def weighted(z, a):
        z = list(z)
        rows = graph.s_a[np.ix_(z, members)]
        mod = _sigmoid(_affine(_feats(graph, z), params.psi))
        return _softmax(np.asarray(a)) @ (rows * mod[:, None])

    scores = np.minimum(weighted(z1, a1), weighted(z2, a2))
    dist = _softmax(scores)
    labels = [vocab.attribute_names[m] for m in members]
    return dist, labels, labels[int(np.argmax(scores))]


def logical_op(kind: str, *logits: float) -> float:
    if kind == "and":
        (s1, s2) = logits
        return min(s1, s2)
    if kind == "or":
        (s1, s2) = logits
        return max(s1, s2)
    if kind == "not":
        (s,) = logits
        return -s
    raise ExecutionError(f"unknown logical operator {kind!r}")


@dataclass
class StepOutcome:
    kind: str  # pointing | boolean | answer
    indices: tuple | None = None
    scores: np.ndarray | None = None
    logit: float | None = None


@dataclass
class SoftTrace:
    steps: list[StepOutcome]
    final_attention: np.ndarray  # length K, zeros for unselected objects
    answer: str
    answer_distribution: np.ndarray | None = None
    answer_labels: list[str] | None = None

    def selected_sets(self) -> list:
        """Per-step selected index sets (None for non-pointing steps)."""
        return [
            frozenset(s.indices) if s.kind == "pointing" else None for s in self.steps
        ]


def exec_neural(
    program: Program,
    graph: ProbabilisticSceneGraph,
    vocab: Vocabulary,
    params: ExecutorParams,
) -> SoftTrace:
    """Execute a program over a probabilistic graph, recording per-step
    selections, the terminal distribution, and the final attention vector."""
    k = graph.num_objects
    if k == 0:
        raise ExecutionError("cannot execute over a graph with no objects")
    outcomes: list[StepOutcome] = []
    terminal = program.terminal_index
    answer = None
    answer_dist = None
    answer_labels = None

    def pointing_inputs(dep: int):
        out = outcomes[dep]
        return list(out.indices), out.scores

    for i, step in enumerate(program.steps):
        op = step.operator
        if op == "filter":
            if step.deps:
                z_in, a_in = pointing_inputs(step.deps[0])
            else:
                z_in, a_in = list(range(k)), np.zeros(k)
            z, a = filter_op(graph, z_in, a_in, step.concept, step.category, params, vocab)
            outcomes.append(StepOutcome("pointing", tuple(z), a))
        elif op == "relate":
            z_s, a_s = pointing_inputs(step.deps[0])
            z_o, a_o = pointing_inputs(step.deps[1])
            z, a = relate_op(
                graph, z_s, a_s, z_o, a_o, step.concept, step.category, params, vocab
            )
            outcomes.append(StepOutcome("pointing", tuple(z), a))
        elif op in ("exist", "verify"):
            z_in, a_in = pointing_inputs(step.deps[0])
            s = binary_op(
                op, graph, z_in, a_in, params, vocab, step.concept, step.category
            )
            outcomes.append(StepOutcome("boolean", logit=s))
        elif op in ("and", "or", "not"):
            logits = [outcomes[d].logit for d in step.deps]
            outcomes.append(StepOutcome("boolean", logit=logical_op(op, *logits)))
        elif op == "query":
            z_in, a_in = pointing_inputs(step.deps[0])
            dist, labels, ans = query_op(graph, z_in, a_in, step.concept, params, vocab)
            outcomes.append(StepOutcome("answer"))
            answer, answer_dist, answer_labels = ans, dist, labels
        elif op == "choose":
            z_in, a_in = pointing_inputs(step.deps[0])
            dist, labels, ans = choose_op(
                graph, z_in, a_in, step.concept, step.category, params, vocab
            )
            outcomes.append(StepOutcome("answer"))
            answer, answer_dist, answer_labels = ans, dist, labels
        elif op == "common":
            z1, a1 = pointing_inputs(step.deps[0])
            z2, a2 = pointing_inputs(step.deps[1])
            dist, labels, ans = common_op(
                graph, z1, a1, z2, a2, step.concept, params, vocab
            )
            outcomes.append(StepOutcome("answer"))
            answer, answer_dist, answer_labels = ans, dist, labels
        else:
            raise ExecutionError(f"step {i}: unknown operator {op!r}")

    if answer is None:
        # Boolean terminal: decide at logit sign.
        logit = outcomes[terminal].logit
        answer = "yes" if logit > 0 else "no"
        answer_dist = np.array([_sigmoid(logit), 1.0 - _sigmoid(logit)])
        answer_labels = ["yes", "no"]

    attention = np.zeros(k)
    for idx in grounded_pointing_steps(program):
        out = outcomes[idx]
        for obj, score in zip(out.indices, out.scores):
            attention[obj] = max(attention[obj], score)
    return SoftTrace(outcomes, attention, answer, answer_dist, answer_labels)
