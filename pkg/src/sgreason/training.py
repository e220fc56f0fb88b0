"""Teacher-forcing supervision extraction and gradient-descent training.

The executor has ~21 scalar parameters, so gradients are computed in
closed form by forward-mode accumulation (see autodiff.py) and checked
against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core import Box, Vocabulary, match_boxes
from .errors import SgError, TrainingDivergedError
from .exec_neural import (
    ExecutorParams,
    SoftTrace,
    StepOutcome,
    _feats,
    score_column,
)
from .exec_symbolic import exec_symbolic
from .program import Program
from .scene_graph import ProbabilisticSceneGraph, SymbolicSceneGraph

# Parameter vector layout
ALPHA = 0
PSI = 1  # 7 weights + bias
PHI = 9  # 7 weights + bias
EXIST_W, EXIST_B = 17, 18
VERIFY_W, VERIFY_B = 19, 20
NPARAMS = 21


def pack_params(params: ExecutorParams) -> np.ndarray:
    vec = np.zeros(NPARAMS)
    vec[ALPHA] = params.alpha
    vec[PSI : PSI + 8] = params.psi
    vec[PHI : PHI + 8] = params.phi
    vec[EXIST_W], vec[EXIST_B] = params.calib["exist"]
    vec[VERIFY_W], vec[VERIFY_B] = params.calib["verify"]
    return vec


def unpack_params(vec: np.ndarray, template: ExecutorParams) -> ExecutorParams:
    return ExecutorParams(
        alpha=float(np.clip(vec[ALPHA], 1e-3, 1.0)),
        psi=vec[PSI : PSI + 8].copy(),
        phi=vec[PHI : PHI + 8].copy(),
        calib={
            "exist": (float(vec[EXIST_W]), float(vec[EXIST_B])),
            "verify": (float(vec[VERIFY_W]), float(vec[VERIFY_B])),
        },
        pointing_threshold=template.pointing_threshold,
        topk=template.topk,
        relate_reduce=template.relate_reduce,
    )


@dataclass(frozen=True)
class PointingSup:
    """Teacher-forced input index sets and selection labels for one step."""

    input_sets: tuple  # one tuple of detected indices for filter, two for relate
    labels: tuple  # 0/1 per pool-side input index
    output_indices: tuple


@dataclass(frozen=True)
class BinarySup:
    value: bool


@dataclass(frozen=True)
class AnswerSup:
    kind: str  # query | choose | common
    target: int  # index into the step's candidate list
    input_indices: tuple = ()


@dataclass
class StepSupervision:
    steps: list
    answer: str


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    iterations: int = 200
    batch_size: int = 32
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0, 1.0)  # pointing, binary, query

    def __post_init__(self):
        if self.learning_rate < 0:
            raise SgError("learning_rate must be >= 0")
        if self.iterations <= 0 or self.batch_size <= 0:
            raise SgError("iterations and batch_size must be positive")
        if any(w < 0 for w in self.loss_weights) or not any(self.loss_weights):
            raise SgError("loss weights must be non-negative, not all zero")


def generate_supervision(
    program: Program,
    gt_graph: SymbolicSceneGraph,
    detected_boxes: list[Box],
    vocab: Vocabulary,
    iou_threshold: float = 0.5,
) -> StepSupervision:
    """Run the program symbolically on the ground truth, then map per-step
    referred sets onto the detected boxes by greedy IoU matching."""
    trace = exec_symbolic(program, gt_graph, vocab)
    match = match_boxes(detected_boxes, gt_graph.boxes, iou_threshold)
    gt_of = match.pairs  # detected -> gt
    det_of = match.gt_to_detected()

    def mapped(gt_set) -> tuple:
        return tuple(sorted(det_of[g] for g in gt_set if g in det_of))

    steps = []
    for i, step in enumerate(program.steps):
        op = step.operator
        if op in ("filter", "relate"):
            if op == "filter":
                if step.deps:
                    input_sets = (mapped(trace.results[step.deps[0]]),)
                else:
                    input_sets = (tuple(range(len(detected_boxes))),)
                pool = input_sets[0]
            else:
                input_sets = (
                    mapped(trace.results[step.deps[0]]),
                    mapped(trace.results[step.deps[1]]),
                )
                pool = input_sets[0] if step.concept == "subject" else input_sets[1]
            gt_out = trace.results[i]
            labels = tuple(
                1 if (d in gt_of and gt_of[d] in gt_out) else 0 for d in pool
            )
            output = tuple(d for d, y in zip(pool, labels) if y)
            steps.append(PointingSup(input_sets, labels, output))
        elif op in ("exist", "verify", "and", "or", "not"):
            steps.append(BinarySup(bool(trace.results[i])))
        else:  # query | choose | common
            dep_sets = [mapped(trace.results[d]) for d in step.deps]
            candidates = _answer_candidates(step, vocab)
            try:
                target = candidates.index(trace.answer)
            except ValueError:
                raise SgError(
                    f"answer {trace.answer!r} not among step {i} candidates"
                ) from None
            steps.append(AnswerSup(op, target, tuple(dep_sets[0])))
    return StepSupervision(steps, trace.answer)


def _answer_candidates(step, vocab: Vocabulary) -> list[str]:
    if step.operator == "choose":
        return list(step.category)
    if step.operator == "query":
        concept = vocab.concept(step.concept)
        names = vocab.names_for_kind(concept.kind)
        return [names[m] for m in concept.members]
    # common
    if step.concept is not None:
        concept = vocab.concept(step.concept)
        return [vocab.attribute_names[m] for m in concept.members]
    return list(vocab.attribute_names[1:])


def _pointwise(vec, graph, indices, a_in, concept, category, vocab):
    col = ad.const(score_column(graph, indices, concept, category, vocab), NPARAMS)
    mod = ad.sigmoid(ad.affine(_feats(graph, list(indices)), vec, PSI, NPARAMS))
    alpha = ad.param(vec, ALPHA, NPARAMS)
    return ad.blend(a_in, ad.mul(col, mod), alpha)


def _calibrated(vec, score, w_idx, b_idx):
    w = ad.param(vec, w_idx, NPARAMS)
    b = ad.param(vec, b_idx, NPARAMS)
    return ad.add(ad.mul(w, score), b)


def _forward(
    vec: np.ndarray,
    program: Program,
    graph: ProbabilisticSceneGraph,
    sup: StepSupervision,
    vocab: Vocabulary,
    weights=(1.0, 1.0, 1.0),
):
    """Teacher-forced forward pass. Returns (total loss DVal, per-step records).

    Steps whose teacher-forced input set came out empty (no detected box
    matched the ground truth) contribute no loss and propagate emptiness.
    """
    w_point, w_binary, w_query = weights
    alpha = ad.param(vec, ALPHA, NPARAMS)
    total = ad.const(0.0, NPARAMS)
    records: list = []  # per step: ("pointing", indices, p) | ("boolean", s) | ("answer", logits, labels)
    carried: list = []  # per step: (indices, DVal scores) for pointing, DVal logit or None for boolean

    def dep_scores(dep: int, indices):
        """Scores from a dependency step aligned with the given input indices."""
        dep_indices, dep_vals = carried[dep]
        if dep_vals is None or list(indices) != list(dep_indices):
            lookup = dict(zip(dep_indices, range(len(dep_indices))))
            positions = [lookup[i] for i in indices]
            return dep_vals.take(positions)
        return dep_vals

    for i, step in enumerate(program.steps):
        op = step.operator
        s = sup.steps[i]
        if op in ("filter", "relate"):
            if op == "filter":
                pool = s.input_sets[0]
            else:
                pool = s.input_sets[0] if step.concept == "subject" else s.input_sets[1]
            if (op == "filter" and not pool) or (
                op == "relate" and (not s.input_sets[0] or not s.input_sets[1])
            ):
                records.append(("pointing", (), None))
                carried.append(((), None))
                continue
            if op == "filter":
                if step.deps:
                    a_in = dep_scores(step.deps[0], pool)
                else:
                    a_in = ad.const(np.zeros(len(pool)), NPARAMS)
                p = _pointwise(vec, graph, pool, a_in, step.concept, step.category, vocab)
            else:
                z_s, z_o = s.input_sets
                a_s = dep_scores(step.deps[0], z_s)
                a_o = dep_scores(step.deps[1], z_o)
                pid = vocab.predicate_id(step.category)
                slice_ = ad.const(graph.s_p[np.ix_(list(z_s), list(z_o))][:, :, pid], NPARAMS)
                mod = ad.sigmoid(
                    ad.outer(
                        ad.affine(_feats(graph, list(z_s)), vec, PSI, NPARAMS),
                        ad.affine(_feats(graph, list(z_o)), vec, PHI, NPARAMS),
                    )
                )
                scored = ad.mul(slice_, mod)
                if step.concept == "subject":
                    reduced = ad.reduce_weighted(scored, ad.softmax(a_o), axis=1)
                    a_pool = a_s
                else:
                    reduced = ad.reduce_weighted(scored, ad.softmax(a_s), axis=0)
                    a_pool = a_o
                p = ad.blend(a_pool, reduced, alpha)
            labels = np.asarray(s.labels, dtype=np.float64)
            if w_point:
                total = ad.add(total, ad.scale(ad.bce_with_logits(p, labels), w_point))
            records.append(("pointing", tuple(pool), p))
            positions = [k for k, y in enumerate(s.labels) if y]
            if positions:
                carried.append((s.output_indices, p.take(positions)))
            else:
                carried.append(((), None))
        elif op in ("exist", "verify"):
            dep_idx, dep_vals = carried[step.deps[0]]
            if dep_vals is None:
                records.append(("boolean", None))
                carried.append((None, None))
                continue
            if op == "exist":
                logit = _calibrated(vec, ad.vmax(dep_vals), EXIST_W, EXIST_B)
            else:
                blended = _pointwise(
                    vec, graph, dep_idx, dep_vals, step.concept, step.category, vocab
                )
                logit = _calibrated(vec, ad.vmax(blended), VERIFY_W, VERIFY_B)
            if w_binary:
                total = ad.add(
                    total,
                    ad.scale(ad.bce_with_logits(logit, float(s.value)), w_binary),
                )
            records.append(("boolean", logit))
            carried.append((None, logit))
        elif op in ("and", "or", "not"):
            dep_logits = [carried[d][1] for d in step.deps]
            if any(l is None for l in dep_logits):
                records.append(("boolean", None))
                carried.append((None, None))
                continue
            if op == "and":
                logit = ad.minimum(*dep_logits)
            elif op == "or":
                logit = ad.maximum(*dep_logits)
            else:
                logit = ad.neg(dep_logits[0])
            if w_binary:
                total = ad.add(
                    total,
                    ad.scale(ad.bce_with_logits(logit, float(s.value)), w_binary),
                )
            records.append(("boolean", logit))
            carried.append((None, logit))
        else:  # query | choose | common
            candidates = _answer_candidates(step, vocab)
            dep_carried = [carried[d] for d in step.deps]
            if any(vals is None for _, vals in dep_carried):
                records.append(("answer", None, candidates))
                carried.append((None, None))
                continue
            logits = _answer_logits(vec, graph, step, dep_carried, vocab)
            if w_query:
                total = ad.add(
                    total, ad.scale(ad.cross_entropy(logits, s.target), w_query)
                )
            records.append(("answer", logits, candidates))
            carried.append((None, None))
    return total, records


def _answer_logits(vec, graph, step, dep_carried, vocab):
    alpha = ad.param(vec, ALPHA, NPARAMS)

    def weighted(indices, vals, members, matrix):
        rows = ad.const(matrix[np.ix_(list(indices), members)], NPARAMS)
        mod = ad.sigmoid(ad.affine(_feats(graph, list(indices)), vec, PSI, NPARAMS))
        modulated = ad.DVal(
            rows.v * mod.v[:, None],
            rows.j * mod.v[:, None, None] + mod.j[:, None, :] * rows.v[..., None],
        )
        return ad.weighted_sum(ad.softmax(vals), modulated)

    if step.operator == "query":
        concept = vocab.concept(step.concept)
        matrix = graph.s_o if concept.kind == "object" else graph.s_a
        indices, vals = dep_carried[0]
        return weighted(indices, vals, list(concept.members), matrix)
    if step.operator == "choose":
        indices, vals = dep_carried[0]
        logits = []
        for cat in step.category:
            blended = _pointwise(vec, graph, indices, vals, step.concept, cat, vocab)
            logits.append(_calibrated(vec, ad.vmax(blended), VERIFY_W, VERIFY_B))
        return ad.stack(logits)
    # common
    if step.concept is not None:
        members = list(vocab.concept(step.concept).members)
    else:
        members = list(range(1, len(vocab.attribute_names)))
    (z1, v1), (z2, v2) = dep_carried
    return ad.minimum(
        weighted(z1, v1, members, graph.s_a), weighted(z2, v2, members, graph.s_a)
    )


def teacher_forced_trace(
    program: Program,
    graph: ProbabilisticSceneGraph,
    sup: StepSupervision,
    vocab: Vocabulary,
    params: ExecutorParams,
) -> SoftTrace:
    """Forward pass with teacher-forced step inputs, packaged as a SoftTrace.

    Pointing steps carry the score vector over the full teacher-forced input
    set (aligned with the supervision labels), not a thresholded selection.
    """
    _, records = _forward(pack_params(params), program, graph, sup, vocab)
    steps = []
    answer_dist = None
    answer_labels = None
    for record in records:
        if record[0] == "pointing":
            _, indices, p = record
            scores = p.v if p is not None else np.zeros(0)
            steps.append(StepOutcome("pointing", tuple(indices), np.atleast_1d(scores)))
        elif record[0] == "boolean":
            logit = record[1]
            steps.append(
                StepOutcome("boolean", logit=float(logit.v) if logit is not None else None)
            )
        else:
            _, logits, labels = record
            steps.append(StepOutcome("answer"))
            if logits is not None:
                e = np.exp(logits.v - np.max(logits.v))
                answer_dist = e / e.sum()
                answer_labels = labels
    attention = np.zeros(graph.num_objects)
    return SoftTrace(steps, attention, sup.answer, answer_dist, answer_labels)


def loss(trace: SoftTrace, sup: StepSupervision, weights=(1.0, 1.0, 1.0)) -> float:
    """Weighted teacher-forcing loss of a trace against its supervision."""
    w_point, w_binary, w_query = weights
    total = 0.0
    if len(trace.steps) != len(sup.steps):
        raise SgError("trace and supervision step counts differ")
    for outcome, s in zip(trace.steps, sup.steps):
        if isinstance(s, PointingSup):
            if outcome.kind != "pointing":
                raise SgError("step kind mismatch between trace and supervision")
            labels = np.asarray(s.labels, dtype=np.float64)
            scores = np.asarray(outcome.scores)
            if len(labels) != len(scores):
                raise SgError("label vector and score vector lengths differ")
            if len(labels) == 0:
                continue
            total += w_point * float(
                np.mean(
                    np.maximum(scores, 0.0)
                    - scores * labels
                    + np.log1p(np.exp(-np.abs(scores)))
                )
            )
        elif isinstance(s, BinarySup):
            if outcome.logit is None:
                continue
            y = float(s.value)
            v = outcome.logit
            total += w_binary * float(
                max(v, 0.0) - v * y + np.log1p(np.exp(-abs(v)))
            )
        else:  # AnswerSup
            if trace.answer_distribution is None:
                continue
            total += w_query * float(
                -np.log(max(trace.answer_distribution[s.target], 1e-300))
            )
    return total


def sample_loss(
    params: ExecutorParams,
    program: Program,
    graph: ProbabilisticSceneGraph,
    sup: StepSupervision,
    vocab: Vocabulary,
    weights=(1.0, 1.0, 1.0),
) -> float:
    total, _ = _forward(pack_params(params), program, graph, sup, vocab, weights)
    return float(total.v)


def grad(
    params: ExecutorParams,
    batch,
    vocab: Vocabulary,
    weights=(1.0, 1.0, 1.0),
) -> tuple[float, np.ndarray]:
    """Mean loss and its analytic gradient over a batch of
    (program, graph, supervision) samples."""
    vec = pack_params(params)
    return grad_at(vec, batch, vocab, weights)


def grad_at(vec: np.ndarray, batch, vocab, weights=(1.0, 1.0, 1.0)):
    total = 0.0
    jac = np.zeros(NPARAMS)
    if not batch:
        return total, jac
    for program, graph, sup in batch:
        dval, _ = _forward(vec, program, graph, sup, vocab, weights)
        total += float(dval.v)
        jac += dval.j
    n = len(batch)
    return total / n, jac / n


def train(
    params: ExecutorParams,
    dataset,
    config: TrainConfig,
    vocab: Vocabulary,
) -> tuple[ExecutorParams, list[float]]:
    """Mini-batch gradient descent; deterministic given the config seed."""
    if not dataset:
        raise SgError("training dataset is empty")
    vec = pack_params(params)
    rng = np.random.default_rng(config.seed)
    curve = []
    n = len(dataset)
    for _ in range(config.iterations):
        if config.batch_size >= n:
            batch = dataset
        else:
            idx = rng.choice(n, size=config.batch_size, replace=False)
            batch = [dataset[int(i)] for i in idx]
        mean_loss, g = grad_at(vec, batch, vocab, config.loss_weights)
        if not np.isfinite(mean_loss) or not np.all(np.isfinite(g)):
            raise TrainingDivergedError(
                f"loss became non-finite at iteration {len(curve)}"
            )
        vec = vec - config.learning_rate * g
        vec[ALPHA] = np.clip(vec[ALPHA], 1e-3, 1.0)
        curve.append(mean_loss)
    return unpack_params(vec, params), curve
