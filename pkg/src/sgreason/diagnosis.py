"""Object-centric diagnosis: grounding AP, object roles, perturbation suites,
flipping rates, and report assembly/serialization."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Box, Vocabulary, iou
from .errors import ExecutionError, SgError
from .exec_neural import ExecutorParams, exec_neural
from .exec_symbolic import exec_symbolic
from .scene_graph import (
    one_hot_encode,
    randomize_scores,
    remove_objects,
    remove_objects_symbolic,
)


def aggregate_attention(tensor: np.ndarray) -> np.ndarray:
    """Collapse a layers x heads x tokens x objects attention tensor to a
    per-object vector: max over heads, then mean over layers, then max over
    tokens."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 4:
        raise SgError(f"expected a 4-axis tensor, got shape {tensor.shape}")
    if 0 in tensor.shape:
        raise SgError(f"zero-size axis in attention tensor: {tensor.shape}")
    return tensor.max(axis=1).mean(axis=0).max(axis=0)


def _greedy_matches(order, detected, gt_boxes, iou_thresh):
    """True/false flags for detections processed in the given order; each gt
    box is consumed at most once, highest IoU first, lowest gt index on ties."""
    taken = [False] * len(gt_boxes)
    flags = []
    for di in order:
        best_gi, best_iou = -1, 0.0
        for gi, gbox in enumerate(gt_boxes):
            if taken[gi]:
                continue
            v = iou(detected[di], gbox)
            if v >= iou_thresh and v > best_iou:
                best_gi, best_iou = gi, v
        if best_gi >= 0:
            taken[best_gi] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _interpolated_area(recalls, precisions) -> float:
    """All-point interpolation: precision envelope by right-to-left max."""
    area = 0.0
    prev_recall = 0.0
    for i, r in enumerate(recalls):
        envelope = max(precisions[i:])
        area += (r - prev_recall) * envelope
        prev_recall = r
    return area


def grounding_ap(
    attention,
    detected: list[Box],
    gt_grounded: list[Box],
    iou_thresh: float = 0.5,
) -> float:
    """Average precision (0..100) of per-object attention against ground-truth
    grounded boxes. Only strictly positive attention counts as a prediction;
    thresholds sweep the distinct positive scores (all-point interpolation)."""
    attention = np.asarray(attention, dtype=np.float64)
    if len(attention) != len(detected):
        raise SgError("attention length must equal the number of detected boxes")
    predicted = [i for i in range(len(detected)) if attention[i] > 0.0]
    if not gt_grounded:
        return 0.0 if predicted else 100.0
    if not predicted:
        return 0.0
    order = sorted(predicted, key=lambda i: (-attention[i], i))
    flags = _greedy_matches(order, detected, gt_grounded, iou_thresh)
    # PR points at distinct-score group boundaries (threshold sweep).
    recalls, precisions = [], []
    tp = fp = 0
    n_gt = len(gt_grounded)
    for rank, di in enumerate(order):
        if flags[rank]:
            tp += 1
        else:
            fp += 1
        last_of_group = (
            rank + 1 == len(order) or attention[order[rank + 1]] != attention[di]
        )
        if last_of_group:
            recalls.append(tp / n_gt)
            precisions.append(tp / (tp + fp))
    return 100.0 * _interpolated_area(recalls, precisions)


@dataclass(frozen=True)
class ObjectRoles:
    """Partition of detected objects into foreground/background w.r.t. the
    ground-truth referred and grounded boxes of one question."""

    foreground: tuple
    background: tuple


def classify_roles(
    detected: list[Box], gt_referred: list[Box], overlap_thresh: float = 0.0
) -> ObjectRoles:
    """Foreground = detected boxes overlapping (IoU > threshold, default any
    overlap) the union of ground-truth referred/grounded boxes."""
    fg, bg = [], []
    for i, dbox in enumerate(detected):
        if any(iou(dbox, gbox) > overlap_thresh for gbox in gt_referred):
            fg.append(i)
        else:
            bg.append(i)
    return ObjectRoles(tuple(fg), tuple(bg))


@dataclass
class RateResult:
    accuracy_before: float
    accuracy_after: float
    c_to_i: float
    i_to_c: float
    zero_division: tuple = ()  # which rates had an empty denominator


def flipping_rates(before, after, gt) -> RateResult:
    """before: (answer, correct?) pairs; after/gt: answer lists. Rates in %."""
    if not (len(before) == len(after) == len(gt)):
        raise SgError("before/after/gt lengths differ")
    n = len(before)
    if n == 0:
        return RateResult(0.0, 0.0, 0.0, 0.0, ("c_to_i", "i_to_c"))
    correct_before = [c for _, c in before]
    correct_after = [a == g for a, g in zip(after, gt)]
    acc_before = 100.0 * sum(correct_before) / n
    acc_after = 100.0 * sum(correct_after) / n
    flags = []
    n_correct = sum(correct_before)
    n_wrong = n - n_correct
    if n_correct:
        c_to_i = 100.0 * sum(
            1 for cb, ca in zip(correct_before, correct_after) if cb and not ca
        ) / n_correct
    else:
        c_to_i, flags = 0.0, flags + ["c_to_i"]
    if n_wrong:
        i_to_c = 100.0 * sum(
            1 for cb, ca in zip(correct_before, correct_after) if not cb and ca
        ) / n_wrong
    else:
        i_to_c, flags = 0.0, flags + ["i_to_c"]
    return RateResult(acc_before, acc_after, c_to_i, i_to_c, tuple(flags))


class SymbolicHandle:
    """Executes questions symbolically on their ground-truth graphs."""

    mode = "symbolic"

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def base_graph(self, record):
        return record.graph_gt

    def detected_boxes(self, graph):
        return graph.boxes

    def run(self, record, graph):
        trace = exec_symbolic(record.program, graph, self.vocab)
        attention = np.zeros(graph.num_objects)
        for i in trace.grounded:
            attention[i] = 1.0
        return trace.answer, attention

    def remove(self, graph, indices):
        return remove_objects_symbolic(graph, indices)[0]

    def randomize(self, graph, seed, scale):
        raise SgError("randomize perturbation requires the neural executor")


class NeuralHandle:
    """Executes questions with the probabilistic executor on predicted graphs."""

    mode = "neural"

    def __init__(self, vocab: Vocabulary, params: ExecutorParams):
        self.vocab = vocab
        self.params = params

    def base_graph(self, record):
        graph = record.predicted_graph(self.vocab)
        if graph is None:
            graph = one_hot_encode(record.graph_gt, self.vocab)
        return graph

    def detected_boxes(self, graph):
        return graph.boxes

    def run(self, record, graph):
        trace = exec_neural(record.program, graph, self.vocab, self.params)
        return trace.answer, trace.final_attention

    def remove(self, graph, indices):
        return remove_objects(graph, indices)[0]

    def randomize(self, graph, seed, scale):
        return randomize_scores(graph, seed, scale)


def _perturbed_graph(handle, graph, spec, roles):
    if spec.kind == "background_removal":
        return handle.remove(graph, roles.background)
    if spec.kind == "foreground_removal":
        return handle.remove(graph, roles.foreground)
    return handle.randomize(graph, spec.seed, spec.noise_scale)


def evaluate_question(record, handle, specs, iou_thresh=0.5):
    """Run one question on its base graph and every perturbed variant.

    Executor errors are recorded per question, never raised."""
    graph = handle.base_graph(record)
    detected = handle.detected_boxes(graph)
    union_boxes = list(record.grounded_boxes)
    for boxes in record.referred_boxes:
        if boxes:
            union_boxes.extend(boxes)
    roles = classify_roles(detected, union_boxes)
    result = {
        "question_id": record.question_id,
        "template": record.template,
        "question_type": record.question_type,
        "gt_answer": record.answer,
        "answer": None,
        "correct": False,
        "error": None,
        "grounding_ap": None,
        "perturbed": {},
    }
    try:
        answer, attention = handle.run(record, graph)
        result["answer"] = answer
        result["correct"] = answer == record.answer
        result["grounding_ap"] = grounding_ap(
            attention, detected, record.grounded_boxes, iou_thresh
        )
    except ExecutionError as exc:
        result["error"] = str(exc)
    for spec in specs:
        label = _spec_label(spec)
        try:
            perturbed = _perturbed_graph(handle, graph, spec, roles)
            answer, _ = handle.run(record, perturbed)
            result["perturbed"][label] = {"answer": answer, "error": None}
        except ExecutionError as exc:
            result["perturbed"][label] = {"answer": None, "error": str(exc)}
    return result


def _spec_label(spec) -> str:
    return {
        "background_removal": "bg",
        "foreground_removal": "fg",
        "randomize": "rand",
    }[spec.kind]


def _eval_star(args):
    return evaluate_question(*args)


def evaluate_records(records, handle, specs, iou_thresh=0.5, jobs=1):
    tasks = [(record, handle, specs, iou_thresh) for record in records]
    if jobs <= 1 or len(records) < 2:
        return [evaluate_question(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_eval_star, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass
class DiagnosisReport:
    per_question: list = field(default_factory=list)
    grounding: dict = field(default_factory=dict)
    robustness: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "per_question": self.per_question,
            "grounding": self.grounding,
            "robustness": self.robustness,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DiagnosisReport":
        return cls(
            per_question=data.get("per_question", []),
            grounding=data.get("grounding", {}),
            robustness=data.get("robustness", {}),
        )


def build_report(records, handle, specs, iou_thresh=0.5, jobs=1) -> DiagnosisReport:
    """Evaluate every question and aggregate grounding and robustness tables."""
    results = evaluate_records(records, handle, specs, iou_thresh, jobs)
    per_question = [
        {
            "question_id": r["question_id"],
            "template": r["template"],
            "question_type": r["question_type"],
            "gt_answer": r["gt_answer"],
            "answer": r["answer"],
            "correct": r["correct"],
            "error": r["error"],
            "grounding_ap": r["grounding_ap"],
        }
        for r in results
    ]
    grounding = {"overall": _mean_ap(results), "by_type": {}, "accuracy": _accuracy(results)}
    for qtype in sorted({r["question_type"] for r in results}):
        subset = [r for r in results if r["question_type"] == qtype]
        grounding["by_type"][qtype] = _mean_ap(subset)
    robustness = {}
    for spec in specs:
        label = _spec_label(spec)
        before = [(r["answer"], r["correct"]) for r in results]
        after = [r["perturbed"][label]["answer"] for r in results]
        gt = [r["gt_answer"] for r in results]
        rates = flipping_rates(before, after, gt)
        robustness[label] = {
            "accuracy_before": rates.accuracy_before,
            "accuracy_after": rates.accuracy_after,
            "c_to_i": rates.c_to_i,
            "i_to_c": rates.i_to_c,
            "zero_division": list(rates.zero_division),
        }
    return DiagnosisReport(per_question, grounding, robustness)


def _mean_ap(results) -> float | None:
    values = [r["grounding_ap"] for r in results if r["grounding_ap"] is not None]
    return float(np.mean(values)) if values else None


def _accuracy(results) -> float:
    if not results:
        return 0.0
    return 100.0 * sum(1 for r in results if r["correct"]) / len(results)


# --- report serialization -------------------------------------------------

CSV_QUESTION_COLUMNS = (
    "question_id", "template", "question_type", "gt_answer",
    "answer", "correct", "error", "grounding_ap",
)
CSV_ROBUSTNESS_COLUMNS = (
    "perturbation", "accuracy_before", "accuracy_after",
    "c_to_i", "i_to_c", "zero_division",
)


def emit_report(report: DiagnosisReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _emit_csv(report)
    if fmt == "markdown":
        return _emit_markdown(report)
    raise SgError(f"unknown report format {fmt!r}")


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _emit_csv(report: DiagnosisReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["record_type", "key", "value"] + list(CSV_QUESTION_COLUMNS))
    for key, value in sorted(report.grounding.items()):
        if key == "by_type":
            for qtype, ap in sorted(value.items()):
                writer.writerow(["grounding", f"by_type:{qtype}", _fmt_cell(ap)])
        else:
            writer.writerow(["grounding", key, _fmt_cell(value)])
    for label, row in sorted(report.robustness.items()):
        for column in CSV_ROBUSTNESS_COLUMNS[1:]:
            value = row[column]
            if column == "zero_division":
                value = "|".join(value) if value else ""
                writer.writerow(["robustness", f"{label}:{column}", value])
            else:
                writer.writerow(["robustness", f"{label}:{column}", _fmt_cell(value)])
    for q in report.per_question:
        writer.writerow(
            ["question", "", ""] + [_fmt_cell(q[c]) for c in CSV_QUESTION_COLUMNS]
        )
    return buf.getvalue()


def parse_csv_report(text: str) -> DiagnosisReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[:3] != ["record_type", "key", "value"]:
        raise SgError("not a diagnosis report CSV")
    report = DiagnosisReport()
    for row in reader:
        record_type = row[0]
        if record_type == "grounding":
            key, value = row[1], _parse_cell(row[2])
            if key.startswith("by_type:"):
                report.grounding.setdefault("by_type", {})[key.split(":", 1)[1]] = value
            else:
                report.grounding[key] = value
        elif record_type == "robustness":
            label, column = row[1].split(":", 1)
            entry = report.robustness.setdefault(label, {})
            if column == "zero_division":
                entry[column] = row[2].split("|") if row[2] else []
            else:
                entry[column] = _parse_cell(row[2])
        elif record_type == "question":
            cells = row[3 : 3 + len(CSV_QUESTION_COLUMNS)]
            report.per_question.append(
                {c: _parse_cell(v) for c, v in zip(CSV_QUESTION_COLUMNS, cells)}
            )
    return report


def _emit_markdown(report: DiagnosisReport) -> str:
    lines = ["## Grounding", ""]
    types = sorted(report.grounding.get("by_type", {}))
    header = ["Overall"] + types
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    row = [_fmt_pct(report.grounding.get("overall"))]
    row += [_fmt_pct(report.grounding["by_type"][t]) for t in types]
    lines.append("| " + " | ".join(row) + " |")
    lines += ["", "## Robustness", ""]
    lines.append("| Perturbation | Acc. | C→I | I→C |")
    lines.append("|---|---|---|---|")
    for label, entry in sorted(report.robustness.items()):
        lines.append(
            "| {} | {} | {} | {} |".format(
                label,
                _fmt_pct(entry["accuracy_after"]),
                _fmt_pct(entry["c_to_i"]),
                _fmt_pct(entry["i_to_c"]),
            )
        )
    lines.append("")
    return "\n".join(lines)


def _fmt_pct(value) -> str:
    return "-" if value is None else f"{value:.2f}"
