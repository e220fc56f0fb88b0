"""Synthetic scene-graph / question generation and dataset JSONL I/O.

Generated questions are self-consistent by construction: every candidate
program is executed symbolically on its source graph and rejected unless all
intermediate referred sets are non-empty and every set feeding an answer step
is a singleton. That keeps the symbolic and exact-mode probabilistic
executors in step-by-step agreement on clean encodings.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BACKGROUND_NAME,
    POSITION_CATEGORIES,
    Box,
    Concept,
    Vocabulary,
    position_predicate,
)
from .errors import ExecutionError, SgError
from .exec_symbolic import exec_symbolic
from .program import Program, parse_program, program_from_json_dict, program_to_json_dict
from .scene_graph import (
    ProbabilisticSceneGraph,
    Relation,
    SceneObject,
    SymbolicSceneGraph,
    perturb_encode,
)

_OBJECTS = (
    "person", "man", "woman", "dog", "cat", "car", "truck", "bus", "tree",
    "house", "chair", "table", "streetlight", "bird", "horse", "cup", "ball",
    "sign", "bench", "flower",
)
_COLORS = ("red", "blue", "green", "white", "black")
_MATERIALS = ("wood", "metal", "plastic", "glass", "leather")
_SIZES = ("small", "large", "tall", "short", "wide")
_PREDICATES = ("above", "below", "left-of", "right-of", "near", "holding", "wearing", "on")

_ATTR_CONCEPTS = ("color", "material", "size")


def default_vocabulary() -> Vocabulary:
    objects = (BACKGROUND_NAME,) + _OBJECTS
    attributes = (BACKGROUND_NAME,) + _COLORS + _MATERIALS + _SIZES
    predicates = (BACKGROUND_NAME,) + _PREDICATES
    concepts = {
        "object": Concept("object", tuple(range(1, len(objects)))),
        "color": Concept("attribute", tuple(range(1, 6))),
        "material": Concept("attribute", tuple(range(6, 11))),
        "size": Concept("attribute", tuple(range(11, 16))),
        "position": Concept("position", tuple(range(6))),
        "relation": Concept("relation", tuple(range(1, len(predicates)))),
    }
    return Vocabulary(objects, attributes, predicates, concepts)


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    num_scenes: int = 10
    questions_per_scene: int = 3
    objects_range: tuple = (4, 7)
    distractor_range: tuple = (1, 3)
    # weight per template name; zero weight disables a template
    template_mix: dict = field(default_factory=dict)


@dataclass
class QuestionRecord:
    question_id: str
    template: str
    program: Program
    graph_gt: SymbolicSceneGraph
    referred_boxes: list  # per step: list[Box] for pointing steps, else None
    grounded_boxes: list
    perturb: dict | None = None  # {"noise_sd", "flip_rate", "seed"}
    graph_pred_data: dict | None = None  # explicit probabilistic graph JSON

    @property
    def answer(self) -> str:
        return self.program.answer

    @property
    def question_type(self) -> str:
        return "binary" if self.answer in ("yes", "no") else "open"

    def predicted_graph(self, vocab: Vocabulary) -> ProbabilisticSceneGraph | None:
        """Materialize the predicted graph, if any is attached."""
        if self.graph_pred_data is not None:
            return ProbabilisticSceneGraph.from_json_dict(self.graph_pred_data)
        if self.perturb is not None:
            return perturb_encode(
                self.graph_gt,
                vocab,
                noise_sd=self.perturb["noise_sd"],
                flip_rate=self.perturb["flip_rate"],
                seed=self.perturb["seed"],
            )
        return None


# --- scene generation -------------------------------------------------------


def _place_box(rng, existing, max_tries=200) -> Box:
    from .core import iou

    for _ in range(max_tries):
        w = rng.uniform(0.12, 0.30)
        h = rng.uniform(0.12, 0.30)
        x1 = rng.uniform(0.0, 1.0 - w)
        y1 = rng.uniform(0.0, 1.0 - h)
        box = Box(x1, y1, x1 + w, y1 + h)
        if all(iou(box, other) <= 0.2 for other in existing):
            return box
    raise SgError("could not place a non-overlapping box")


def gen_scene(spec: GenSpec, index: int, vocab: Vocabulary) -> SymbolicSceneGraph:
    """Deterministic synthetic scene: boxes, categories, attributes, relations.

    Spatial predicates are sound w.r.t. box geometry; holding/wearing/on are
    sampled freely."""
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = spec.objects_range
    n_core = int(rng.integers(lo, hi + 1))
    dlo, dhi = spec.distractor_range
    n_extra = int(rng.integers(dlo, dhi + 1))

    boxes = []
    for _ in range(n_core + n_extra):
        boxes.append(_place_box(rng, boxes))

    n_cat = len(vocab.object_names) - 1
    core_cats = 1 + rng.permutation(n_cat)[:n_core]
    categories = [int(c) for c in core_cats]
    for _ in range(n_extra):
        if categories and rng.random() < 0.6:
            categories.append(int(categories[rng.integers(len(categories))]))
        else:
            categories.append(int(rng.integers(1, n_cat + 1)))

    objects = []
    for box, cat in zip(boxes, categories):
        attrs = set()
        for name in _ATTR_CONCEPTS:
            if rng.random() < 0.85:
                members = vocab.concepts[name].members
                attrs.add(int(members[rng.integers(len(members))]))
        objects.append(SceneObject(box, cat, frozenset(attrs)))

    spatial = {
        "above": lambda a, b: a.center[1] < b.center[1] - 0.05,
        "below": lambda a, b: a.center[1] > b.center[1] + 0.05,
        "left-of": lambda a, b: a.center[0] < b.center[0] - 0.05,
        "right-of": lambda a, b: a.center[0] > b.center[0] + 0.05,
        "near": lambda a, b: float(np.hypot(*(np.array(a.center) - b.center))) < 0.35,
    }
    semantic = ("holding", "wearing", "on")
    relations = set()
    n = len(objects)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            bi, bj = objects[i].box, objects[j].box
            for name, holds in spatial.items():
                if holds(bi, bj) and rng.random() < 0.35:
                    relations.add(Relation(i, vocab.predicate_id(name), j))
            if rng.random() < 0.05:
                pred = semantic[rng.integers(len(semantic))]
                relations.add(Relation(i, vocab.predicate_id(pred), j))
    return SymbolicSceneGraph(tuple(objects), frozenset(relations))


# --- question templates -----------------------------------------------------


def _cat_name(vocab, cat_id):
    return vocab.object_names[cat_id]


def _attr_name(vocab, attr_id):
    return vocab.attribute_names[attr_id]


def _by_category(scene):
    groups = {}
    for i, obj in enumerate(scene.objects):
        groups.setdefault(obj.category, []).append(i)
    return groups


def _shuffled(rng, items):
    items = list(items)
    rng.shuffle(items)
    return items


def _attr_in(vocab, obj, concept_name):
    members = set(vocab.concepts[concept_name].members)
    hits = sorted(obj.attributes & members)
    return hits[0] if hits else None


def _tmpl_query_attr(scene, vocab, rng):
    groups = _by_category(scene)
    for cat in _shuffled(rng, [c for c, idxs in groups.items() if len(idxs) == 1]):
        obj = scene.objects[groups[cat][0]]
        for concept in _shuffled(rng, _ATTR_CONCEPTS):
            if _attr_in(vocab, obj, concept) is not None:
                name = _cat_name(vocab, cat)
                text = f"What {concept} is the {name}?"
                return f"0: filter(object, {name}); 1: query({concept}) [0]", text
    return None


def _tmpl_filter_chain_query(scene, vocab, rng):
    groups = _by_category(scene)
    # only ambiguous categories, so the second filter actually disambiguates
    cats = [c for c in sorted(groups) if len(groups[c]) >= 2]
    for cat in _shuffled(rng, cats):
        idxs = groups[cat]
        for c1 in _shuffled(rng, _ATTR_CONCEPTS):
            counts = {}
            for i in idxs:
                a = _attr_in(vocab, scene.objects[i], c1)
                if a is not None:
                    counts.setdefault(a, []).append(i)
            for a, holders in sorted(counts.items()):
                if len(holders) != 1:
                    continue
                target = scene.objects[holders[0]]
                for c2 in _shuffled(rng, [c for c in _ATTR_CONCEPTS if c != c1]):
                    if _attr_in(vocab, target, c2) is None:
                        continue
                    name, val = _cat_name(vocab, cat), _attr_name(vocab, a)
                    text = f"What {c2} is the {val} {name}?"
                    return (
                        f"0: filter(object, {name}); 1: filter({c1}, {val}) [0]; "
                        f"2: query({c2}) [1]",
                        text,
                    )
    return None


def _tmpl_relate_query(scene, vocab, rng):
    for rel in _shuffled(rng, sorted(scene.relations, key=lambda r: (r.subject, r.predicate, r.object))):
        pred = vocab.predicate_names[rel.predicate]
        subj = scene.objects[rel.subject]
        if rng.random() < 0.5:
            # keep the subject side, ask about one of its attributes
            for concept in _shuffled(rng, _ATTR_CONCEPTS):
                if _attr_in(vocab, subj, concept) is None:
                    continue
                name = _cat_name(vocab, subj.category)
                text = f"What {concept} is the {name} that is {pred} something?"
                return (
                    f"0: filter(object, {name}); 1: filter(object, none); "
                    f"2: relate_subject({pred}) [0, 1]; 3: query({concept}) [2]",
                    text,
                )
        else:
            name = _cat_name(vocab, subj.category)
            text = f"What is the {name} {pred}?"
            return (
                f"0: filter(object, {name}); 1: filter(object, none); "
                f"2: relate_object({pred}) [0, 1]; 3: query(object) [2]",
                text,
            )
    return None


def _tmpl_exist(scene, vocab, rng):
    groups = _by_category(scene)
    cat = _shuffled(rng, sorted(groups))[0]
    name = _cat_name(vocab, cat)
    return f"0: filter(object, {name}); 1: exist [0]", f"Is there a {name}?"


def _pick_verify(scene, vocab, rng, cat, idxs):
    """(concept, value, holds) for a verify over the given category set."""
    for concept in _shuffled(rng, _ATTR_CONCEPTS):
        members = vocab.concepts[concept].members
        present = set()
        for i in idxs:
            present |= scene.objects[i].attributes & set(members)
        absent = [m for m in members if m not in present]
        want_yes = rng.random() < 0.5
        if want_yes and present:
            return concept, sorted(present)[int(rng.integers(len(present)))], True
        if not want_yes and absent:
            return concept, absent[int(rng.integers(len(absent)))], False
        if present:
            return concept, sorted(present)[int(rng.integers(len(present)))], True
        if absent:
            return concept, absent[int(rng.integers(len(absent)))], False
    return None


def _tmpl_verify(scene, vocab, rng):
    groups = _by_category(scene)
    for cat in _shuffled(rng, sorted(groups)):
        pick = _pick_verify(scene, vocab, rng, cat, groups[cat])
        if pick is None:
            continue
        concept, value, _ = pick
        name, val = _cat_name(vocab, cat), _attr_name(vocab, value)
        text = f"Is the {name} {val}?"
        return f"0: filter(object, {name}); 1: verify({concept}, {val}) [0]", text
    return None


def _tmpl_choose(scene, vocab, rng):
    groups = _by_category(scene)
    for cat in _shuffled(rng, sorted(groups)):
        idxs = groups[cat]
        for concept in _shuffled(rng, _ATTR_CONCEPTS):
            members = vocab.concepts[concept].members
            present = set()
            for i in idxs:
                present |= scene.objects[i].attributes & set(members)
            absent = [m for m in members if m not in present]
            if not present or not absent:
                continue
            yes = sorted(present)[int(rng.integers(len(present)))]
            no = absent[int(rng.integers(len(absent)))]
            a, b = (yes, no) if rng.random() < 0.5 else (no, yes)
            name = _cat_name(vocab, cat)
            va, vb = _attr_name(vocab, a), _attr_name(vocab, b)
            text = f"Is the {name} {va} or {vb}?"
            return f"0: filter(object, {name}); 1: choose({concept}, {va}|{vb}) [0]", text
    return None


def _tmpl_common(scene, vocab, rng):
    groups = _by_category(scene)
    singles = [c for c, idxs in sorted(groups.items()) if len(idxs) == 1]
    for i, c1 in enumerate(_shuffled(rng, singles)):
        for c2 in singles:
            if c2 == c1:
                continue
            o1 = scene.objects[groups[c1][0]]
            o2 = scene.objects[groups[c2][0]]
            for concept in _shuffled(rng, _ATTR_CONCEPTS):
                a1 = _attr_in(vocab, o1, concept)
                if a1 is not None and a1 == _attr_in(vocab, o2, concept):
                    n1, n2 = _cat_name(vocab, c1), _cat_name(vocab, c2)
                    text = f"What {concept} do the {n1} and the {n2} share?"
                    return (
                        f"0: filter(object, {n1}); 1: filter(object, {n2}); "
                        f"2: common({concept}) [0, 1]",
                        text,
                    )
    return None


def _tmpl_and_or(scene, vocab, rng, op):
    groups = _by_category(scene)
    cats = _shuffled(rng, sorted(groups))
    if len(cats) < 2:
        return None
    c1, c2 = cats[0], cats[1]
    pick = _pick_verify(scene, vocab, rng, c2, groups[c2])
    if pick is None:
        return None
    concept, value, _ = pick
    n1, n2 = _cat_name(vocab, c1), _cat_name(vocab, c2)
    val = _attr_name(vocab, value)
    joiner = "and" if op == "and" else "or"
    text = f"Is there a {n1} {joiner} is the {n2} {val}?"
    return (
        f"0: filter(object, {n1}); 1: exist [0]; 2: filter(object, {n2}); "
        f"3: verify({concept}, {val}) [2]; 4: {op} [1, 3]",
        text,
    )


def _tmpl_not(scene, vocab, rng):
    built = _tmpl_verify(scene, vocab, rng)
    if built is None:
        return None
    program, text = built
    n = program.count(";") + 1
    return program + f"; {n}: not [{n - 1}]", "Is it false that: " + text.lower()


def _tmpl_position_query(scene, vocab, rng):
    groups = _by_category(scene)
    for cat in _shuffled(rng, sorted(groups)):
        idxs = groups[cat]
        positions = {}
        for i in idxs:
            for pos_id in vocab.concepts["position"].members:
                if position_predicate(scene.objects[i].box, POSITION_CATEGORIES[pos_id]):
                    positions.setdefault(pos_id, []).append(i)
        for pos_id, holders in sorted(positions.items()):
            if len(holders) != 1:
                continue
            obj = scene.objects[holders[0]]
            for concept in _shuffled(rng, _ATTR_CONCEPTS):
                if _attr_in(vocab, obj, concept) is None:
                    continue
                name = _cat_name(vocab, cat)
                pos = POSITION_CATEGORIES[pos_id]
                text = f"What {concept} is the {name} on the {pos}?"
                return (
                    f"0: filter(object, {name}); 1: filter(position, {pos}) [0]; "
                    f"2: query({concept}) [1]",
                    text,
                )
    return None


TEMPLATES = {
    "query_attr": _tmpl_query_attr,
    "filter_chain_query": _tmpl_filter_chain_query,
    "relate_query": _tmpl_relate_query,
    "exist": _tmpl_exist,
    "verify": _tmpl_verify,
    "choose": _tmpl_choose,
    "common": _tmpl_common,
    "and": lambda s, v, r: _tmpl_and_or(s, v, r, "and"),
    "or": lambda s, v, r: _tmpl_and_or(s, v, r, "or"),
    "not": _tmpl_not,
    "position_query": _tmpl_position_query,
}

_ANSWER_FEEDERS = ("query", "choose", "common")


def _admissible(program: Program, scene, vocab):
    """Execute symbolically; reject programs with empty intermediate sets or
    non-singleton sets feeding open-answer steps."""
    try:
        trace = exec_symbolic(program, scene, vocab)
    except ExecutionError:
        return None
    for step, result in zip(program.steps, trace.results):
        if isinstance(result, frozenset) and not result:
            return None
    for step in program.steps:
        if step.operator in _ANSWER_FEEDERS:
            for d in step.deps:
                if len(trace.results[d]) != 1:
                    return None
    return trace


def gen_question(spec: GenSpec, scene: SymbolicSceneGraph, vocab: Vocabulary, rng):
    """One admissible (program, template, trace) triple, or None."""
    mix = {name: spec.template_mix.get(name, 1.0) for name in TEMPLATES}
    names = [n for n in TEMPLATES if mix[n] > 0]
    weights = np.array([mix[n] for n in names], dtype=np.float64)
    order = rng.choice(len(names), size=len(names), replace=False, p=weights / weights.sum())
    for k in order:
        name = names[int(k)]
        built = TEMPLATES[name](scene, vocab, rng)
        if built is None:
            continue
        text_program, question = built
        program = parse_program(text_program, vocab)
        trace = _admissible(program, scene, vocab)
        if trace is None:
            continue
        program = Program(program.steps, question, trace.answer)
        return program, name, trace
    return None


def gen_dataset(spec: GenSpec, vocab: Vocabulary | None = None) -> list[QuestionRecord]:
    vocab = vocab or default_vocabulary()
    records = []
    for index in range(spec.num_scenes):
        scene = gen_scene(spec, index, vocab)
        rng = np.random.default_rng([spec.seed, index, 1000])
        for q in range(spec.questions_per_scene):
            built = gen_question(spec, scene, vocab, rng)
            if built is None:
                continue
            program, template, trace = built
            referred = []
            for result in trace.results:
                if isinstance(result, frozenset):
                    referred.append([scene.objects[i].box for i in sorted(result)])
                else:
                    referred.append(None)
            grounded = [scene.objects[i].box for i in sorted(trace.grounded)]
            records.append(
                QuestionRecord(
                    question_id=f"q{index:05d}-{q}",
                    template=template,
                    program=program,
                    graph_gt=scene,
                    referred_boxes=referred,
                    grounded_boxes=grounded,
                )
            )
    return records


# --- dataset I/O ------------------------------------------------------------


def record_to_json_dict(record: QuestionRecord, vocab: Vocabulary) -> dict:
    graph_pred = None
    if record.graph_pred_data is not None:
        graph_pred = record.graph_pred_data
    elif record.perturb is not None:
        graph_pred = {"perturb": record.perturb}
    return {
        "question_id": record.question_id,
        "template": record.template,
        "program": program_to_json_dict(record.program),
        "graph_gt": record.graph_gt.to_json_dict(vocab),
        "graph_pred": graph_pred,
        "referred_boxes": [
            None if boxes is None else [list(b.as_tuple()) for b in boxes]
            for boxes in record.referred_boxes
        ],
        "grounded_boxes": [list(b.as_tuple()) for b in record.grounded_boxes],
    }


def record_from_json_dict(data: dict, vocab: Vocabulary) -> QuestionRecord:
    graph_pred = data.get("graph_pred")
    perturb = None
    pred_data = None
    if isinstance(graph_pred, dict):
        if "perturb" in graph_pred:
            perturb = graph_pred["perturb"]
        else:
            pred_data = graph_pred
    return QuestionRecord(
        question_id=data["question_id"],
        template=data.get("template", ""),
        program=program_from_json_dict(data["program"], vocab),
        graph_gt=SymbolicSceneGraph.from_json_dict(data["graph_gt"], vocab),
        referred_boxes=[
            None if boxes is None else [Box(*b) for b in boxes]
            for boxes in data["referred_boxes"]
        ],
        grounded_boxes=[Box(*b) for b in data["grounded_boxes"]],
        perturb=perturb,
        graph_pred_data=pred_data,
    )


def write_atomic(path: str, text: str) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(records, path: str, vocab: Vocabulary) -> None:
    lines = [
        json.dumps(record_to_json_dict(r, vocab), sort_keys=True) for r in records
    ]
    write_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def read_dataset(path: str, vocab: Vocabulary) -> list[QuestionRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json_dict(json.loads(line), vocab))
    return records
