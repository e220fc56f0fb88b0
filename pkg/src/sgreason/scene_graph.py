"""Symbolic and probabilistic scene-graph models, encoders, perturbations, I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Box, Vocabulary
from .errors import SgError

DEFAULT_LOGIT_MAGNITUDE = 10.0
# Self-relations are forbidden; the S_p diagonal is pinned to this logit.
SELF_RELATION_LOGIT = -30.0


@dataclass(frozen=True)
class SceneObject:
    box: Box
    category: int
    attributes: frozenset[int] = frozenset()


@dataclass(frozen=True)
class Relation:
    subject: int
    predicate: int
    object: int


@dataclass
class SymbolicSceneGraph:
    """Ground-truth objects, attribute sets, and relation triples."""

    objects: list[SceneObject]
    relations: list[Relation] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.objects)
        seen = set()
        for rel in self.relations:
            if not (0 <= rel.subject < k and 0 <= rel.object < k):
                raise SgError(f"relation endpoint out of range: {rel}")
            if rel.subject == rel.object:
                raise SgError(f"self-relation not allowed: {rel}")
            key = (rel.subject, rel.predicate, rel.object)
            if key in seen:
                raise SgError(f"duplicate relation triple: {rel}")
            seen.add(key)

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def boxes(self) -> list[Box]:
        return [o.box for o in self.objects]

    def has_triple(self, subject: int, predicate: int, obj: int) -> bool:
        return any(
            r.subject == subject and r.predicate == predicate and r.object == obj
            for r in self.relations
        )

    def to_json_dict(self, vocab: Vocabulary) -> dict:
        return {
            "objects": [
                {
                    "box": list(o.box.as_tuple()),
                    "category": vocab.object_names[o.category],
                    "attributes": sorted(vocab.attribute_names[a] for a in o.attributes),
                }
                for o in self.objects
            ],
            "relations": [
                {
                    "subject": r.subject,
                    "predicate": vocab.predicate_names[r.predicate],
                    "object": r.object,
                }
                for r in self.relations
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict, vocab: Vocabulary) -> "SymbolicSceneGraph":
        objects = []
        for odata in data["objects"]:
            box = Box(*odata["box"])
            category = vocab.object_id(odata["category"])
            attrs = frozenset(vocab.attribute_id(a) for a in odata.get("attributes", []))
            objects.append(SceneObject(box, category, attrs))
        relations = [
            Relation(r["subject"], vocab.predicate_id(r["predicate"]), r["object"])
            for r in data.get("relations", [])
        ]
        return cls(objects, relations)


def symbolic_from_gqa(data: dict, vocab: Vocabulary) -> SymbolicSceneGraph:
    """Convert one GQA-style scene-graph JSON object to a SymbolicSceneGraph.

    Expects the GQA layout: {"width", "height", "objects": {id: {"name", "x",
    "y", "w", "h", "attributes", "relations": [{"name", "object": id}]}}}.
    Object ids are ordered by their sorted string keys.
    """
    width = float(data["width"])
    height = float(data["height"])
    keys = sorted(data["objects"].keys())
    index = {key: i for i, key in enumerate(keys)}
    objects = []
    for key in keys:
        odata = data["objects"][key]
        x1 = max(0.0, odata["x"] / width)
        y1 = max(0.0, odata["y"] / height)
        x2 = min(1.0, (odata["x"] + odata["w"]) / width)
        y2 = min(1.0, (odata["y"] + odata["h"]) / height)
        box = Box(x1, y1, x2, y2)
        category = vocab.object_id(odata["name"])
        attrs = frozenset(vocab.attribute_id(a) for a in odata.get("attributes", []))
        objects.append(SceneObject(box, category, attrs))
    relations = []
    seen = set()
    for key in keys:
        for rel in data["objects"][key].get("relations", []):
            triple = (index[key], vocab.predicate_id(rel["name"]), index[rel["object"]])
            if triple[0] == triple[2] or triple in seen:
                continue
            seen.add(triple)
            relations.append(Relation(*triple))
    return SymbolicSceneGraph(objects, relations)


@dataclass
class ProbabilisticSceneGraph:
    """Detected boxes plus object/attribute/predicate logit tensors."""

    boxes: list[Box]
    s_o: np.ndarray  # K x C_o
    s_a: np.ndarray  # K x C_a
    s_p: np.ndarray  # K x K x C_p

    def __post_init__(self):
        k = len(self.boxes)
        self.s_o = np.asarray(self.s_o, dtype=np.float64)
        self.s_a = np.asarray(self.s_a, dtype=np.float64)
        self.s_p = np.asarray(self.s_p, dtype=np.float64)
        if self.s_o.shape[0] != k or self.s_a.shape[0] != k:
            raise SgError("score matrix row count does not match box count")
        if self.s_p.shape[:2] != (k, k):
            raise SgError("predicate tensor shape does not match box count")
        for name, arr in (("s_o", self.s_o), ("s_a", self.s_a), ("s_p", self.s_p)):
            if not np.all(np.isfinite(arr)):
                raise SgError(f"{name} contains non-finite entries")
        if k and not np.all(
            self.s_p[np.arange(k), np.arange(k), :] == SELF_RELATION_LOGIT
        ):
            raise SgError("S_p diagonal must be pinned to the self-relation logit")

    @property
    def num_objects(self) -> int:
        return len(self.boxes)

    def to_json_dict(self) -> dict:
        return {
            "boxes": [list(b.as_tuple()) for b in self.boxes],
            "s_o": self.s_o.tolist(),
            "s_a": self.s_a.tolist(),
            "s_p": self.s_p.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ProbabilisticSceneGraph":
        boxes = [Box(*b) for b in data["boxes"]]
        k = len(boxes)
        c_o = len(data["s_o"][0]) if k else 0
        c_a = len(data["s_a"][0]) if k else 0
        c_p = len(data["s_p"][0][0]) if k else 0
        return cls(
            boxes,
            np.asarray(data["s_o"], dtype=np.float64).reshape(k, c_o),
            np.asarray(data["s_a"], dtype=np.float64).reshape(k, c_a),
            np.asarray(data["s_p"], dtype=np.float64).reshape(k, k, c_p),
        )


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str  # background_removal | foreground_removal | randomize
    seed: int = 0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("background_removal", "foreground_removal", "randomize"):
            raise SgError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "randomize" and not self.noise_scale > 0:
            raise SgError("noise_scale must be > 0 for randomize")


def _pin_diagonal(s_p: np.ndarray) -> np.ndarray:
    k = s_p.shape[0]
    if k:
        s_p[np.arange(k), np.arange(k), :] = SELF_RELATION_LOGIT
    return s_p


def one_hot_encode(
    graph: SymbolicSceneGraph,
    vocab: Vocabulary,
    magnitude: float = DEFAULT_LOGIT_MAGNITUDE,
) -> ProbabilisticSceneGraph:
    """Encode a symbolic graph as +/-magnitude logits."""
    if not magnitude > 0:
        raise SgError("magnitude must be > 0")
    k = graph.num_objects
    c_o = len(vocab.object_names)
    c_a = len(vocab.attribute_names)
    c_p = len(vocab.predicate_names)
    s_o = np.full((k, c_o), -magnitude)
    s_a = np.full((k, c_a), -magnitude)
    s_p = np.full((k, k, c_p), -magnitude)
    for i, obj in enumerate(graph.objects):
        if not (0 <= obj.category < c_o):
            raise SgError(f"object {i}: category id {obj.category} out of range")
        s_o[i, obj.category] = magnitude
        for a in obj.attributes:
            if not (0 <= a < c_a):
                raise SgError(f"object {i}: attribute id {a} out of range")
            s_a[i, a] = magnitude
    for rel in graph.relations:
        if not (0 <= rel.predicate < c_p):
            raise SgError(f"predicate id {rel.predicate} out of range")
        s_p[rel.subject, rel.object, rel.predicate] = magnitude
    _pin_diagonal(s_p)
    return ProbabilisticSceneGraph(list(graph.boxes), s_o, s_a, s_p)


def decode_one_hot(
    graph: ProbabilisticSceneGraph, vocab: Vocabulary
) -> SymbolicSceneGraph:
    """Invert one_hot_encode by row-wise argmax and sign."""
    objects = []
    for i in range(graph.num_objects):
        category = int(np.argmax(graph.s_o[i]))
        attrs = frozenset(int(a) for a in np.flatnonzero(graph.s_a[i] > 0))
        objects.append(SceneObject(graph.boxes[i], category, attrs))
    relations = []
    k = graph.num_objects
    for s in range(k):
        for o in range(k):
            if s == o:
                continue
            for p in np.flatnonzero(graph.s_p[s, o] > 0):
                relations.append(Relation(s, int(p), o))
    return SymbolicSceneGraph(objects, relations)


def perturb_encode(
    graph: SymbolicSceneGraph,
    vocab: Vocabulary,
    noise_sd: float,
    flip_rate: float,
    seed: int,
    magnitude: float = DEFAULT_LOGIT_MAGNITUDE,
) -> ProbabilisticSceneGraph:
    """One-hot encoding plus Gaussian logit noise and object-category flips.

    With probability flip_rate per object, the true object-category logit is
    swapped with a uniformly chosen wrong (non-background) category's logit.
    Deterministic given the seed.
    """
    if noise_sd < 0:
        raise SgError("noise_sd must be >= 0")
    if not (0.0 <= flip_rate < 1.0):
        raise SgError("flip_rate must be in [0,1)")
    encoded = one_hot_encode(graph, vocab, magnitude)
    rng = np.random.default_rng(seed)
    s_o = encoded.s_o + rng.normal(0.0, noise_sd, encoded.s_o.shape) if noise_sd else encoded.s_o.copy()
    s_a = encoded.s_a + rng.normal(0.0, noise_sd, encoded.s_a.shape) if noise_sd else encoded.s_a.copy()
    s_p = encoded.s_p + rng.normal(0.0, noise_sd, encoded.s_p.shape) if noise_sd else encoded.s_p.copy()
    c_o = s_o.shape[1]
    for i, obj in enumerate(graph.objects):
        if flip_rate and rng.random() < flip_rate:
            wrong = [c for c in range(1, c_o) if c != obj.category]
            if not wrong:
                continue
            j = wrong[rng.integers(len(wrong))]
            s_o[i, obj.category], s_o[i, j] = s_o[i, j], s_o[i, obj.category]
    _pin_diagonal(s_p)
    return ProbabilisticSceneGraph(list(graph.boxes), s_o, s_a, s_p)


def remove_objects(
    graph: ProbabilisticSceneGraph, indices
) -> tuple[ProbabilisticSceneGraph, dict[int, int]]:
    """Delete the given object rows/columns; return (graph, old->new index map)."""
    k = graph.num_objects
    removed = set(int(i) for i in indices)
    for i in removed:
        if not (0 <= i < k):
            raise SgError(f"index {i} out of range for K={k}")
    keep = [i for i in range(k) if i not in removed]
    renumber = {old: new for new, old in enumerate(keep)}
    new_graph = ProbabilisticSceneGraph(
        [graph.boxes[i] for i in keep],
        graph.s_o[keep],
        graph.s_a[keep],
        graph.s_p[np.ix_(keep, keep)],
    )
    return new_graph, renumber


def remove_objects_symbolic(
    graph: SymbolicSceneGraph, indices
) -> tuple[SymbolicSceneGraph, dict[int, int]]:
    """Symbolic counterpart of remove_objects; drops relations on removed objects."""
    k = graph.num_objects
    removed = set(int(i) for i in indices)
    for i in removed:
        if not (0 <= i < k):
            raise SgError(f"index {i} out of range for K={k}")
    keep = [i for i in range(k) if i not in removed]
    renumber = {old: new for new, old in enumerate(keep)}
    objects = [graph.objects[i] for i in keep]
    relations = [
        Relation(renumber[r.subject], r.predicate, renumber[r.object])
        for r in graph.relations
        if r.subject in renumber and r.object in renumber
    ]
    return SymbolicSceneGraph(objects, relations), renumber


def randomize_scores(
    graph: ProbabilisticSceneGraph, seed: int, scale: float
) -> ProbabilisticSceneGraph:
    """Replace all score tensors with i.i.d. Gaussian(0, scale) draws."""
    if not scale > 0:
        raise SgError("scale must be > 0")
    rng = np.random.default_rng(seed)
    s_o = rng.normal(0.0, scale, graph.s_o.shape)
    s_a = rng.normal(0.0, scale, graph.s_a.shape)
    s_p = rng.normal(0.0, scale, graph.s_p.shape)
    _pin_diagonal(s_p)
    return ProbabilisticSceneGraph(list(graph.boxes), s_o, s_a, s_p)


def load_symbolic(path, vocab: Vocabulary) -> SymbolicSceneGraph:
    with open(path, encoding="utf-8") as fh:
        return SymbolicSceneGraph.from_json_dict(json.load(fh), vocab)


def load_probabilistic(path) -> ProbabilisticSceneGraph:
    with open(path, encoding="utf-8") as fh:
        return ProbabilisticSceneGraph.from_json_dict(json.load(fh))
