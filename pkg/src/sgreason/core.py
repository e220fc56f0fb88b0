"""Shared vocabulary, box geometry and IoU matching primitives."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import InvalidBoxError, SgError, VocabularyError

BACKGROUND_NAME = "__background__"

# Categories usable by filter(position, ...), evaluated from box centers
# with thirds boundaries.
POSITION_CATEGORIES = ("left", "middle-h", "right", "top", "middle-v", "bottom")

CONCEPT_KINDS = ("object", "attribute", "position", "relation")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in normalized [0,1] image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite coordinates: {coords}")
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise InvalidBoxError(f"coordinates outside [0,1]: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBoxError(f"degenerate box: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Concept:
    """A named grouping of category ids from one vocabulary list."""

    kind: str
    members: tuple[int, ...]


@dataclass
class Vocabulary:
    """Category name lists (index 0 = background) plus the concept table."""

    object_names: list[str]
    attribute_names: list[str]
    predicate_names: list[str]
    concepts: dict[str, Concept] = field(default_factory=dict)

    def __post_init__(self):
        for label, names in (
            ("objects", self.object_names),
            ("attributes", self.attribute_names),
            ("predicates", self.predicate_names),
        ):
            if not names:
                raise VocabularyError(f"{label} list is empty")
            if names[0] != BACKGROUND_NAME:
                raise VocabularyError(
                    f"{label}[0] must be {BACKGROUND_NAME!r}, got {names[0]!r}"
                )
            if len(set(names)) != len(names):
                raise VocabularyError(f"duplicate names in {label} list")
        for cname, concept in self.concepts.items():
            if concept.kind not in CONCEPT_KINDS:
                raise VocabularyError(f"concept {cname!r}: unknown kind {concept.kind!r}")
            names = self.names_for_kind(concept.kind)
            for mid in concept.members:
                if not (0 <= mid < len(names)):
                    raise VocabularyError(
                        f"concept {cname!r}: member id {mid} out of range"
                    )

    def names_for_kind(self, kind: str) -> tuple[str, ...] | list[str]:
        if kind == "object":
            return self.object_names
        if kind == "attribute":
            return self.attribute_names
        if kind == "relation":
            return self.predicate_names
        if kind == "position":
            return POSITION_CATEGORIES
        raise VocabularyError(f"unknown concept kind {kind!r}")

    def object_id(self, name: str) -> int:
        return _lookup(self.object_names, name, "object")

    def attribute_id(self, name: str) -> int:
        return _lookup(self.attribute_names, name, "attribute")

    def predicate_id(self, name: str) -> int:
        return _lookup(self.predicate_names, name, "predicate")

    def concept(self, name: str) -> Concept:
        try:
            return self.concepts[name]
        except KeyError:
            raise VocabularyError(f"unknown concept {name!r}") from None

    def category_id(self, concept_name: str, category: str) -> int:
        """Resolve a category name within a concept to its list index."""
        concept = self.concept(concept_name)
        names = self.names_for_kind(concept.kind)
        cid = _lookup(names, category, f"category of concept {concept_name!r}")
        if cid not in concept.members:
            raise VocabularyError(
                f"category {category!r} is not a member of concept {concept_name!r}"
            )
        return cid

    def to_json_dict(self) -> dict:
        return {
            "objects": list(self.object_names),
            "attributes": list(self.attribute_names),
            "predicates": list(self.predicate_names),
            "concepts": {
                name: {
                    "kind": c.kind,
                    "members": [self.names_for_kind(c.kind)[m] for m in c.members],
                }
                for name, c in self.concepts.items()
            },
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Vocabulary":
        try:
            objects = list(data["objects"])
            attributes = list(data["attributes"])
            predicates = list(data["predicates"])
        except KeyError as exc:
            raise VocabularyError(f"vocabulary file missing key {exc}") from None
        vocab = cls(objects, attributes, predicates, {})
        concepts = {}
        for cname, cdata in data.get("concepts", {}).items():
            kind = cdata.get("kind")
            if kind not in CONCEPT_KINDS:
                raise VocabularyError(f"concept {cname!r}: unknown kind {kind!r}")
            names = vocab.names_for_kind(kind)
            members = []
            for member in cdata.get("members", []):
                members.append(_lookup(names, member, f"member of {cname!r}"))
            concepts[cname] = Concept(kind, tuple(members))
        vocab.concepts = concepts
        vocab.__post_init__()
        return vocab


def load_vocabulary(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        return Vocabulary.from_json_dict(json.load(fh))


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocab.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _lookup(names, name, label):
    try:
        return list(names).index(name)
    except ValueError:
        raise VocabularyError(f"unknown {label} name {name!r}") from None


@dataclass(frozen=True)
class MatchMap:
    """One-to-one greedy IoU matching from detected to ground-truth boxes."""

    pairs: dict  # detected index -> ground-truth index
    threshold: float

    def gt_to_detected(self) -> dict:
        return {g: d for d, g in self.pairs.items()}


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def match_boxes(detected: list[Box], ground_truth: list[Box], threshold: float) -> MatchMap:
    """Greedily match detected to ground-truth boxes in descending IoU order.

    Each side is matched at most once; only pairs with IoU >= threshold are
    kept. IoU ties are broken by lower detected index, then lower gt index.
    """
    if not (0.0 < threshold <= 1.0):
        raise SgError(f"threshold must be in (0,1], got {threshold}")
    candidates = []
    for di, dbox in enumerate(detected):
        for gi, gbox in enumerate(ground_truth):
            v = iou(dbox, gbox)
            if v >= threshold:
                candidates.append((-v, di, gi))
    candidates.sort()
    pairs: dict[int, int] = {}
    used_gt: set[int] = set()
    for _, di, gi in candidates:
        if di in pairs or gi in used_gt:
            continue
        pairs[di] = gi
        used_gt.add(gi)
    return MatchMap(pairs, threshold)


def position_predicate(box: Box, category: str) -> bool:
    """Evaluate a position category from the box center with thirds boundaries."""
    cx, cy = box.center
    if category == "left":
        return cx < 1.0 / 3.0
    if category == "right":
        return cx > 2.0 / 3.0
    if category == "middle-h":
        return 1.0 / 3.0 <= cx <= 2.0 / 3.0
    if category == "top":
        return cy < 1.0 / 3.0
    if category == "bottom":
        return cy > 2.0 / 3.0
    if category == "middle-v":
        return 1.0 / 3.0 <= cy <= 2.0 / 3.0
    raise SgError(f"unknown position category {category!r}")
