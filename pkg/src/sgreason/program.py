"""Reasoning-program DSL: parsing, validation, serialization, enumeration.

Text grammar (one step per ';' or newline):

    step     := INDEX ":" SURFACE ["(" args ")"] ["[" deps "]"]
    SURFACE  := filter | relate_subject | relate_object | query | exist
              | verify | choose | common | and | or | not
    args     := concept ["," category]        (category "a|b" for choose)
    deps     := INDEX ("," INDEX)*

Example: "0: filter(object, streetlight); 1: filter(object, man);
2: relate_subject(above)[0,1]; 3: query(color)[2]"
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .core import Vocabulary
from .errors import ProgramSyntaxError, ProgramValidationError, VocabularyError

OPERATORS = (
    "filter", "query", "exist", "verify", "common",
    "relate", "choose", "and", "or", "not",
)

POINTING_OPS = ("filter", "relate")
BOOLEAN_OPS = ("exist", "verify", "and", "or", "not")
ANSWER_OPS = ("query", "choose", "common")
TERMINAL_OPS = ("query", "exist", "verify", "choose", "common", "and", "or", "not")

# operator -> allowed dependency counts
ARITY = {
    "filter": (0, 1),
    "query": (1,),
    "exist": (1,),
    "verify": (1,),
    "not": (1,),
    "relate": (2,),
    "and": (2,),
    "or": (2,),
    "common": (2,),
    "choose": (1,),
}

FILTERABLE_KINDS = ("object", "attribute", "position")


@dataclass(frozen=True)
class Operation:
    operator: str
    concept: str | None = None
    category: str | tuple[str, str] | None = None
    deps: tuple[int, ...] = ()


@dataclass
class Program:
    steps: list[Operation]
    question_text: str | None = None
    answer: str | None = None

    @property
    def terminal_index(self) -> int:
        depended = {d for step in self.steps for d in step.deps}
        terminals = [i for i in range(len(self.steps)) if i not in depended]
        if len(terminals) != 1:
            raise ProgramValidationError(
                [f"expected exactly one terminal step, found {len(terminals)}"]
            )
        return terminals[0]

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return self.steps == other.steps

    def result_kind(self, index: int) -> str:
        op = self.steps[index].operator
        if op in POINTING_OPS:
            return "pointing"
        if op in BOOLEAN_OPS:
            return "boolean"
        return "answer"


_STEP_RE = re.compile(
    r"^\s*(?P<index>\d+)\s*:\s*(?P<name>[a-z_]+)\s*"
    r"(?:\(\s*(?P<args>[^)]*?)\s*\))?\s*"
    r"(?:\[\s*(?P<deps>[\d,\s]*)\s*\])?\s*$"
)

_SURFACE_OPS = (
    "filter", "relate_subject", "relate_object", "query", "exist",
    "verify", "choose", "common", "and", "or", "not",
)


def _parse_step(text: str, position: str) -> tuple[int, Operation]:
    m = _STEP_RE.match(text)
    if not m:
        raise ProgramSyntaxError(f"cannot parse step {text!r}", position)
    name = m.group("name")
    if name not in _SURFACE_OPS:
        raise ProgramSyntaxError(f"unknown operator {name!r}", position)
    args = [a.strip() for a in m.group("args").split(",")] if m.group("args") else []
    deps = tuple(
        int(d) for d in m.group("deps").split(",") if d.strip()
    ) if m.group("deps") is not None else ()

    concept: str | None = None
    category: str | tuple[str, str] | None = None
    if name in ("relate_subject", "relate_object"):
        if len(args) != 1:
            raise ProgramSyntaxError(f"{name} expects one predicate argument", position)
        operator = "relate"
        concept = name.split("_", 1)[1]
        category = args[0]
    elif name == "filter":
        if len(args) != 2:
            raise ProgramSyntaxError("filter expects (concept, category)", position)
        operator = "filter"
        concept = args[0]
        category = None if args[1] == "none" else args[1]
    elif name == "verify":
        if len(args) != 2:
            raise ProgramSyntaxError("verify expects (concept, category)", position)
        operator = "verify"
        concept, category = args[0], args[1]
    elif name == "choose":
        if len(args) != 2 or "|" not in args[1]:
            raise ProgramSyntaxError("choose expects (concept, a|b)", position)
        operator = "choose"
        concept = args[0]
        first, _, second = args[1].partition("|")
        category = (first.strip(), second.strip())
    elif name == "query":
        if len(args) != 1:
            raise ProgramSyntaxError("query expects (concept)", position)
        operator = "query"
        concept = args[0]
    elif name == "common":
        if len(args) > 1:
            raise ProgramSyntaxError("common expects () or (concept)", position)
        operator = "common"
        concept = args[0] if args else None
    else:  # exist, and, or, not
        if args:
            raise ProgramSyntaxError(f"{name} takes no arguments", position)
        operator = name
    return int(m.group("index")), Operation(operator, concept, category, deps)


def parse_program(text: str, vocab: Vocabulary) -> Program:
    """Parse and validate program text."""
    chunks = [c for c in re.split(r"[;\n]", text) if c.strip()]
    if not chunks:
        raise ProgramSyntaxError("empty program")
    steps: list[Operation] = []
    for i, chunk in enumerate(chunks):
        index, op = _parse_step(chunk, position=f"step {i}")
        if index != i:
            raise ProgramSyntaxError(
                f"step index {index} out of order, expected {i}", f"step {i}"
            )
        steps.append(op)
    program = Program(steps)
    violations = validate(program, vocab)
    if violations:
        raise ProgramValidationError(violations)
    return program


def serialize_program(program: Program) -> str:
    """Canonical textual form; inverse of parse_program."""
    parts = []
    for i, step in enumerate(program.steps):
        if step.operator == "relate":
            head = f"relate_{step.concept}({step.category})"
        elif step.operator == "filter":
            head = f"filter({step.concept}, {step.category or 'none'})"
        elif step.operator == "verify":
            head = f"verify({step.concept}, {step.category})"
        elif step.operator == "choose":
            head = f"choose({step.concept}, {step.category[0]}|{step.category[1]})"
        elif step.operator == "query":
            head = f"query({step.concept})"
        elif step.operator == "common":
            head = f"common({step.concept})" if step.concept else "common"
        else:
            head = step.operator
        deps = f"[{','.join(str(d) for d in step.deps)}]" if step.deps else ""
        parts.append(f"{i}: {head}{deps}")
    return "; ".join(parts)


def _check_concept_category(step: Operation, vocab: Vocabulary, where: str) -> list[str]:
    out = []
    op = step.operator
    if op in ("exist", "and", "or", "not"):
        if step.concept is not None or step.category is not None:
            out.append(f"{where}: {op} takes no concept/category")
        return out
    if op == "relate":
        if step.concept not in ("subject", "object"):
            out.append(f"{where}: relate concept must be subject or object")
        if not isinstance(step.category, str):
            out.append(f"{where}: relate needs a predicate category")
        else:
            try:
                pid = vocab.predicate_id(step.category)
                if pid == 0:
                    out.append(f"{where}: relate predicate cannot be background")
            except VocabularyError:
                out.append(f"{where}: unknown predicate {step.category!r}")
        return out
    # Remaining operators name a concept from the table.
    if op == "common" and step.concept is None:
        return out
    try:
        concept = vocab.concept(step.concept)
    except VocabularyError:
        out.append(f"{where}: unknown concept {step.concept!r}")
        return out
    allowed_kinds = {
        "filter": FILTERABLE_KINDS,
        "verify": FILTERABLE_KINDS,
        "choose": FILTERABLE_KINDS,
        "query": ("object", "attribute"),
        "common": ("attribute",),
    }[op]
    if concept.kind not in allowed_kinds:
        out.append(
            f"{where}: concept {step.concept!r} (kind {concept.kind}) "
            f"not usable with {op}"
        )
        return out
    names = vocab.names_for_kind(concept.kind)
    members = {names[m] for m in concept.members}

    def check_member(cat):
        if cat not in members:
            out.append(
                f"{where}: category {cat!r} not in concept {step.concept!r}"
            )

    if op == "filter":
        if step.category is not None:
            check_member(step.category)
    elif op in ("verify",):
        if not isinstance(step.category, str):
            out.append(f"{where}: verify needs a category")
        else:
            check_member(step.category)
    elif op == "choose":
        if not (isinstance(step.category, tuple) and len(step.category) == 2):
            out.append(f"{where}: choose needs a category pair")
        else:
            for cat in step.category:
                check_member(cat)
            if step.category[0] == step.category[1]:
                out.append(f"{where}: choose candidates must differ")
    elif op in ("query", "common"):
        if step.category is not None:
            out.append(f"{where}: {op} takes no category")
    return out


def validate(program: Program, vocab: Vocabulary) -> list[str]:
    """Check all operation and program invariants; return every violation."""
    violations: list[str] = []
    n = len(program.steps)
    if n == 0:
        return ["program has no steps"]
    for i, step in enumerate(program.steps):
        where = f"step {i}"
        if step.operator not in OPERATORS:
            violations.append(f"{where}: unknown operator {step.operator!r}")
            continue
        forward = [d for d in step.deps if not (0 <= d < i)]
        if forward:
            violations.append(f"{where}: dependency {forward} not an earlier step")
            continue
        if len(step.deps) not in ARITY[step.operator]:
            violations.append(
                f"{where}: {step.operator} takes {ARITY[step.operator]} deps, "
                f"got {len(step.deps)}"
            )
        if not step.deps and step.operator != "filter":
            violations.append(f"{where}: only filter may start a program")
        for d in step.deps:
            dep_kind = program.result_kind(d)
            need = "boolean" if step.operator in ("and", "or", "not") else "pointing"
            if dep_kind != need:
                violations.append(
                    f"{where}: {step.operator} needs {need} inputs, "
                    f"step {d} is {dep_kind}"
                )
        violations.extend(_check_concept_category(step, vocab, where))
    depended = {d for step in program.steps for d in step.deps}
    terminals = [i for i in range(n) if i not in depended]
    if len(terminals) != 1:
        violations.append(f"expected exactly one terminal step, found {len(terminals)}")
    else:
        t = terminals[0]
        if program.steps[t].operator not in TERMINAL_OPS:
            violations.append(
                f"terminal operator {program.steps[t].operator!r} cannot end a program"
            )
    return violations


def enumerate_operation_space(vocab: Vocabulary) -> list[tuple[str, str | None, str | None]]:
    """All legal (operator, concept, category) triples for this vocabulary.

    choose is counted per single candidate category (pairs are assembled when
    a program is authored). The result order is deterministic.
    """
    triples: list[tuple[str, str | None, str | None]] = []
    filterable = sorted(
        name for name, c in vocab.concepts.items() if c.kind in FILTERABLE_KINDS
    )
    queryable = sorted(
        name for name, c in vocab.concepts.items() if c.kind in ("object", "attribute")
    )
    attr_concepts = sorted(
        name for name, c in vocab.concepts.items() if c.kind == "attribute"
    )
    for cname in filterable:
        concept = vocab.concepts[cname]
        names = vocab.names_for_kind(concept.kind)
        triples.append(("filter", cname, None))
        for m in concept.members:
            triples.append(("filter", cname, names[m]))
    for cname in queryable:
        triples.append(("query", cname, None))
    triples.append(("exist", None, None))
    for cname in filterable:
        concept = vocab.concepts[cname]
        names = vocab.names_for_kind(concept.kind)
        for m in concept.members:
            triples.append(("verify", cname, names[m]))
    triples.append(("common", None, None))
    for cname in attr_concepts:
        triples.append(("common", cname, None))
    for side in ("subject", "object"):
        for pred in vocab.predicate_names[1:]:
            triples.append(("relate", side, pred))
    for cname in filterable:
        concept = vocab.concepts[cname]
        names = vocab.names_for_kind(concept.kind)
        for m in concept.members:
            triples.append(("choose", cname, names[m]))
    for op in ("and", "or", "not"):
        triples.append((op, None, None))
    return triples


def program_to_json_dict(program: Program) -> dict:
    steps = []
    for step in program.steps:
        category = step.category
        if isinstance(category, tuple):
            category = f"{category[0]}|{category[1]}"
        steps.append(
            {
                "op": step.operator,
                "concept": step.concept,
                "category": category,
                "deps": list(step.deps),
            }
        )
    return {
        "steps": steps,
        "question": program.question_text,
        "answer": program.answer,
    }


def program_from_json_dict(data: dict, vocab: Vocabulary) -> Program:
    steps = []
    for sdata in data["steps"]:
        category = sdata.get("category")
        if sdata["op"] == "choose" and isinstance(category, str):
            first, _, second = category.partition("|")
            category = (first.strip(), second.strip())
        if sdata["op"] == "filter" and category == "none":
            category = None
        steps.append(
            Operation(
                sdata["op"],
                sdata.get("concept"),
                category,
                tuple(sdata.get("deps", [])),
            )
        )
    program = Program(steps, data.get("question"), data.get("answer"))
    violations = validate(program, vocab)
    if violations:
        raise ProgramValidationError(violations)
    return program


def load_programs_jsonl(path, vocab: Vocabulary) -> list[Program]:
    programs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                programs.append(program_from_json_dict(json.loads(line), vocab))
    return programs
