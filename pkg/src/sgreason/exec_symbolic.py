"""Deterministic symbolic execution of programs over ground-truth scene graphs."""

from __future__ import annotations

from dataclasses import dataclass

from .core import Vocabulary, position_predicate
from .errors import AmbiguousError, ExecutionError, UnanswerableError
from .program import Operation, Program
from .scene_graph import SymbolicSceneGraph


@dataclass
class ExecutionTrace:
    """Per-step referred sets / booleans, final grounded set, and answer."""

    results: list  # frozenset[int] for pointing steps, bool for boolean steps,
    # str for the terminal answer step
    grounded: frozenset
    answer: str

    def referred_sets(self) -> list:
        """Per-step referred index sets (None for non-pointing steps)."""
        return [r if isinstance(r, frozenset) else None for r in self.results]


def _filter_indices(
    graph: SymbolicSceneGraph,
    indices,
    concept_name: str,
    category: str | None,
    vocab: Vocabulary,
):
    concept = vocab.concept(concept_name)
    if concept.kind == "object":
        if category is None:
            wanted = set(concept.members)
            return frozenset(i for i in indices if graph.objects[i].category in wanted)
        cid = vocab.category_id(concept_name, category)
        return frozenset(i for i in indices if graph.objects[i].category == cid)
    if concept.kind == "attribute":
        if category is None:
            wanted = set(concept.members)
            return frozenset(
                i for i in indices if graph.objects[i].attributes & wanted
            )
        cid = vocab.category_id(concept_name, category)
        return frozenset(i for i in indices if cid in graph.objects[i].attributes)
    if concept.kind == "position":
        names = vocab.names_for_kind("position")
        cats = [names[m] for m in concept.members] if category is None else [category]
        return frozenset(
            i
            for i in indices
            if any(position_predicate(graph.objects[i].box, c) for c in cats)
        )
    raise ExecutionError(f"concept kind {concept.kind!r} not filterable")


def _representative(indices) -> int:
    return min(indices)


def _query(graph, indices, concept_name, vocab, where):
    if not indices:
        raise UnanswerableError(f"{where}: query over empty referred set")
    concept = vocab.concept(concept_name)
    rep = graph.objects[_representative(indices)]
    if concept.kind == "object":
        return vocab.object_names[rep.category]
    hits = sorted(a for a in rep.attributes if a in set(concept.members))
    if not hits:
        raise UnanswerableError(
            f"{where}: representative object has no {concept_name!r} attribute"
        )
    return vocab.attribute_names[hits[0]]


def _verify(graph, indices, step: Operation, vocab) -> bool:
    return bool(_filter_indices(graph, indices, step.concept, step.category, vocab))


def _common(graph, z1, z2, concept_name, vocab, where):
    if not z1 or not z2:
        raise UnanswerableError(f"{where}: common over empty referred set")
    rep1 = graph.objects[_representative(z1)]
    rep2 = graph.objects[_representative(z2)]
    shared = rep1.attributes & rep2.attributes
    if concept_name is not None:
        shared &= set(vocab.concept(concept_name).members)
    if not shared:
        raise UnanswerableError(f"{where}: no shared attribute")
    return vocab.attribute_names[min(shared)]


def grounded_pointing_steps(program: Program) -> list[int]:
    """Pointing steps feeding the terminal step, traversing boolean steps."""
    out: list[int] = []
    stack = list(program.steps[program.terminal_index].deps)
    seen = set()
    while stack:
        idx = stack.pop()
        if idx in seen:
            continue
        seen.add(idx)
        if program.result_kind(idx) == "pointing":
            out.append(idx)
        else:
            stack.extend(program.steps[idx].deps)
    return sorted(out)


def exec_symbolic(
    program: Program, graph: SymbolicSceneGraph, vocab: Vocabulary
) -> ExecutionTrace:
    """Execute a program over a symbolic graph; raises typed errors on
    unanswerable or ambiguous terminal operations."""
    results: list = []
    all_indices = frozenset(range(graph.num_objects))
    for i, step in enumerate(program.steps):
        where = f"step {i} ({step.operator})"
        op = step.operator
        if op == "filter":
            pool = results[step.deps[0]] if step.deps else all_indices
            results.append(_filter_indices(graph, pool, step.concept, step.category, vocab))
        elif op == "relate":
            z_s, z_o = results[step.deps[0]], results[step.deps[1]]
            pid = vocab.predicate_id(step.category)
            if step.concept == "subject":
                results.append(
                    frozenset(
                        s for s in z_s if any(graph.has_triple(s, pid, o) for o in z_o)
                    )
                )
            else:
                results.append(
                    frozenset(
                        o for o in z_o if any(graph.has_triple(s, pid, o) for s in z_s)
                    )
                )
        elif op == "exist":
            results.append(bool(results[step.deps[0]]))
        elif op == "verify":
            results.append(_verify(graph, results[step.deps[0]], step, vocab))
        elif op == "query":
            results.append(_query(graph, results[step.deps[0]], step.concept, vocab, where))
        elif op == "choose":
            z = results[step.deps[0]]
            if not z:
                raise UnanswerableError(f"{where}: choose over empty referred set")
            c1, c2 = step.category
            hold1 = _verify(graph, z, Operation("verify", step.concept, c1), vocab)
            hold2 = _verify(graph, z, Operation("verify", step.concept, c2), vocab)
            if hold1 == hold2:
                raise AmbiguousError(
                    f"{where}: choose holds for "
                    f"{'both' if hold1 else 'neither'} candidate"
                )
            results.append(c1 if hold1 else c2)
        elif op == "common":
            results.append(
                _common(
                    graph,
                    results[step.deps[0]],
                    results[step.deps[1]],
                    step.concept,
                    vocab,
                    where,
                )
            )
        elif op == "and":
            results.append(results[step.deps[0]] and results[step.deps[1]])
        elif op == "or":
            results.append(results[step.deps[0]] or results[step.deps[1]])
        elif op == "not":
            results.append(not results[step.deps[0]])
        else:
            raise ExecutionError(f"{where}: unknown operator")

    terminal = program.terminal_index
    value = results[terminal]
    if isinstance(value, bool):
        answer = "yes" if value else "no"
    else:
        answer = value
    grounded = frozenset()
    for idx in grounded_pointing_steps(program):
        grounded |= results[idx]
    return ExecutionTrace(results, grounded, answer)
