"""Composite process model: steps, control constructs, dataflow consolidations.

The control structure is a tree of Sequence/Parallel/Choice constructs with
step identifiers at the leaves.  Dataflow is a set of consolidations, each
mapping one step's output parameter onto another step's input parameter;
an input accepts at most one consolidation.

Every element carries provenance ("user", "suggested-accepted" or
"auto-completed") so mixed-initiative changes stay attributable and
reversible.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

PROVENANCE_USER = "user"
PROVENANCE_ACCEPTED = "suggested-accepted"
PROVENANCE_AUTO = "auto-completed"

SEQUENCE = "sequence"
PARALLEL = "parallel"
CHOICE = "choice"
_KINDS = (SEQUENCE, PARALLEL, CHOICE)


class ProcessError(Exception):
    pass


@dataclass
class Step:
    id: str
    service: str
    outcome: Optional[str] = None  # assumed outcome, if any
    provenance: str = PROVENANCE_USER

    def to_dict(self) -> dict:
        return {"id": self.id, "service": self.service,
                "outcome": self.outcome, "provenance": self.provenance}


@dataclass
class Consolidation:
    producer: str   # step id
    output: str     # producer output param name
    consumer: str   # step id
    input: str      # consumer input param name
    provenance: str = PROVENANCE_USER

    def key(self) -> tuple[str, str, str, str]:
        return (self.producer, self.output, self.consumer, self.input)

    def to_dict(self) -> dict:
        return {"producer": self.producer, "output": self.output,
                "consumer": self.consumer, "input": self.input,
                "provenance": self.provenance}


@dataclass
class Construct:
    """Control tree node; children are Constructs or step-id leaves."""
    kind: str
    children: list = field(default_factory=list)  # Construct | str

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "children": [c.to_dict() if isinstance(c, Construct)
                             else {"step": c} for c in self.children]}

    @staticmethod
    def from_dict(d: dict) -> "Construct":
        if "step" in d:
            raise ProcessError("control tree root must be a construct")
        kind = d.get("kind")
        if kind not in _KINDS:
            raise ProcessError(f"unknown construct kind: {kind!r}")
        children = []
        for c in d.get("children") or []:
            if isinstance(c, dict) and "step" in c:
                children.append(str(c["step"]))
            elif isinstance(c, dict):
                children.append(Construct.from_dict(c))
            else:
                raise ProcessError("control children must be constructs "
                                   "or {step: id} leaves")
        return Construct(kind, children)


@dataclass
class CompositeProcess:
    steps: dict[str, Step] = field(default_factory=dict)
    control: Construct = field(default_factory=lambda: Construct(SEQUENCE))
    consolidations: list[Consolidation] = field(default_factory=list)

    # -- invariants ------------------------------------------------------

    def validate(self):
        """Raise ProcessError if any structural invariant is broken."""
        seen: list[str] = []

        def walk(node):
            for c in node.children:
                if isinstance(c, Construct):
                    walk(c)
                else:
                    seen.append(c)

        walk(self.control)
        if sorted(seen) != sorted(self.steps):
            missing = set(self.steps) - set(seen)
            extra = set(seen) - set(self.steps)
            dupes = {s for s in seen if seen.count(s) > 1}
            raise ProcessError(
                "control tree must mention every step exactly once "
                f"(missing={sorted(missing)}, unknown={sorted(extra)}, "
                f"duplicated={sorted(dupes)})")
        if len(seen) != len(set(seen)):
            dupes = sorted({s for s in seen if seen.count(s) > 1})
            raise ProcessError(f"steps duplicated in control tree: {dupes}")
        fed: set[tuple[str, str]] = set()
        for c in self.consolidations:
            if c.producer not in self.steps or c.consumer not in self.steps:
                raise ProcessError(
                    f"consolidation references unknown step: {c.key()}")
            if (c.consumer, c.input) in fed:
                raise ProcessError(
                    f"input {c.consumer}.{c.input} has two consolidations")
            fed.add((c.consumer, c.input))

    # -- structure queries ------------------------------------------------

    def step_ids(self) -> list[str]:
        out: list[str] = []

        def walk(node):
            for c in node.children:
                if isinstance(c, Construct):
                    walk(c)
                else:
                    out.append(c)

        walk(self.control)
        return out

    def consolidation_for(self, consumer: str,
                          input_name: str) -> Optional[Consolidation]:
        for c in self.consolidations:
            if c.consumer == consumer and c.input == input_name:
                return c
        return None

    def must_precede(self) -> set[tuple[str, str]]:
        """Pairs (a, b) where a is ordered strictly before b by the tree."""
        order: set[tuple[str, str]] = set()

        def leaves(node) -> list[str]:
            if isinstance(node, str):
                return [node]
            out = []
            for c in node.children:
                out.extend(leaves(c))
            return out

        def walk(node):
            if isinstance(node, str):
                return
            if node.kind == SEQUENCE:
                groups = [leaves(c) for c in node.children]
                for i in range(len(groups)):
                    for j in range(i + 1, len(groups)):
                        for a in groups[i]:
                            for b in groups[j]:
                                order.add((a, b))
            for c in node.children:
                walk(c)

        walk(self.control)
        return order

    def exclusive_pairs(self) -> set[frozenset]:
        """Step pairs on different branches of some Choice (never co-run)."""
        pairs: set[frozenset] = set()

        def leaves(node) -> list[str]:
            if isinstance(node, str):
                return [node]
            out = []
            for c in node.children:
                out.extend(leaves(c))
            return out

        def walk(node):
            if isinstance(node, str):
                return
            if node.kind == CHOICE:
                groups = [leaves(c) for c in node.children]
                for i in range(len(groups)):
                    for j in range(i + 1, len(groups)):
                        for a in groups[i]:
                            for b in groups[j]:
                                pairs.add(frozenset((a, b)))
            for c in node.children:
                walk(c)

        walk(self.control)
        return pairs

    def unordered_pairs(self) -> list[tuple[str, str]]:
        """Step pairs with no ordering and no choice-exclusion between them."""
        ids = self.step_ids()
        before = self.must_precede()
        excl = self.exclusive_pairs()
        out = []
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                if ((a, b) not in before and (b, a) not in before
                        and frozenset((a, b)) not in excl):
                    out.append(tuple(sorted((a, b))))
        return sorted(set(out))

    def linearizations(self, limit: int = 5000) -> Iterator[list[str]]:
        """All step orderings consistent with the tree.

        Choice branches are explored one at a time (each linearization
        covers one branch combination).  Raises ProcessError if the count
        would exceed `limit`, to keep verification bounded.
        """
        count = 0

        def interleave(seqs: list[list[list[str]]]) -> Iterator[list[str]]:
            # seqs: per-child list of linearizations; interleave respecting
            # each child's internal order.
            def merge(chosen: list[list[str]]) -> Iterator[list[str]]:
                nonlocal count
                if all(not s for s in chosen):
                    count += 1
                    if count > limit:
                        raise ProcessError(
                            f"more than {limit} linearizations")
                    yield []
                    return
                for i, s in enumerate(chosen):
                    if s:
                        rest = [list(x) for x in chosen]
                        head = rest[i].pop(0)
                        for tail in merge(rest):
                            yield [head] + tail

            def product(idx: int, acc: list[list[str]]) -> Iterator[list[list[str]]]:
                if idx == len(seqs):
                    yield [list(a) for a in acc]
                    return
                for lin in seqs[idx]:
                    yield from product(idx + 1, acc + [lin])

            for chosen in product(0, []):
                yield from merge(chosen)

        def lins(node) -> list[list[str]]:
            if isinstance(node, str):
                return [[node]]
            if not node.children:
                return [[]]
            child_lins = [lins(c) for c in node.children]
            if node.kind == SEQUENCE:
                result = [[]]
                for cl in child_lins:
                    result = [a + b for a in result for b in cl]
                return result
            if node.kind == PARALLEL:
                return list(interleave(child_lins))
            # CHOICE: one branch at a time
            out = []
            for cl in child_lins:
                out.extend(cl)
            return out

        yield from lins(self.control)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "steps": [self.steps[k].to_dict() for k in sorted(self.steps)],
            "control": self.control.to_dict(),
            "consolidations": [c.to_dict() for c in
                               sorted(self.consolidations,
                                      key=lambda c: c.key())],
        }

    @staticmethod
    def from_dict(d: dict) -> "CompositeProcess":
        steps = {}
        for entry in d.get("steps") or []:
            step = Step(id=str(entry["id"]), service=str(entry["service"]),
                        outcome=entry.get("outcome"),
                        provenance=entry.get("provenance", PROVENANCE_USER))
            steps[step.id] = step
        control = (Construct.from_dict(d["control"]) if d.get("control")
                   else Construct(SEQUENCE))
        consolidations = [
            Consolidation(producer=str(e["producer"]), output=str(e["output"]),
                          consumer=str(e["consumer"]), input=str(e["input"]),
                          provenance=e.get("provenance", PROVENANCE_USER))
            for e in d.get("consolidations") or []]
        proc = CompositeProcess(steps, control, consolidations)
        proc.validate()
        return proc

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def clone(self) -> "CompositeProcess":
        return copy.deepcopy(self)


def empty_process() -> CompositeProcess:
    return CompositeProcess()
