from __future__ import annotations

import pytest

from serviceloom.process import (CHOICE, PARALLEL, SEQUENCE,
                                 CompositeProcess, Consolidation, Construct,
                                 ProcessError, Step)


def proc_two_steps(kind=SEQUENCE) -> CompositeProcess:
    return CompositeProcess(
        steps={"a": Step("a", "svc-a"), "b": Step("b", "svc-b")},
        control=Construct(kind, ["a", "b"]))


def test_validate_accepts_wellformed():
    proc = proc_two_steps()
    proc.consolidations.append(Consolidation("a", "out", "b", "in"))
    proc.validate()


def test_validate_rejects_step_missing_from_tree():
    proc = proc_two_steps()
    proc.control.children.remove("b")
    with pytest.raises(ProcessError):
        proc.validate()


def test_validate_rejects_duplicate_leaf():
    proc = proc_two_steps()
    proc.control.children.append("a")
    with pytest.raises(ProcessError):
        proc.validate()


def test_validate_rejects_double_fed_input():
    proc = proc_two_steps()
    proc.consolidations += [Consolidation("a", "o1", "b", "in"),
                            Consolidation("a", "o2", "b", "in")]
    with pytest.raises(ProcessError):
        proc.validate()


def test_validate_rejects_unknown_consolidation_step():
    proc = proc_two_steps()
    proc.consolidations.append(Consolidation("a", "o", "ghost", "i"))
    with pytest.raises(ProcessError):
        proc.validate()


def test_must_precede_sequence_vs_parallel():
    assert ("a", "b") in proc_two_steps(SEQUENCE).must_precede()
    assert proc_two_steps(PARALLEL).must_precede() == set()


def test_nested_ordering():
    proc = CompositeProcess(
        steps={s: Step(s, f"svc-{s}") for s in ("a", "b", "c")},
        control=Construct(SEQUENCE, [
            Construct(PARALLEL, ["a", "b"]), "c"]))
    order = proc.must_precede()
    assert ("a", "c") in order and ("b", "c") in order
    assert ("a", "b") not in order and ("b", "a") not in order
    assert proc.unordered_pairs() == [("a", "b")]


def test_choice_branches_are_exclusive_not_unordered():
    proc = CompositeProcess(
        steps={s: Step(s, f"svc-{s}") for s in ("a", "b")},
        control=Construct(CHOICE, ["a", "b"]))
    assert proc.unordered_pairs() == []
    assert frozenset(("a", "b")) in proc.exclusive_pairs()


def test_linearizations_parallel_and_choice():
    proc = CompositeProcess(
        steps={s: Step(s, f"svc-{s}") for s in ("a", "b", "c")},
        control=Construct(SEQUENCE, [
            Construct(PARALLEL, ["a", "b"]), "c"]))
    lins = {tuple(l) for l in proc.linearizations()}
    assert lins == {("a", "b", "c"), ("b", "a", "c")}
    choice = CompositeProcess(
        steps={s: Step(s, f"svc-{s}") for s in ("a", "b")},
        control=Construct(CHOICE, ["a", "b"]))
    assert {tuple(l) for l in choice.linearizations()} == {("a",), ("b",)}


def test_serialization_roundtrip_and_hash_stability():
    proc = proc_two_steps()
    proc.consolidations.append(Consolidation("a", "out", "b", "in"))
    again = CompositeProcess.from_dict(proc.to_dict())
    assert again.to_dict() == proc.to_dict()
    assert again.content_hash() == proc.content_hash()


def test_from_dict_rejects_bad_construct():
    with pytest.raises(ProcessError):
        Construct.from_dict({"kind": "loop", "children": []})
