"""Mixed-initiative assistance over a partial composite process.

Every operation here is advisory: nothing mutates the user's process except
complete_dataflow, whose applied consolidations carry auto-completed
provenance, and apply_suggestion, which the user invokes explicitly.  Each
suggestion embeds the content hash of the process (or request) it was
computed against, so applying it after an intervening edit fails stale
instead of corrupting the user's work.

Steps with an unspecified outcome are verified under guaranteed semantics:
adds common to all outcomes count as available, deletes of any outcome
count as possible.  That keeps verification sound without enumerating
outcome combinations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .diagnostics import Diagnostic, Kind, Severity, error, warning
from .ontology import MatchDegree, MatchKind, OntologyStore
from .planner import (AbstractRequest, PlanGraph, build_graph, extract_plans,
                      static_conflict)
from .process import (CHOICE, PARALLEL, PROVENANCE_ACCEPTED, PROVENANCE_AUTO,
                      SEQUENCE, CompositeProcess, Consolidation, Construct,
                      ProcessError, Step)
from .profiles import ServiceProfile, StatusPattern
from .registry import RegistrySnapshot, producers_of
from .semantics import (AvailProp, GroundAction, InputReq, Prop, StatusProp,
                        StatusReq, ground_actions, ground_pattern,
                        initial_state, pattern_matches, satisfies)

_LINEARIZATION_LIMIT = 2000


class AssistError(Exception):
    pass


class UnknownStepError(AssistError):
    pass


class StaleSuggestionError(AssistError):
    pass


# --------------------------------------------------------------------------
# Suggestions
# --------------------------------------------------------------------------

KIND_CONSOLIDATION = "Consolidation"
KIND_ORDERING = "Ordering"
KIND_INSERTION = "Insertion"
KIND_REMOVAL = "Removal"
KIND_RELAXATION = "Relaxation"


@dataclass
class Suggestion:
    kind: str
    payload: dict
    justification: str
    score: tuple = (0, 0, 0)
    weak: bool = False
    applied: bool = False
    target: str = "process"        # what the basis hash covers
    basis_hash: str = ""
    id: str = field(default="")

    def __post_init__(self):
        if not self.id:
            digest = hashlib.sha256(json.dumps(
                [self.kind, self.payload, self.basis_hash],
                sort_keys=True).encode()).hexdigest()
            self.id = digest[:16]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "payload": self.payload,
            "justification": self.justification,
            "score": list(self.score),
            "weak": self.weak,
            "applied": self.applied,
            "target": self.target,
            "basis_hash": self.basis_hash,
        }

    @staticmethod
    def from_dict(d: dict) -> "Suggestion":
        return Suggestion(
            kind=d["kind"], payload=d["payload"],
            justification=d.get("justification", ""),
            score=tuple(d.get("score") or (0, 0, 0)),
            weak=bool(d.get("weak")), applied=bool(d.get("applied")),
            target=d.get("target", "process"),
            basis_hash=d.get("basis_hash", ""), id=d.get("id", ""))


def _degree_score(degree: MatchDegree) -> tuple:
    if degree.degree is MatchKind.EXACT:
        return (1, 0, 0)
    if degree.degree is MatchKind.PLUGIN:
        return (0, 1, -(degree.distance or 0))
    if degree.degree is MatchKind.SUBSUME:
        return (0, 0, -(degree.distance or 0))
    return (-1, 0, 0)


def _chain_text(ontology: OntologyStore, specific: str, general: str) -> str:
    try:
        chain = ontology.subclass_chain(specific, general)
    except Exception:
        return f"{specific} matches {general}"
    if len(chain) == 1:
        return f"{chain[0]} is the required class"
    return " <= ".join(chain)


def _require_step(process: CompositeProcess, step_id: str) -> Step:
    step = process.steps.get(step_id)
    if step is None:
        raise UnknownStepError(f"unknown step: {step_id}")
    return step


def _profile(snapshot: RegistrySnapshot, service: str) -> Optional[ServiceProfile]:
    return snapshot.by_id(service)


# --------------------------------------------------------------------------
# Step semantics under guaranteed/possible outcome readings
# --------------------------------------------------------------------------

@dataclass
class StepSemantics:
    step: Step
    requirements: tuple
    guaranteed_adds: frozenset
    possible_deletes: tuple
    dangling: bool = False


def step_semantics(step: Step, snapshot: RegistrySnapshot,
                   ontology: OntologyStore) -> StepSemantics:
    profile = _profile(snapshot, step.service)
    if profile is None:
        return StepSemantics(step, (), frozenset(), (), dangling=True)
    actions = ground_actions(profile, ontology)
    if step.outcome is not None:
        actions = [a for a in actions if a.outcome == step.outcome] or actions
    reqs = actions[0].requirements
    adds = set(actions[0].adds)
    for a in actions[1:]:
        adds &= set(a.adds)
    deletes = tuple(pat for a in actions for pat in a.delete_patterns)
    return StepSemantics(step, reqs, frozenset(adds), deletes)


def _apply_step(state: set, sem: StepSemantics,
                ontology: OntologyStore) -> set:
    out = set(state)
    out |= sem.guaranteed_adds
    if sem.possible_deletes:
        out -= {p for p in out
                for pat in sem.possible_deletes
                if pattern_matches(p, pat, ontology)}
    return out


def upstream_state(process: CompositeProcess, step_id: str,
                   request: Optional[AbstractRequest],
                   snapshot: RegistrySnapshot,
                   ontology: OntologyStore) -> set:
    """Propositions guaranteed available before a step: the request's
    initial state plus the guaranteed effects of every step that must
    precede it, in control order."""
    state = (initial_state(request.available_inputs, request.initial_statuses,
                           ontology) if request else set())
    before = process.must_precede()
    for sid in process.step_ids():
        if (sid, step_id) in before:
            state = _apply_step(state, step_semantics(
                process.steps[sid], snapshot, ontology), ontology)
    return state


# --------------------------------------------------------------------------
# Dataflow
# --------------------------------------------------------------------------

def suggest_consolidations(process: CompositeProcess, producer: str,
                           consumer: str, snapshot: RegistrySnapshot,
                           ontology: OntologyStore) -> list[Suggestion]:
    """One suggestion per compatible (output, input) pair between the two
    steps; Subsume pairs are included but flagged weak.  Inputs that are
    already consolidated are skipped."""
    p_step = _require_step(process, producer)
    c_step = _require_step(process, consumer)
    p_prof = _profile(snapshot, p_step.service)
    c_prof = _profile(snapshot, c_step.service)
    if p_prof is None or c_prof is None:
        return []
    phash = process.content_hash()
    out: list[Suggestion] = []
    for inp in c_prof.inputs:
        if process.consolidation_for(consumer, inp.name) is not None:
            continue
        for outp in p_prof.outputs:
            degree = ontology.match_degree(outp.type, inp.type, strict=False)
            if degree.degree is MatchKind.FAIL:
                continue
            weak = degree.degree is MatchKind.SUBSUME
            if weak:
                just = (f"{outp.type} is more general than {inp.type}; "
                        "weak match, verify before use")
            elif degree.degree is MatchKind.EXACT:
                just = f"{outp.type} is exactly the required class"
            else:
                just = _chain_text(ontology, outp.type, inp.type)
            out.append(Suggestion(
                kind=KIND_CONSOLIDATION,
                payload={"action": "consolidate", "producer": producer,
                         "output": outp.name, "consumer": consumer,
                         "input": inp.name,
                         "degree": degree.degree.value},
                justification=just,
                score=_degree_score(degree),
                weak=weak,
                basis_hash=phash))
    out.sort(key=lambda s: (tuple(-x for x in s.score),
                            s.payload["input"], s.payload["output"]))
    return out


def complete_dataflow(process: CompositeProcess, snapshot: RegistrySnapshot,
                      ontology: OntologyStore,
                      ) -> tuple[CompositeProcess, list[Suggestion]]:
    """Bind every unbound input that has a strictly best upstream match.

    Ambiguity goes back to the human: inputs whose best score is tied are
    left unbound and the competing suggestions are returned unapplied.
    """
    proc = process.clone()
    suggestions: list[Suggestion] = []
    before = proc.must_precede()
    order = proc.step_ids()
    for sid in order:
        step = proc.steps[sid]
        profile = _profile(snapshot, step.service)
        if profile is None:
            continue
        upstream = [u for u in order if (u, sid) in before]
        for inp in profile.inputs:
            if proc.consolidation_for(sid, inp.name) is not None:
                continue
            candidates = []
            for u in upstream:
                u_prof = _profile(snapshot, proc.steps[u].service)
                if u_prof is None:
                    continue
                for outp in u_prof.outputs:
                    degree = ontology.match_degree(outp.type, inp.type,
                                                   strict=False)
                    if degree.ok():
                        candidates.append(
                            (_degree_score(degree), u, outp.name, degree))
            if not candidates:
                continue
            candidates.sort(key=lambda c: (tuple(-x for x in c[0]),
                                           c[1], c[2]))
            best = candidates[0][0]
            tied = [c for c in candidates if c[0] == best]
            phash = proc.content_hash()
            if len(tied) == 1:
                _score, u, oname, degree = tied[0]
                proc.consolidations.append(Consolidation(
                    producer=u, output=oname, consumer=sid, input=inp.name,
                    provenance=PROVENANCE_AUTO))
                suggestions.append(Suggestion(
                    kind=KIND_CONSOLIDATION,
                    payload={"action": "consolidate", "producer": u,
                             "output": oname, "consumer": sid,
                             "input": inp.name,
                             "degree": degree.degree.value},
                    justification=f"unique best match for {sid}.{inp.name}",
                    score=_score, applied=True, basis_hash=phash))
            else:
                for _score, u, oname, degree in tied:
                    suggestions.append(Suggestion(
                        kind=KIND_CONSOLIDATION,
                        payload={"action": "consolidate", "producer": u,
                                 "output": oname, "consumer": sid,
                                 "input": inp.name,
                                 "degree": degree.degree.value},
                        justification=(f"one of {len(tied)} equally good "
                                       f"matches for {sid}.{inp.name}"),
                        score=_score, basis_hash=phash))
    proc.validate()
    return proc, suggestions


def verify_dataflow(process: CompositeProcess, snapshot: RegistrySnapshot,
                    ontology: OntologyStore,
                    request: Optional[AbstractRequest] = None
                    ) -> list[Diagnostic]:
    """Type-check every consolidation and flag unbound inputs."""
    diags: list[Diagnostic] = []
    for c in sorted(process.consolidations, key=lambda c: c.key()):
        p_prof = _profile(snapshot, process.steps[c.producer].service)
        c_prof = _profile(snapshot, process.steps[c.consumer].service)
        if p_prof is None or c_prof is None:
            continue  # dangling steps are control-flow diagnostics
        outp = p_prof.param(c.output)
        inp = c_prof.param(c.input)
        loc = f"{c.producer}.{c.output}->{c.consumer}.{c.input}"
        if outp is None or inp is None:
            diags.append(error(Kind.TYPE_MISMATCH, loc,
                               "consolidation references a missing parameter"))
            continue
        if not (ontology.knows_class(outp.type)
                and ontology.knows_class(inp.type)):
            diags.append(warning(
                Kind.WEAK_MATCH, loc,
                f"unresolved parameter type ({outp.type} -> {inp.type}); "
                "cannot be verified"))
            continue
        degree = ontology.match_degree(outp.type, inp.type, strict=False)
        if degree.degree is MatchKind.FAIL:
            diags.append(error(
                Kind.TYPE_MISMATCH, loc,
                f"{outp.type} does not flow into {inp.type}: the classes "
                "are unrelated"))
        elif degree.degree is MatchKind.SUBSUME:
            diags.append(warning(
                Kind.WEAK_MATCH, loc,
                f"{outp.type} is more general than {inp.type}; the "
                "assignment may fail at runtime"))
    avail = (initial_state(request.available_inputs, [], ontology)
             if request else set())
    for sid in process.step_ids():
        profile = _profile(snapshot, process.steps[sid].service)
        if profile is None:
            continue
        for inp in profile.inputs:
            if process.consolidation_for(sid, inp.name) is not None:
                continue
            req = InputReq(inp.name, inp.type)
            if any(satisfies(p, req, ontology) for p in avail):
                continue
            diags.append(warning(
                Kind.UNBOUND_INPUT, f"{sid}.{inp.name}",
                f"input '{inp.name}' ({inp.type}) has no consolidation and "
                "no matching available request input"))
    return diags


# --------------------------------------------------------------------------
# Control flow
# --------------------------------------------------------------------------

def _dependency(a_sem: StepSemantics, b_sem: StepSemantics,
                process: CompositeProcess,
                ontology: OntologyStore) -> Optional[str]:
    """Does step b depend on step a (data or status)?"""
    for c in process.consolidations:
        if c.producer == a_sem.step.id and c.consumer == b_sem.step.id:
            return f"consolidation {c.producer}.{c.output}->{c.consumer}.{c.input}"
    for r in b_sem.requirements:
        if isinstance(r, StatusReq):
            if any(pattern_matches(p, r.pattern, ontology)
                   for p in a_sem.guaranteed_adds
                   if isinstance(p, StatusProp)):
                return (f"precondition '{r.pattern.status_class}' of "
                        f"{b_sem.step.id} is asserted by {a_sem.step.id}")
    return None


def suggest_orderings(process: CompositeProcess, snapshot: RegistrySnapshot,
                      ontology: OntologyStore) -> list[Suggestion]:
    """Sequencing introductions for unordered dependent pairs, and
    relaxations to parallel for sequenced independent pairs.

    Payloads are only emitted where they are mechanically applicable:
    introductions for direct siblings of one Parallel construct,
    relaxations for adjacent children of one Sequence.
    """
    phash = process.content_hash()
    sems = {sid: step_semantics(process.steps[sid], snapshot, ontology)
            for sid in process.step_ids()}
    out: list[Suggestion] = []
    for a, b in process.unordered_pairs():
        for first, second in ((a, b), (b, a)):
            why = _dependency(sems[first], sems[second], process, ontology)
            if why and _parallel_siblings(process.control, first, second):
                out.append(Suggestion(
                    kind=KIND_ORDERING,
                    payload={"action": "sequence", "first": first,
                             "second": second},
                    justification=f"{second} depends on {first}: {why}",
                    score=(1, 0, 0), basis_hash=phash))
                break
    before = process.must_precede()
    for a, b in sorted(before):
        if _dependency(sems[a], sems[b], process, ontology):
            continue
        if _dependency(sems[b], sems[a], process, ontology):
            continue
        ga, gb = _step_ground_actions(sems[a], sems[b], snapshot, ontology,
                                      process)
        if any(static_conflict(x, y, ontology) for x in ga for y in gb):
            continue
        if _adjacent_sequence_children(process.control, a, b):
            out.append(Suggestion(
                kind=KIND_ORDERING,
                payload={"action": "parallelize", "first": a, "second": b},
                justification=(f"{a} and {b} share no data or status "
                               "dependency and are not mutex; they can run "
                               "in parallel"),
                score=(0, 1, 0), basis_hash=phash))
    out.sort(key=lambda s: (s.payload["action"], s.payload["first"],
                            s.payload["second"]))
    return out


def _step_ground_actions(a_sem, b_sem, snapshot, ontology, process):
    ga = _ground_for_step(a_sem.step, snapshot, ontology)
    gb = _ground_for_step(b_sem.step, snapshot, ontology)
    return ga, gb


def _ground_for_step(step: Step, snapshot: RegistrySnapshot,
                     ontology: OntologyStore) -> list[GroundAction]:
    profile = _profile(snapshot, step.service)
    if profile is None:
        return []
    actions = ground_actions(profile, ontology)
    if step.outcome is not None:
        picked = [a for a in actions if a.outcome == step.outcome]
        return picked or actions
    return actions


def verify_controlflow(process: CompositeProcess, request: AbstractRequest,
                       snapshot: RegistrySnapshot,
                       ontology: OntologyStore) -> list[Diagnostic]:
    """Simulate every linearization consistent with the control tree.

    A step is flagged UnsatisfiedPrecondition when some linearization
    reaches it without one of its inputs or status preconditions being
    available; MutexConflict covers parallel pairs with inconsistent
    effects or conflicting assumed outcomes of one service; DanglingStep
    covers deregistered services.  Choice branches are checked
    independently (each linearization covers one branch combination).
    """
    diags: list[Diagnostic] = []
    sems = {}
    for sid in process.step_ids():
        sem = step_semantics(process.steps[sid], snapshot, ontology)
        sems[sid] = sem
        if sem.dangling:
            diags.append(error(
                Kind.DANGLING_STEP, sid,
                f"service '{process.steps[sid].service}' is no longer "
                "registered"))

    # Parallel-pair mutex screens (state-free, precise on ground adds).
    for a, b in process.unordered_pairs():
        if sems[a].dangling or sems[b].dangling:
            continue
        sa, sb = process.steps[a], process.steps[b]
        if (sa.service == sb.service and sa.outcome != sb.outcome
                and sa.outcome is not None and sb.outcome is not None):
            diags.append(error(
                Kind.MUTEX_CONFLICT, f"{a}~{b}",
                f"{a} and {b} assume different outcomes of service "
                f"'{sa.service}'; the outcomes are mutually exclusive"))
            continue
        clash = None
        for x, y in ((sems[a], sems[b]), (sems[b], sems[a])):
            for pat in x.possible_deletes:
                for p in y.guaranteed_adds:
                    if pattern_matches(p, pat, ontology):
                        clash = (x.step.id, y.step.id, pat.status_class)
                        break
                if clash:
                    break
            if clash:
                break
        if clash:
            diags.append(error(
                Kind.MUTEX_CONFLICT, f"{a}~{b}",
                f"{clash[0]} deletes status '{clash[2]}' that {clash[1]} "
                "asserts; running them in parallel is inconsistent"))

    # Linearization simulation.
    failures: dict[tuple[str, str], str] = {}
    init = initial_state(request.available_inputs, request.initial_statuses,
                         ontology)
    truncated = False
    try:
        linearizations = list(process.linearizations(_LINEARIZATION_LIMIT))
    except ProcessError:
        truncated = True
        linearizations = [process.step_ids()]
    for order in linearizations:
        state = set(init)
        executed: set[str] = set()
        for sid in order:
            sem = sems[sid]
            if sem.dangling:
                executed.add(sid)
                continue
            for r in sem.requirements:
                label = (r.param if isinstance(r, InputReq)
                         else r.pattern.status_class)
                key = (sid, label)
                if key in failures:
                    continue
                if isinstance(r, InputReq):
                    c = process.consolidation_for(sid, r.param)
                    if c is not None and c.producer not in executed:
                        failures[key] = (
                            f"input '{r.param}' is consolidated from "
                            f"{c.producer}, which has not run yet in order "
                            + "->".join(order))
                        continue
                if not any(satisfies(p, r, ontology) for p in state):
                    what = ("input '%s'" % label if isinstance(r, InputReq)
                            else "precondition '%s'" % label)
                    failures[key] = (
                        f"{what} is not available when {sid} runs in order "
                        + "->".join(order))
            state = _apply_step(state, sem, ontology)
            executed.add(sid)
    for (sid, label), why in sorted(failures.items()):
        diags.append(error(Kind.UNSATISFIED_PRECONDITION,
                           f"{sid}.{label}", why))
    if truncated:
        diags.append(warning(
            Kind.UNSATISFIED_PRECONDITION, "process",
            f"more than {_LINEARIZATION_LIMIT} linearizations; only the "
            "canonical order was simulated"))
    return diags


def detect_conflicts(process: CompositeProcess, candidate: str,
                     position: Optional[str], snapshot: RegistrySnapshot,
                     ontology: OntologyStore
                     ) -> tuple[list[Diagnostic], list[Suggestion]]:
    """Mutex screening for a service the user is about to place.

    `position` names the step the candidate would run in parallel with;
    None means the candidate floats unordered against every current step.
    Resolutions propose sequencing the candidate against the conflicting
    step; outcome-exclusivity conflicts get no sequencing resolution.
    """
    profile = _profile(snapshot, candidate)
    if profile is None:
        raise UnknownStepError(f"unknown service: {candidate}")
    cand_actions = ground_actions(profile, ontology)
    if position is not None:
        _require_step(process, position)
        unordered = {position}
        for a, b in process.unordered_pairs():
            if a == position:
                unordered.add(b)
            elif b == position:
                unordered.add(a)
    else:
        unordered = set(process.step_ids())
    phash = process.content_hash()
    diags: list[Diagnostic] = []
    suggestions: list[Suggestion] = []
    for sid in sorted(unordered):
        step = process.steps[sid]
        for other in _ground_for_step(step, snapshot, ontology):
            rule = None
            for ca in cand_actions:
                rule = static_conflict(ca, other, ontology)
                if rule:
                    break
            if not rule:
                continue
            diags.append(error(
                Kind.MUTEX_CONFLICT, f"{candidate}~{sid}",
                f"candidate '{candidate}' is mutex with step {sid} "
                f"({rule})"))
            if rule != "outcome-exclusivity":
                # Order the deleter after the step whose supports it kills;
                # when the existing step is the deleter, run the candidate
                # first instead.
                cand_deletes = any(ca.delete_patterns for ca in cand_actions)
                relation = ("before"
                            if other.delete_patterns and not cand_deletes
                            else "after")
                suggestions.append(Suggestion(
                    kind=KIND_ORDERING,
                    payload={"action": "sequence_insert",
                             "service": candidate, "anchor": sid,
                             "relation": relation},
                    justification=(f"sequencing '{candidate}' {relation} "
                                   f"{sid} separates the mutex pair into "
                                   "different layers"),
                    score=(0, 1, 0), basis_hash=phash))
            break
    return diags, suggestions


# --------------------------------------------------------------------------
# Insertions and relaxations
# --------------------------------------------------------------------------

def suggest_insertions(process: CompositeProcess, request: AbstractRequest,
                       snapshot: RegistrySnapshot,
                       ontology: OntologyStore) -> list[Suggestion]:
    """Close UnboundInput and UnsatisfiedPrecondition gaps with registered
    producers; gaps no single service closes are delegated to the planner,
    yielding a sub-plan insertion."""
    phash = process.content_hash()
    out: list[Suggestion] = []
    gaps: list[tuple[str, object]] = []  # (step, InputReq | StatusReq target)
    for d in verify_dataflow(process, snapshot, ontology, request):
        if d.kind is Kind.UNBOUND_INPUT:
            sid, pname = d.location.split(".", 1)
            profile = _profile(snapshot, process.steps[sid].service)
            param = profile.param(pname) if profile else None
            if param is not None:
                gaps.append((sid, InputReq(param.name, param.type)))
    for d in verify_controlflow(process, request, snapshot, ontology):
        if d.kind is Kind.UNSATISFIED_PRECONDITION and "." in d.location:
            sid, label = d.location.split(".", 1)
            sem = step_semantics(process.steps[sid], snapshot, ontology)
            for r in sem.requirements:
                if isinstance(r, StatusReq) and r.pattern.status_class == label:
                    gaps.append((sid, r))
                    break

    seen_gap: set = set()
    for sid, req in gaps:
        gap_key = (sid, req.key() if hasattr(req, "key") else str(req))
        if gap_key in seen_gap:
            continue
        seen_gap.add(gap_key)
        state = upstream_state(process, sid, request, snapshot, ontology)
        if isinstance(req, InputReq):
            target = req.type
            matches = producers_of(snapshot, ontology, target)
        else:
            target = StatusPattern.make(req.pattern.status_class)
            matches = producers_of(snapshot, ontology, target)
        direct = []
        for m in matches:
            if m.profile.id in {process.steps[s].service
                                for s in process.steps}:
                pass  # re-suggesting an existing service is still valid
            for action in ground_actions(m.profile, ontology):
                if all(any(satisfies(p, r, ontology) for p in state)
                       for r in action.requirements):
                    direct.append((m, action))
                    break
        if direct:
            for m, action in direct:
                payload = {"action": "insert_before", "step": sid,
                           "service": m.profile.id,
                           "outcome": action.outcome}
                if isinstance(req, InputReq):
                    outs = sorted(
                        p.name for p in m.profile.outputs
                        if ontology.match_degree(p.type, req.type,
                                                 strict=False).ok())
                    if outs:
                        payload["consolidate"] = {"output": outs[0],
                                                  "input": req.param}
                out.append(Suggestion(
                    kind=KIND_INSERTION, payload=payload,
                    justification=(f"'{m.profile.id}' closes the gap at "
                                   f"{sid} ({target})"),
                    score=m.score, basis_hash=phash))
            continue
        # No directly applicable producer: delegate to the planner with the
        # gap as goal and the upstream state as initial state.
        sub_request = _gap_request(req, state)
        graph = build_graph(sub_request, snapshot, ontology)
        plans, _token = extract_plans(graph, sub_request, 1)
        if plans:
            layers = [sorted([[n.service, n.outcome] for n in layer])
                      for layer in plans[0].layers if layer]
            if layers:
                out.append(Suggestion(
                    kind=KIND_INSERTION,
                    payload={"action": "insert_plan_before", "step": sid,
                             "layers": layers},
                    justification=(f"a {sum(len(l) for l in layers)}-step "
                                   f"sub-plan closes the gap at {sid} "
                                   f"({target})"),
                    score=(0, 1, -len(layers)), basis_hash=phash))
    out.sort(key=lambda s: (s.payload["step"],
                            tuple(-x for x in s.score),
                            s.payload.get("service", "")))
    return out


def _gap_request(req, state: set) -> AbstractRequest:
    available = sorted(p.type for p in state if isinstance(p, AvailProp))
    statuses = []
    for p in state:
        if isinstance(p, StatusProp):
            bindings = {name: value for name, (kind, value) in p.signature}
            statuses.append(StatusPattern.make(p.status_class, bindings))
    statuses.sort(key=lambda s: (s.status_class, s.bindings))
    if isinstance(req, InputReq):
        return AbstractRequest(available_inputs=available,
                               initial_statuses=statuses,
                               goal_outputs=[req.type], horizon=8)
    bindings = {name: value for name, (kind, value) in req.pattern.signature}
    return AbstractRequest(
        available_inputs=available, initial_statuses=statuses,
        goal_statuses=[StatusPattern.make(req.pattern.status_class, bindings)],
        horizon=8)


def suggest_relaxations(request: AbstractRequest,
                        graph: PlanGraph) -> list[Suggestion]:
    """Ways out when no plan exists: generalize an unreachable goal to its
    nearest reachable superclass, drop it, or add an input whose presence
    makes it reachable.  Precondition: the graph has finished expanding
    with the goals unreachable."""
    if not (graph.leveled_off or graph.horizon_hit):
        raise AssistError("relaxations need a fully expanded graph")
    if graph.goals_reachable():
        raise AssistError("request is satisfiable; nothing to relax")
    rhash = request.content_hash()
    ontology = graph.ontology
    last = len(graph.prop_layers) - 1
    out: list[Suggestion] = []
    unreachable = [(label, props) for label, props
                   in graph.goal_candidates(last) if not props]
    for label, _props in unreachable:
        if label[0] == "output":
            goal = label[1]
            # (a) nearest reachable superclass
            if ontology.knows_class(goal):
                anc = sorted(ontology.ancestors(goal).items(),
                             key=lambda kv: (kv[1], kv[0]))
                for cls, dist in anc:
                    if cls == goal or dist == 0:
                        continue
                    if graph.supports(last, InputReq("goal", cls)):
                        out.append(Suggestion(
                            kind=KIND_RELAXATION,
                            payload={"action": "generalize_goal",
                                     "goal": goal, "to": cls},
                            justification=(
                                f"'{goal}' is unreachable but its "
                                f"superclass '{cls}' (distance {dist}) is "
                                "producible"),
                            score=(0, 1, -dist), target="request",
                            basis_hash=rhash))
                        break
            goal_name = goal
        else:
            goal_name = label[1].status_class
        # (b) drop the goal
        out.append(Suggestion(
            kind=KIND_RELAXATION,
            payload={"action": "drop_goal",
                     "goal": goal_name,
                     "goal_kind": label[0]},
            justification=f"no registered service can achieve '{goal_name}'",
            score=(0, 0, -1), target="request", basis_hash=rhash))
    # (c) add an input that unlocks the goals, tested by re-running
    # reachability with each candidate input class.
    candidates = sorted({p.type
                         for prof in graph.snapshot.profiles
                         for p in prof.inputs})
    for cls in candidates[:50]:
        if cls in request.available_inputs:
            continue
        trial = AbstractRequest(
            available_inputs=list(request.available_inputs) + [cls],
            initial_statuses=list(request.initial_statuses),
            goal_outputs=list(request.goal_outputs),
            goal_statuses=list(request.goal_statuses),
            nonfunctional_filters=list(request.nonfunctional_filters),
            horizon=request.horizon)
        trial_graph = build_graph(trial, graph.snapshot, ontology)
        if trial_graph.goals_reachable():
            out.append(Suggestion(
                kind=KIND_RELAXATION,
                payload={"action": "add_input", "type": cls},
                justification=(f"supplying an input of class '{cls}' makes "
                               "the goals reachable"),
                score=(1, 0, 0), target="request", basis_hash=rhash))
    out.sort(key=lambda s: (tuple(-x for x in s.score),
                            s.payload["action"],
                            json.dumps(s.payload, sort_keys=True)))
    return out


def dangling_removals(process: CompositeProcess,
                      snapshot: RegistrySnapshot) -> list[Suggestion]:
    """Removal suggestions for steps whose service was deregistered."""
    phash = process.content_hash()
    out = []
    for sid in process.step_ids():
        if snapshot.by_id(process.steps[sid].service) is None:
            out.append(Suggestion(
                kind=KIND_REMOVAL,
                payload={"action": "remove_step", "step": sid},
                justification=(f"service '{process.steps[sid].service}' is "
                               "no longer registered; the step cannot run"),
                score=(1, 0, 0), basis_hash=phash))
    return out


# --------------------------------------------------------------------------
# Applying suggestions
# --------------------------------------------------------------------------

def check_fresh(suggestion: Suggestion, process: CompositeProcess):
    if suggestion.target == "process" \
            and suggestion.basis_hash != process.content_hash():
        raise StaleSuggestionError(
            f"suggestion {suggestion.id} was computed against a different "
            "process state")


def apply_suggestion(process: CompositeProcess, suggestion: Suggestion,
                     snapshot: Optional[RegistrySnapshot] = None
                     ) -> CompositeProcess:
    """Apply a suggestion's payload; the result satisfies the process
    invariants or the call raises without side effects.  Relaxations target
    the request and are applied by the session layer."""
    check_fresh(suggestion, process)
    if suggestion.kind == KIND_RELAXATION:
        raise AssistError("relaxations apply to the request, not the process")
    proc = process.clone()
    action = suggestion.payload.get("action")
    p = suggestion.payload
    if action == "consolidate":
        if proc.consolidation_for(p["consumer"], p["input"]) is not None:
            raise AssistError(
                f"input {p['consumer']}.{p['input']} is already consolidated")
        proc.consolidations.append(Consolidation(
            producer=p["producer"], output=p["output"],
            consumer=p["consumer"], input=p["input"],
            provenance=PROVENANCE_ACCEPTED))
    elif action == "sequence":
        _sequence_pair(proc, p["first"], p["second"])
    elif action == "parallelize":
        _parallelize_pair(proc, p["first"], p["second"])
    elif action == "sequence_insert":
        sid = _fresh_step_id(proc)
        proc.steps[sid] = Step(id=sid, service=p["service"],
                               provenance=PROVENANCE_ACCEPTED)
        _wrap_leaf(proc, p["anchor"], sid, before=(p["relation"] == "before"))
    elif action == "insert_before":
        sid = _fresh_step_id(proc)
        proc.steps[sid] = Step(id=sid, service=p["service"],
                               outcome=p.get("outcome"),
                               provenance=PROVENANCE_ACCEPTED)
        _wrap_leaf(proc, p["step"], sid, before=True)
        cons = p.get("consolidate")
        if cons:
            proc.consolidations.append(Consolidation(
                producer=sid, output=cons["output"], consumer=p["step"],
                input=cons["input"], provenance=PROVENANCE_ACCEPTED))
    elif action == "insert_plan_before":
        parts = []
        for layer in p["layers"]:
            ids = []
            for service, outcome in layer:
                sid = _fresh_step_id(proc)
                proc.steps[sid] = Step(id=sid, service=service,
                                       outcome=outcome,
                                       provenance=PROVENANCE_ACCEPTED)
                ids.append(sid)
            parts.append(ids[0] if len(ids) == 1
                         else Construct(PARALLEL, ids))
        chain = (parts[0] if len(parts) == 1
                 else Construct(SEQUENCE, parts))
        _wrap_leaf_with(proc, p["step"], chain, before=True)
    elif action == "remove_step":
        _remove_step(proc, p["step"])
    else:
        raise AssistError(f"unknown suggestion action: {action!r}")
    proc.validate()
    return proc


def _fresh_step_id(proc: CompositeProcess) -> str:
    n = len(proc.steps) + 1
    while f"s{n}" in proc.steps:
        n += 1
    return f"s{n}"


def _parallel_siblings(node: Construct, a: str, b: str) -> bool:
    if node.kind == PARALLEL and a in node.children and b in node.children:
        return True
    return any(isinstance(c, Construct) and _parallel_siblings(c, a, b)
               for c in node.children)


def _adjacent_sequence_children(node: Construct, a: str, b: str) -> bool:
    if node.kind == SEQUENCE:
        ch = node.children
        for i in range(len(ch) - 1):
            if ch[i] == a and ch[i + 1] == b:
                return True
    return any(isinstance(c, Construct)
               and _adjacent_sequence_children(c, a, b)
               for c in node.children)


def _sequence_pair(proc: CompositeProcess, first: str, second: str):
    def walk(node: Construct) -> bool:
        if (node.kind == PARALLEL and first in node.children
                and second in node.children):
            idx = min(node.children.index(first),
                      node.children.index(second))
            node.children.remove(first)
            node.children.remove(second)
            node.children.insert(idx, Construct(SEQUENCE, [first, second]))
            return True
        return any(walk(c) for c in node.children
                   if isinstance(c, Construct))

    if not walk(proc.control):
        raise AssistError(
            f"{first} and {second} are not direct parallel siblings")


def _parallelize_pair(proc: CompositeProcess, first: str, second: str):
    def walk(node: Construct) -> bool:
        if node.kind == SEQUENCE:
            ch = node.children
            for i in range(len(ch) - 1):
                if ch[i] == first and ch[i + 1] == second:
                    ch[i:i + 2] = [Construct(PARALLEL, [first, second])]
                    return True
        return any(walk(c) for c in node.children
                   if isinstance(c, Construct))

    if not walk(proc.control):
        raise AssistError(
            f"{first} and {second} are not adjacent sequence children")


def _wrap_leaf(proc: CompositeProcess, anchor: str, new_step: str,
               before: bool):
    _wrap_leaf_with(proc, anchor, new_step, before)


def _wrap_leaf_with(proc: CompositeProcess, anchor: str, new_part,
                    before: bool):
    def walk(node: Construct) -> bool:
        for i, c in enumerate(node.children):
            if c == anchor:
                pair = [new_part, anchor] if before else [anchor, new_part]
                node.children[i] = Construct(SEQUENCE, pair)
                return True
            if isinstance(c, Construct) and walk(c):
                return True
        return False

    if not walk(proc.control):
        raise AssistError(f"anchor step {anchor} not found in control tree")


def _remove_step(proc: CompositeProcess, sid: str):
    if sid not in proc.steps:
        raise UnknownStepError(f"unknown step: {sid}")
    del proc.steps[sid]
    proc.consolidations = [c for c in proc.consolidations
                           if c.producer != sid and c.consumer != sid]

    def prune(node: Construct):
        kept = []
        for c in node.children:
            if isinstance(c, Construct):
                prune(c)
                if c.children:
                    kept.append(c)
            elif c != sid:
                kept.append(c)
        node.children = kept

    prune(proc.control)


def count_errors(diags: list[Diagnostic], kind: Kind) -> int:
    return sum(1 for d in diags
               if d.kind is kind and d.severity is Severity.ERROR)
