"""Design-time planning semantics shared by the planner and the assist layer.

World state is a set of propositions: Avail(type) facts for data that has
been produced, and Status facts for asserted status objects.  Status
property bindings have no runtime values at design time, so patterns are
grounded to a binding signature mapping each bound property to a type
descriptor (when the target is a parameter or a class) or to a literal.

Matching is subsumption-aware throughout: a proposition satisfies a pattern
when its class is subsumed by the pattern's class and every bound property
is compatible (subsumption on type descriptors, equality on literals).
Delete patterns remove every matching proposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .ontology import OntologyStore
from .profiles import ConditionalEffect, Param, ServiceProfile, StatusPattern

# Binding descriptors: ("class", iri) or ("lit", text).
Descriptor = tuple[str, str]
Signature = tuple[tuple[str, Descriptor], ...]


@dataclass(frozen=True)
class AvailProp:
    type: str

    def key(self) -> tuple:
        return ("avail", self.type)

    def to_dict(self) -> dict:
        return {"kind": "avail", "type": self.type}


@dataclass(frozen=True)
class StatusProp:
    status_class: str
    signature: Signature = ()

    def key(self) -> tuple:
        return ("status", self.status_class, self.signature)

    def to_dict(self) -> dict:
        return {"kind": "status", "class": self.status_class,
                "bindings": {p: list(d) for p, d in self.signature}}


Prop = Union[AvailProp, StatusProp]


@dataclass(frozen=True)
class GroundPattern:
    """A status pattern with binding targets resolved to descriptors."""
    status_class: str
    signature: Signature = ()


# Requirements of a ground action: a typed input or a status precondition.
@dataclass(frozen=True)
class InputReq:
    param: str
    type: str

    def key(self) -> tuple:
        return ("input", self.param, self.type)


@dataclass(frozen=True)
class StatusReq:
    pattern: GroundPattern

    def key(self) -> tuple:
        return ("status", self.pattern.status_class, self.pattern.signature)


Requirement = Union[InputReq, StatusReq]


@dataclass(frozen=True)
class GroundAction:
    """One (service, outcome) pair compiled for planning."""
    service: str
    outcome: str
    requirements: tuple[Requirement, ...]
    adds: tuple[Prop, ...]
    delete_patterns: tuple[GroundPattern, ...]

    def key(self) -> tuple:
        return (self.service, self.outcome)


def _descriptor(target: str, params: dict[str, Param],
                ontology: OntologyStore) -> Descriptor:
    """Resolve a binding target: parameter name, class IRI, or literal."""
    if target in params:
        return ("class", params[target].type)
    if ontology.knows_class(target):
        return ("class", target)
    return ("lit", target)


def ground_pattern(pattern: StatusPattern, params: dict[str, Param],
                   ontology: OntologyStore) -> GroundPattern:
    sig = tuple(sorted((prop, _descriptor(target, params, ontology))
                       for prop, target in pattern.bindings))
    return GroundPattern(pattern.status_class, sig)


def ground_status_prop(pattern: StatusPattern, params: dict[str, Param],
                       ontology: OntologyStore) -> StatusProp:
    g = ground_pattern(pattern, params, ontology)
    return StatusProp(g.status_class, g.signature)


def ground_actions(profile: ServiceProfile,
                   ontology: OntologyStore) -> list[GroundAction]:
    """Compile a profile into one GroundAction per conditional effect."""
    params = {p.name: p for p in profile.inputs + profile.outputs}
    reqs: list[Requirement] = [InputReq(p.name, p.type) for p in profile.inputs]
    reqs += [StatusReq(ground_pattern(pat, params, ontology))
             for pat in profile.preconditions]
    actions = []
    for eff in profile.effects:
        adds: list[Prop] = [AvailProp(p.type) for p in profile.outputs]
        adds += [ground_status_prop(pat, params, ontology)
                 for pat in eff.adds]
        deletes = tuple(ground_pattern(pat, params, ontology)
                        for pat in eff.deletes)
        actions.append(GroundAction(
            service=profile.id,
            outcome=eff.label,
            requirements=tuple(reqs),
            adds=tuple(dict.fromkeys(adds)),  # dedupe, keep order
            delete_patterns=deletes,
        ))
    return actions


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------

def descriptor_matches(provided: Descriptor, required: Descriptor,
                       ontology: OntologyStore) -> bool:
    pk, pv = provided
    rk, rv = required
    if pk == "lit" or rk == "lit":
        return provided == required
    return ontology.match_degree(pv, rv, strict=False).ok()


def pattern_matches(prop: Prop, pattern: GroundPattern,
                    ontology: OntologyStore) -> bool:
    """Does a proposition satisfy a status pattern?

    The proposition's class must be subsumed by the pattern's class, and
    every property bound in the pattern must be bound compatibly in the
    proposition (extra proposition bindings are fine).
    """
    if not isinstance(prop, StatusProp):
        return False
    if not ontology.match_degree(prop.status_class, pattern.status_class,
                                 strict=False).ok():
        return False
    provided = dict(prop.signature)
    for name, req_desc in pattern.signature:
        if name not in provided:
            return False
        if not descriptor_matches(provided[name], req_desc, ontology):
            return False
    return True


def satisfies(prop: Prop, req: Requirement, ontology: OntologyStore) -> bool:
    if isinstance(req, InputReq):
        return (isinstance(prop, AvailProp)
                and ontology.match_degree(prop.type, req.type,
                                          strict=False).ok())
    return pattern_matches(prop, req.pattern, ontology)


def requirement_supports(req: Requirement, state: Iterable[Prop],
                         ontology: OntologyStore) -> list[Prop]:
    return [p for p in state if satisfies(p, req, ontology)]


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------

def apply_action(state: set[Prop], action: GroundAction,
                 ontology: OntologyStore) -> set[Prop]:
    """State after executing one action: adds applied, then matching
    propositions removed by each delete pattern.  Avail facts are never
    deleted (deletes are status patterns by construction)."""
    result = set(state)
    result.update(action.adds)
    if action.delete_patterns:
        doomed = {p for p in result
                  for pat in action.delete_patterns
                  if pattern_matches(p, pat, ontology)}
        result -= doomed
    return result


def action_applicable(state: set[Prop], action: GroundAction,
                      ontology: OntologyStore) -> bool:
    return all(any(satisfies(p, r, ontology) for p in state)
               for r in action.requirements)


def initial_state(available_inputs: Iterable[str],
                  initial_statuses: Iterable[StatusPattern],
                  ontology: OntologyStore) -> set[Prop]:
    state: set[Prop] = {AvailProp(t) for t in available_inputs}
    for pat in initial_statuses:
        state.add(ground_status_prop(pat, {}, ontology))
    return state
