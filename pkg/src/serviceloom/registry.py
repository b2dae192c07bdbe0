"""Service registry: versioned profile storage and semantic discovery.

Single-writer, multi-reader: mutations go through the Registry and bump its
version; queries run against an immutable RegistrySnapshot so discovery is
never blocked by registration.

Discovery semantics: a desired output or effect is satisfied when some
profile output/added status is subsumed by it (Exact or Plugin); a profile
input is coverable when some supplied class is subsumed by it.  Subsume-
degree matches are excluded here and only surface in the suggestion APIs.
Results are ranked by the aggregate score (count of Exact criteria, count
of Plugin, negated total distance), ties broken by id, so identical inputs
always produce byte-identical output order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .diagnostics import Diagnostic
from .ontology import MatchDegree, MatchKind, OntologyStore, FAIL
from .profiles import ServiceProfile, StatusPattern, annotation_warnings

Comparator = str  # one of =, !=, <, <=, >, >=, subsumed-by
_COMPARATORS = {"=", "!=", "<", "<=", ">", ">=", "subsumed-by"}


class RegistryError(Exception):
    pass


class DuplicateServiceError(RegistryError):
    pass


class UnknownServiceError(RegistryError):
    pass


class EmptyQueryError(RegistryError):
    pass


@dataclass
class DiscoveryQuery:
    required_inputs: list[str] = field(default_factory=list)
    desired_outputs: list[str] = field(default_factory=list)
    desired_effects: list[StatusPattern] = field(default_factory=list)
    nonfunctional_filters: list[tuple[str, Comparator, object]] = field(
        default_factory=list)
    max_results: Optional[int] = None

    def validate(self):
        if not (self.required_inputs or self.desired_outputs
                or self.desired_effects or self.nonfunctional_filters):
            raise EmptyQueryError("discovery query has no criteria")
        for attr, op, _value in self.nonfunctional_filters:
            if op not in _COMPARATORS:
                raise RegistryError(f"unknown comparator '{op}' on '{attr}'")

    @staticmethod
    def from_dict(d: dict) -> "DiscoveryQuery":
        filters = []
        for entry in d.get("nonfunctional_filters") or []:
            filters.append((str(entry["attribute"]),
                            str(entry["comparator"]), entry["value"]))
        return DiscoveryQuery(
            required_inputs=[str(c) for c in d.get("required_inputs") or []],
            desired_outputs=[str(c) for c in d.get("desired_outputs") or []],
            desired_effects=[StatusPattern.from_dict(p)
                             for p in d.get("desired_effects") or []],
            nonfunctional_filters=filters,
            max_results=d.get("max_results"),
        )


Score = tuple[int, int, int]  # (exact count, plugin count, -total distance)


@dataclass
class ServiceMatch:
    profile: ServiceProfile
    degrees: dict[str, MatchDegree]
    score: Score

    def to_dict(self) -> dict:
        return {
            "id": self.profile.id,
            "name": self.profile.name,
            "score": list(self.score),
            "degrees": {k: v.to_dict() for k, v in self.degrees.items()},
        }


def aggregate_score(degrees: dict[str, MatchDegree]) -> Score:
    exact = sum(1 for d in degrees.values() if d.degree is MatchKind.EXACT)
    plugin = sum(1 for d in degrees.values() if d.degree is MatchKind.PLUGIN)
    total = sum(d.distance or 0 for d in degrees.values()
                if d.degree is not MatchKind.FAIL)
    return (exact, plugin, -total)


@dataclass(frozen=True)
class RegistrySnapshot:
    version: int
    profiles: tuple[ServiceProfile, ...]  # sorted by id

    def by_id(self, service_id: str) -> Optional[ServiceProfile]:
        for p in self.profiles:
            if p.id == service_id:
                return p
        return None


class Registry:
    """Mutable profile store; see module docstring for the contract."""

    def __init__(self):
        self._profiles: dict[str, ServiceProfile] = {}
        self._warnings: dict[str, list[Diagnostic]] = {}
        self.version = 0
        self._listeners: list = []  # called with (event, service_id)

    def add_listener(self, fn):
        self._listeners.append(fn)

    def _notify(self, event: str, service_id: str):
        for fn in self._listeners:
            fn(event, service_id)

    def register(self, profile: ServiceProfile,
                 ontology: OntologyStore) -> list[Diagnostic]:
        if profile.id in self._profiles:
            raise DuplicateServiceError(
                f"service '{profile.id}' is already registered")
        diags = annotation_warnings(profile, ontology)
        self._profiles[profile.id] = profile
        self._warnings[profile.id] = diags
        self.version += 1
        self._notify("register", profile.id)
        return diags

    def deregister(self, service_id: str):
        if service_id not in self._profiles:
            raise UnknownServiceError(f"unknown service: {service_id}")
        del self._profiles[service_id]
        self._warnings.pop(service_id, None)
        self.version += 1
        self._notify("deregister", service_id)

    def get(self, service_id: str) -> ServiceProfile:
        if service_id not in self._profiles:
            raise UnknownServiceError(f"unknown service: {service_id}")
        return self._profiles[service_id]

    def warnings_for(self, service_id: str) -> list[Diagnostic]:
        return list(self._warnings.get(service_id, ()))

    def snapshot(self) -> RegistrySnapshot:
        return RegistrySnapshot(
            version=self.version,
            profiles=tuple(self._profiles[k]
                           for k in sorted(self._profiles)))

    # Convenience pass-throughs operating on a fresh snapshot.
    def discover(self, query: DiscoveryQuery,
                 ontology: OntologyStore) -> list[ServiceMatch]:
        return discover(self.snapshot(), ontology, query)

    def producers_of(self, target, ontology: OntologyStore) -> list[ServiceMatch]:
        return producers_of(self.snapshot(), ontology, target)

    def successors_of(self, service_id: str,
                      ontology: OntologyStore) -> list[ServiceMatch]:
        return successors_of(self.snapshot(), ontology, service_id)


# --------------------------------------------------------------------------
# Queries
# --------------------------------------------------------------------------

def nf_passes(profile: ServiceProfile, attr: str, op: Comparator,
               value, ontology: OntologyStore) -> bool:
    actual = profile.nonfunctional_map.get(attr)
    if actual is None:
        return False
    if op == "subsumed-by":
        if not (isinstance(actual, str) and isinstance(value, str)):
            return False
        return ontology.match_degree(actual, value, strict=False).ok()
    if op == "=":
        return actual == value
    if op == "!=":
        return actual != value
    # Ordering comparators need like types (both numeric or both strings).
    num = (int, float)
    if not ((isinstance(actual, num) and isinstance(value, num))
            or (isinstance(actual, str) and isinstance(value, str))):
        return False
    if op == "<":
        return actual < value
    if op == "<=":
        return actual <= value
    if op == ">":
        return actual > value
    if op == ">=":
        return actual >= value
    raise RegistryError(f"unknown comparator '{op}'")


def _best(degrees: list[MatchDegree]) -> MatchDegree:
    usable = [d for d in degrees if d.ok()]
    if not usable:
        return FAIL
    return min(usable, key=lambda d: (0 if d.degree is MatchKind.EXACT else 1,
                                      d.distance or 0))


def _match_profile(profile: ServiceProfile, query: DiscoveryQuery,
                   ontology: OntologyStore) -> Optional[ServiceMatch]:
    degrees: dict[str, MatchDegree] = {}
    for goal in query.desired_outputs:
        best = _best([ontology.match_degree(p.type, goal, strict=False)
                      for p in profile.outputs])
        if not best.ok():
            return None
        degrees[f"output:{goal}"] = best
    for pat in query.desired_effects:
        candidates = [ontology.match_degree(add.status_class,
                                            pat.status_class, strict=False)
                      for eff in profile.effects for add in eff.adds]
        best = _best(candidates)
        if not best.ok():
            return None
        degrees[f"effect:{pat.status_class}"] = best
    if query.required_inputs:
        for param in profile.inputs:
            best = _best([ontology.match_degree(supplied, param.type,
                                                strict=False)
                          for supplied in query.required_inputs])
            if not best.ok():
                return None
            degrees[f"input:{param.name}"] = best
    for attr, op, value in query.nonfunctional_filters:
        if not nf_passes(profile, attr, op, value, ontology):
            return None
    return ServiceMatch(profile, degrees, aggregate_score(degrees))


def discover(snapshot: RegistrySnapshot, ontology: OntologyStore,
             query: DiscoveryQuery) -> list[ServiceMatch]:
    query.validate()
    matches = []
    for profile in snapshot.profiles:
        m = _match_profile(profile, query, ontology)
        if m is not None:
            matches.append(m)
    matches.sort(key=lambda m: (tuple(-x for x in m.score), m.profile.id))
    if query.max_results is not None:
        matches = matches[:query.max_results]
    return matches


def producers_of(snapshot: RegistrySnapshot, ontology: OntologyStore,
                 target: Union[str, StatusPattern]) -> list[ServiceMatch]:
    """Services producing an output subsumed by target, or adding a status
    whose class is subsumed by target's class."""
    matches = []
    for profile in snapshot.profiles:
        if isinstance(target, StatusPattern):
            cands = [ontology.match_degree(add.status_class,
                                           target.status_class, strict=False)
                     for eff in profile.effects for add in eff.adds]
            label = f"effect:{target.status_class}"
        else:
            cands = [ontology.match_degree(p.type, target, strict=False)
                     for p in profile.outputs]
            label = f"output:{target}"
        best = _best(cands)
        if best.ok():
            degrees = {label: best}
            matches.append(ServiceMatch(profile, degrees,
                                        aggregate_score(degrees)))
    matches.sort(key=lambda m: (tuple(-x for x in m.score), m.profile.id))
    return matches


def successors_of(snapshot: RegistrySnapshot, ontology: OntologyStore,
                  service_id: str) -> list[ServiceMatch]:
    """Services invocable after service_id: an input fed by one of its
    outputs, or a precondition added by one of its effects.  Any non-Fail
    degree counts; weak (Subsume) links are reported with their degree so
    callers can filter."""
    source = snapshot.by_id(service_id)
    if source is None:
        raise UnknownServiceError(f"unknown service: {service_id}")
    out_types = [p.type for p in source.outputs]
    added = [a.status_class for eff in source.effects for a in eff.adds]
    matches = []
    for profile in snapshot.profiles:
        if profile.id == service_id:
            continue
        degrees: dict[str, MatchDegree] = {}
        for param in profile.inputs:
            cands = [ontology.match_degree(t, param.type, strict=False)
                     for t in out_types]
            cands = [d for d in cands if d.degree is not MatchKind.FAIL]
            if cands:
                best = min(cands, key=lambda d:
                           ({"Exact": 0, "Plugin": 1, "Subsume": 2}[d.degree.value],
                            d.distance or 0))
                degrees[f"input:{param.name}"] = best
        for pat in profile.preconditions:
            cands = [ontology.match_degree(c, pat.status_class, strict=False)
                     for c in added]
            cands = [d for d in cands if d.degree is not MatchKind.FAIL]
            if cands:
                best = min(cands, key=lambda d:
                           ({"Exact": 0, "Plugin": 1, "Subsume": 2}[d.degree.value],
                            d.distance or 0))
                degrees[f"precondition:{pat.status_class}"] = best
        if degrees:
            matches.append(ServiceMatch(profile, degrees,
                                        aggregate_score(degrees)))
    matches.sort(key=lambda m: (tuple(-x for x in m.score), m.profile.id))
    return matches
