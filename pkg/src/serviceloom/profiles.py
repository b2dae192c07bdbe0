"""Composable-element profiles: typed parameters, status patterns, effects.

A profile annotates a service with inputs, outputs, conjunctive status
preconditions and one or more mutually exclusive conditional effects, plus
an open typed key-value map of non-functional attributes.  Profiles are
frozen; the registry hands out snapshots that share them safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import yaml

from .ontology import OntologyStore
from .diagnostics import Diagnostic, Kind, warning

NonFunctionalValue = Union[str, int, float]


class ProfileError(Exception):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    type: str  # ClassRef


@dataclass(frozen=True)
class StatusPattern:
    """A class-typed world fact with design-time property bindings.

    Binding targets are parameter names of the owning profile, or literals.
    In abstract requests (which own no parameters) targets may also be
    class IRIs, taken as type descriptors.
    """
    status_class: str
    bindings: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bindings",
                           tuple(sorted(self.bindings)))

    @staticmethod
    def make(status_class: str, bindings: Optional[dict] = None) -> "StatusPattern":
        return StatusPattern(status_class,
                             tuple(sorted((bindings or {}).items())))

    def to_dict(self) -> dict:
        d: dict = {"class": self.status_class}
        if self.bindings:
            d["bindings"] = dict(self.bindings)
        return d

    @staticmethod
    def from_dict(d: dict) -> "StatusPattern":
        if "class" not in d:
            raise ProfileError("status pattern needs a 'class' key")
        return StatusPattern.make(str(d["class"]), d.get("bindings") or {})


@dataclass(frozen=True)
class ConditionalEffect:
    """One mutually exclusive outcome: status assertions and deletions."""
    label: str
    adds: tuple[StatusPattern, ...] = ()
    deletes: tuple[StatusPattern, ...] = ()

    def __post_init__(self):
        overlap = set(self.adds) & set(self.deletes)
        if overlap:
            raise ProfileError(
                f"effect '{self.label}' both adds and deletes "
                f"{sorted(p.status_class for p in overlap)}")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "adds": [p.to_dict() for p in self.adds],
            "deletes": [p.to_dict() for p in self.deletes],
        }


DEFAULT_EFFECT_LABEL = "effect"


@dataclass(frozen=True)
class ServiceProfile:
    id: str
    name: str
    inputs: tuple[Param, ...] = ()
    outputs: tuple[Param, ...] = ()
    preconditions: tuple[StatusPattern, ...] = ()  # conjunctive
    effects: tuple[ConditionalEffect, ...] = (
        ConditionalEffect(DEFAULT_EFFECT_LABEL),)
    nonfunctional: tuple[tuple[str, NonFunctionalValue], ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ProfileError("profile id must be non-empty")
        if not self.effects:
            raise ProfileError(f"profile '{self.id}' needs at least one effect")
        for side, params in (("input", self.inputs), ("output", self.outputs)):
            names = [p.name for p in params]
            if len(names) != len(set(names)):
                raise ProfileError(
                    f"profile '{self.id}' has duplicate {side} names")
        labels = [e.label for e in self.effects]
        if len(labels) != len(set(labels)):
            raise ProfileError(
                f"profile '{self.id}' has duplicate effect labels")

    @property
    def nonfunctional_map(self) -> dict[str, NonFunctionalValue]:
        return dict(self.nonfunctional)

    def param(self, name: str) -> Optional[Param]:
        for p in self.inputs + self.outputs:
            if p.name == name:
                return p
        return None

    def effect(self, label: str) -> ConditionalEffect:
        for e in self.effects:
            if e.label == label:
                return e
        raise ProfileError(f"profile '{self.id}' has no effect '{label}'")

    # -- document format -----------------------------------------------

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "inputs": [{"name": p.name, "type": p.type} for p in self.inputs],
            "outputs": [{"name": p.name, "type": p.type} for p in self.outputs],
            "preconditions": [p.to_dict() for p in self.preconditions],
            "effects": [e.to_dict() for e in self.effects],
            "nonfunctional": dict(self.nonfunctional),
        }

    @staticmethod
    def from_dict(d: dict) -> "ServiceProfile":
        if "id" not in d:
            raise ProfileError("profile document needs an 'id' key")

        def params(key: str) -> tuple[Param, ...]:
            out = []
            for entry in d.get(key) or []:
                if "name" not in entry or "type" not in entry:
                    raise ProfileError(
                        f"{key} entries need 'name' and 'type' keys")
                out.append(Param(str(entry["name"]), str(entry["type"])))
            return tuple(out)

        effects = []
        for entry in d.get("effects") or []:
            effects.append(ConditionalEffect(
                label=str(entry.get("label", DEFAULT_EFFECT_LABEL)),
                adds=tuple(StatusPattern.from_dict(p)
                           for p in entry.get("adds") or []),
                deletes=tuple(StatusPattern.from_dict(p)
                              for p in entry.get("deletes") or []),
            ))
        if not effects:
            # A service with no declared outcomes still has one (empty) one.
            effects = [ConditionalEffect(DEFAULT_EFFECT_LABEL)]
        nf = tuple(sorted((str(k), v) for k, v in
                          (d.get("nonfunctional") or {}).items()))
        return ServiceProfile(
            id=str(d["id"]),
            name=str(d.get("name", d["id"])),
            inputs=params("inputs"),
            outputs=params("outputs"),
            preconditions=tuple(StatusPattern.from_dict(p)
                                for p in d.get("preconditions") or []),
            effects=tuple(effects),
            nonfunctional=nf,
        )


def parse_profiles(text: str) -> list[ServiceProfile]:
    """Parse a profile document: one profile, or a bundle with 'services'."""
    doc = yaml.safe_load(text)
    if doc is None:
        return []
    if isinstance(doc, dict) and "services" in doc:
        return [ServiceProfile.from_dict(entry) for entry in doc["services"]]
    if isinstance(doc, dict):
        return [ServiceProfile.from_dict(doc)]
    raise ProfileError("profile document must be a mapping")


def annotation_warnings(profile: ServiceProfile,
                        ontology: OntologyStore) -> list[Diagnostic]:
    """Unresolved references degrade to warnings, never rejections."""
    diags: list[Diagnostic] = []
    seen: set[str] = set()

    def check_class(iri: str, where: str):
        if iri not in seen and not ontology.knows_class(iri):
            seen.add(iri)
            diags.append(warning(
                Kind.UNRESOLVED_REF, f"{profile.id}:{where}",
                f"class '{iri}' is not declared in any loaded ontology"))

    for p in profile.inputs:
        check_class(p.type, f"input.{p.name}")
    for p in profile.outputs:
        check_class(p.type, f"output.{p.name}")

    def check_pattern(pat: StatusPattern, where: str):
        check_class(pat.status_class, where)
        for prop, _target in pat.bindings:
            if prop not in ontology.properties and prop not in seen:
                seen.add(prop)
                diags.append(warning(
                    Kind.UNRESOLVED_REF, f"{profile.id}:{where}",
                    f"property '{prop}' is not declared"))

    for i, pat in enumerate(profile.preconditions):
        check_pattern(pat, f"precondition[{i}]")
    for eff in profile.effects:
        for i, pat in enumerate(eff.adds):
            check_pattern(pat, f"effect.{eff.label}.adds[{i}]")
        for i, pat in enumerate(eff.deletes):
            check_pattern(pat, f"effect.{eff.label}.deletes[{i}]")
    return diags
