"""Lightweight ontology store: triples, subsumption closures, match degrees.

Two ingestion formats are supported (documented in docs/formats.md):

* a line-oriented triple format, one ``<subject> <predicate> <object> .``
  statement per line, ``#`` comments, IRIs in angle brackets, literals in
  double quotes;
* a structured document (YAML or JSON) with top-level ``classes`` and
  ``properties`` lists.

The reasoning vocabulary is deliberately small: class and property
declarations, subClassOf, subPropertyOf, domain and range.  Every other
predicate is stored inert and reported once in a capability warning.
Closure computation (``classify``) is an explicit step so that loading and
reasoning can be timed separately.

Stores are immutable: ``load`` and ``classify`` return new stores with the
version counter advanced, so concurrent readers always hold a consistent
snapshot.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

import yaml

from .diagnostics import Diagnostic, Kind, warning

# Legacy parameter types every store knows about, usable without declaration.
PRIMITIVE_CLASSES = ("String", "Integer", "Boolean", "BusinessObject")

# Reasoning vocabulary, recognised by local name (the part after the last
# '#' or '/') so both bare names and namespaced IRIs work.
_PRED_TYPE = "type"
_PRED_SUBCLASS = "subClassOf"
_PRED_SUBPROP = "subPropertyOf"
_PRED_DOMAIN = "domain"
_PRED_RANGE = "range"
_CLASS_KEYWORDS = {"Class"}
_PROPERTY_KEYWORDS = {"Property", "ObjectProperty", "DatatypeProperty"}


class OntologyError(Exception):
    """Base class for ontology failures."""


class OntologyParseError(OntologyError):
    def __init__(self, message: str, line: int, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class DuplicateDeclarationError(OntologyError):
    """Same IRI declared as both a class and a property."""


class UnknownClassError(OntologyError):
    pass


class StaleClosureError(OntologyError):
    """The store was mutated after the last classify call."""


def local_name(iri: str) -> str:
    for sep in ("#", "/"):
        if sep in iri:
            iri = iri.rsplit(sep, 1)[1]
    return iri


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str
    object_is_literal: bool = False


@dataclass(frozen=True)
class PropertyDecl:
    iri: str
    domain: Optional[str] = None
    range: Optional[str] = None


class MatchKind(str, Enum):
    EXACT = "Exact"
    PLUGIN = "Plugin"      # provided strictly more specific than required
    SUBSUME = "Subsume"    # provided strictly more general (weak match)
    FAIL = "Fail"


@dataclass(frozen=True)
class MatchDegree:
    degree: MatchKind
    distance: Optional[int] = None  # asserted-edge count; None for Fail

    def ok(self) -> bool:
        return self.degree in (MatchKind.EXACT, MatchKind.PLUGIN)

    def to_dict(self) -> dict:
        return {"degree": self.degree.value, "distance": self.distance}


FAIL = MatchDegree(MatchKind.FAIL, None)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TERM_RE = re.compile(r'<([^<>\s]+)>|"((?:[^"\\]|\\.)*)"')
_ESCAPES = {"\\n": "\n", "\\t": "\t", '\\"': '"', "\\\\": "\\"}


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append(_ESCAPES.get(text[i:i + 2], text[i + 1]))
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def parse_triples(text: str) -> list[Triple]:
    """Parse the line-oriented triple format.

    Raises OntologyParseError with 1-based line/column on malformed input.
    """
    triples: list[Triple] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        terms: list[tuple[str, bool]] = []
        terminated = False
        pos = 0
        while pos < len(line):
            ch = line[pos]
            if ch.isspace():
                pos += 1
                continue
            if ch == "#":
                break
            if ch == ".":
                terminated = True
                pos += 1
                continue
            if terminated:
                raise OntologyParseError(
                    "unexpected content after '.'", lineno, pos + 1)
            m = _TERM_RE.match(line, pos)
            if not m:
                raise OntologyParseError(
                    "expected an IRI in angle brackets or a quoted literal",
                    lineno, pos + 1)
            if m.group(1) is not None:
                terms.append((m.group(1), False))
            else:
                terms.append((_unescape(m.group(2)), True))
            pos = m.end()
        if not terminated:
            raise OntologyParseError("statement must end with '.'",
                                     lineno, len(raw))
        if len(terms) != 3:
            raise OntologyParseError(
                f"expected 3 terms, found {len(terms)}", lineno, 1)
        (s, s_lit), (p, p_lit), (o, o_lit) = terms
        if s_lit or p_lit:
            raise OntologyParseError(
                "subject and predicate must be IRIs", lineno, 1)
        triples.append(Triple(s, p, o, object_is_literal=o_lit))
    return triples


def parse_structured(text: str) -> list[Triple]:
    """Parse the structured document format into equivalent triples."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = (mark.line + 1) if mark else 1
        col = (mark.column + 1) if mark else 0
        raise OntologyParseError(str(getattr(e, "problem", e)), line, col)
    if doc is None:
        return []
    if not isinstance(doc, dict):
        raise OntologyParseError("document root must be a mapping", 1)
    triples: list[Triple] = []
    for entry in doc.get("classes") or []:
        if not isinstance(entry, dict) or "iri" not in entry:
            raise OntologyParseError("class entries need an 'iri' key", 1)
        iri = str(entry["iri"])
        triples.append(Triple(iri, _PRED_TYPE, "Class"))
        for parent in entry.get("subclass_of") or []:
            triples.append(Triple(iri, _PRED_SUBCLASS, str(parent)))
    for entry in doc.get("properties") or []:
        if not isinstance(entry, dict) or "iri" not in entry:
            raise OntologyParseError("property entries need an 'iri' key", 1)
        iri = str(entry["iri"])
        triples.append(Triple(iri, _PRED_TYPE, "Property"))
        if entry.get("subproperty_of"):
            triples.append(Triple(iri, _PRED_SUBPROP,
                                  str(entry["subproperty_of"])))
        if entry.get("domain"):
            triples.append(Triple(iri, _PRED_DOMAIN, str(entry["domain"])))
        if entry.get("range"):
            triples.append(Triple(iri, _PRED_RANGE, str(entry["range"])))
    return triples


def sniff_format(text: str) -> str:
    """Guess 'triples' vs 'structured' from the first meaningful line."""
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        return "triples" if line.startswith("<") else "structured"
    return "triples"


# --------------------------------------------------------------------------
# Store
# --------------------------------------------------------------------------

class OntologyStore:
    """Triples plus precomputed subclass/subproperty closures.

    Instances are immutable; ``load`` and ``classify`` return new stores.
    ``version`` is a monotone counter advanced by every mutation, used by
    sessions for cache invalidation.
    """

    def __init__(self,
                 triples: frozenset[Triple] = frozenset(),
                 classes: frozenset[str] = frozenset(PRIMITIVE_CLASSES),
                 properties: Optional[Mapping[str, PropertyDecl]] = None,
                 subclass_edges: Optional[Mapping[str, frozenset[str]]] = None,
                 subprop_edges: Optional[Mapping[str, frozenset[str]]] = None,
                 version: int = 0,
                 classified: bool = False,
                 class_closure: Optional[dict[str, dict[str, int]]] = None,
                 prop_closure: Optional[dict[str, dict[str, int]]] = None):
        self.triples = triples
        self.classes = classes
        self.properties = dict(properties or {})
        self.subclass_edges = dict(subclass_edges or {})
        self.subprop_edges = dict(subprop_edges or {})
        self.version = version
        self.classified = classified
        self._class_closure = class_closure
        self._prop_closure = prop_closure

    # -- ingestion ---------------------------------------------------------

    def load(self, document: str, format: Optional[str] = None
             ) -> tuple["OntologyStore", list[Diagnostic]]:
        """Merge a document into the store; closures are NOT recomputed.

        Returns the new store and any capability warnings.  Raises on parse
        errors and on class/property declaration conflicts.
        """
        fmt = format or sniff_format(document)
        if fmt == "triples":
            new = parse_triples(document)
        elif fmt == "structured":
            new = parse_structured(document)
        else:
            raise ValueError(f"unknown ontology format: {fmt}")
        return self._merge(new)

    def _merge(self, new_triples: Iterable[Triple]
               ) -> tuple["OntologyStore", list[Diagnostic]]:
        diags: list[Diagnostic] = []
        classes = set(self.classes)
        properties = dict(self.properties)
        sub_c: dict[str, set[str]] = {k: set(v) for k, v in self.subclass_edges.items()}
        sub_p: dict[str, set[str]] = {k: set(v) for k, v in self.subprop_edges.items()}
        triples = set(self.triples)
        inert_preds: set[str] = set()

        def declare_class(iri: str):
            if iri in properties:
                raise DuplicateDeclarationError(
                    f"{iri} is declared as both a class and a property")
            classes.add(iri)

        def declare_property(iri: str):
            if iri in classes and iri not in PRIMITIVE_CLASSES:
                raise DuplicateDeclarationError(
                    f"{iri} is declared as both a class and a property")
            properties.setdefault(iri, PropertyDecl(iri))

        for t in new_triples:
            triples.add(t)
            pred = local_name(t.predicate)
            if pred == _PRED_TYPE and not t.object_is_literal:
                kw = local_name(t.object)
                if kw in _CLASS_KEYWORDS:
                    declare_class(t.subject)
                elif kw in _PROPERTY_KEYWORDS:
                    declare_property(t.subject)
                else:
                    inert_preds.add(t.predicate)
            elif pred == _PRED_SUBCLASS and not t.object_is_literal:
                declare_class(t.subject)
                declare_class(t.object)
                sub_c.setdefault(t.subject, set()).add(t.object)
            elif pred == _PRED_SUBPROP and not t.object_is_literal:
                declare_property(t.subject)
                declare_property(t.object)
                sub_p.setdefault(t.subject, set()).add(t.object)
            elif pred == _PRED_DOMAIN and not t.object_is_literal:
                declare_property(t.subject)
                declare_class(t.object)
                old = properties[t.subject]
                properties[t.subject] = PropertyDecl(old.iri, t.object, old.range)
            elif pred == _PRED_RANGE and not t.object_is_literal:
                declare_property(t.subject)
                declare_class(t.object)
                old = properties[t.subject]
                properties[t.subject] = PropertyDecl(old.iri, old.domain, t.object)
            else:
                inert_preds.add(t.predicate)

        for pred in sorted(inert_preds):
            diags.append(warning(
                Kind.INERT_CONSTRUCT, pred,
                f"predicate '{pred}' is outside the reasoning vocabulary; "
                "its triples are stored but never reasoned over"))
        store = OntologyStore(
            triples=frozenset(triples),
            classes=frozenset(classes),
            properties=properties,
            subclass_edges={k: frozenset(v) for k, v in sub_c.items()},
            subprop_edges={k: frozenset(v) for k, v in sub_p.items()},
            version=self.version + 1,
            classified=False,
        )
        return store, diags

    # -- classification ----------------------------------------------------

    def classify(self) -> tuple["OntologyStore", list[Diagnostic]]:
        """Compute reflexive-transitive closures over asserted edges.

        Cycles among distinct classes are tolerated: classes on a cycle
        mutually subsume, and a warning diagnostic is recorded.  Idempotent
        on the relations.
        """
        diags: list[Diagnostic] = []
        class_closure = _closure(self.classes, self.subclass_edges)
        prop_closure = _closure(frozenset(self.properties), self.subprop_edges)
        cyclic = sorted(
            c for c, anc in class_closure.items()
            if any(a != c and c in class_closure.get(a, {}) for a in anc))
        if cyclic:
            diags.append(warning(
                Kind.SUBSUMPTION_CYCLE, cyclic[0],
                "subclass cycle detected; classes on the cycle mutually "
                "subsume: " + ", ".join(cyclic)))
        store = OntologyStore(
            triples=self.triples,
            classes=self.classes,
            properties=self.properties,
            subclass_edges=self.subclass_edges,
            subprop_edges=self.subprop_edges,
            version=self.version + 1,
            classified=True,
            class_closure=class_closure,
            prop_closure=prop_closure,
        )
        return store, diags

    # -- queries -----------------------------------------------------------

    def knows_class(self, iri: str) -> bool:
        return iri in self.classes

    def _check_query(self, *iris: str):
        if not self.classified:
            raise StaleClosureError(
                "classify() has not run since the last mutation")
        for iri in iris:
            if iri not in self.classes:
                raise UnknownClassError(f"unknown class: {iri}")

    def ancestors(self, iri: str) -> dict[str, int]:
        """All classes subsuming iri (including itself), with distances."""
        self._check_query(iri)
        return self._class_closure[iri]

    def subsumes(self, general: str, specific: str) -> bool:
        """True iff specific is a (reflexive, transitive) subclass of general."""
        self._check_query(general, specific)
        return general in self._class_closure[specific]

    def subsumes_property(self, general: str, specific: str) -> bool:
        if not self.classified:
            raise StaleClosureError(
                "classify() has not run since the last mutation")
        if specific not in self.properties or general not in self.properties:
            raise UnknownClassError(f"unknown property: {specific!r}/{general!r}")
        return general in self._prop_closure[specific]

    def match_degree(self, provided: str, required: str,
                     strict: bool = True) -> MatchDegree:
        """Rank how well a provided class satisfies a required class.

        Exact: identical.  Plugin: provided strictly more specific (safe).
        Subsume: provided strictly more general (suggestion-only).  Fail
        otherwise.  With strict=False, unknown classes yield Fail instead
        of raising, so matching degrades gracefully on partial annotations.
        """
        if not strict and (provided not in self.classes
                           or required not in self.classes):
            return FAIL
        self._check_query(provided, required)
        if provided == required:
            return MatchDegree(MatchKind.EXACT, 0)
        up = self._class_closure[provided]
        if required in up:
            return MatchDegree(MatchKind.PLUGIN, up[required])
        down = self._class_closure[required]
        if provided in down:
            return MatchDegree(MatchKind.SUBSUME, down[provided])
        return FAIL

    def subclass_chain(self, specific: str, general: str) -> list[str]:
        """A shortest asserted-edge path from specific up to general."""
        self._check_query(specific, general)
        if general not in self._class_closure[specific]:
            raise UnknownClassError(
                f"{general} does not subsume {specific}")
        # BFS with parent tracking; ties broken lexicographically for
        # deterministic justifications.
        prev: dict[str, Optional[str]] = {specific: None}
        queue = deque([specific])
        while queue:
            node = queue.popleft()
            if node == general:
                break
            for parent in sorted(self.subclass_edges.get(node, ())):
                if parent not in prev:
                    prev[parent] = node
                    queue.append(parent)
        chain = [general]
        while prev.get(chain[-1]) is not None:
            chain.append(prev[chain[-1]])
        chain.reverse()
        return chain

    def summary(self) -> dict:
        return {
            "version": self.version,
            "classified": self.classified,
            "triples": len(self.triples),
            "classes": len(self.classes),
            "properties": len(self.properties),
        }


def _closure(nodes: frozenset[str], edges: Mapping[str, frozenset[str]]
             ) -> dict[str, dict[str, int]]:
    """Reflexive-transitive ancestor sets with shortest edge distances.

    Per-node BFS over the asserted parent edges; handles cycles naturally.
    """
    closure: dict[str, dict[str, int]] = {}
    for node in nodes:
        dist = {node: 0}
        queue = deque([node])
        while queue:
            cur = queue.popleft()
            d = dist[cur]
            for parent in edges.get(cur, ()):
                if parent not in dist:
                    dist[parent] = d + 1
                    queue.append(parent)
        closure[node] = dist
    return closure
