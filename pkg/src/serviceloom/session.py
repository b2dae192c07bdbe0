"""Sessions, the engine facade, and the meta-control request dispatcher.

Each session owns a working context: the abstract request, the partial
composite process, cached partial planner results keyed by an exact basis
(registry version, ontology version, request hash), pending suggestions,
and an append-only history of applied process deltas.  Replaying the
history from an empty process reproduces the current process exactly;
Undo pops the last delta and replays.

Cache invalidation is coarse on purpose: a cached plan graph is reused
only on an exact basis match and silently dropped otherwise, so no session
ever serves plans computed against stale registry or ontology state.

Sessions persist to disk (one canonical JSON file each) whenever a
workspace directory is configured, so a service restart does not lose
user work.
"""

from __future__ import annotations

import itertools
import json
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import assist
from .assist import (StaleSuggestionError, Suggestion, apply_suggestion,
                     check_fresh, dangling_removals)
from .diagnostics import Diagnostic, Kind, error, warning
from .ontology import OntologyStore
from .planner import (AbstractRequest, ExtractionToken, Plan, PlanGraph,
                      PlannerError, build_graph, extract_plans,
                      plan_to_process)
from .process import (PROVENANCE_USER, CompositeProcess, Consolidation,
                      Construct, ProcessError, Step, empty_process)
from .profiles import ServiceProfile, StatusPattern, parse_profiles
from .registry import DiscoveryQuery, Registry, ServiceMatch
from .semantics import AvailProp

VERBS = ("Discover", "Producers", "Successors", "SuggestConsolidations",
         "CompleteDataflow", "VerifyDataflow", "SuggestOrderings",
         "VerifyControlflow", "DetectConflicts", "SuggestInsertions",
         "Plan", "Relax", "ApplySuggestion", "Undo", "EditProcess")


class SessionError(Exception):
    pass


class UnknownSessionError(SessionError):
    pass


@dataclass
class MixedInitiativeRequest:
    verb: str
    arguments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verb not in VERBS:
            raise SessionError(f"unknown verb: {self.verb!r}")

    @staticmethod
    def from_dict(d: dict) -> "MixedInitiativeRequest":
        return MixedInitiativeRequest(verb=str(d.get("verb")),
                                      arguments=d.get("arguments") or {})


@dataclass
class PlanCache:
    basis: tuple
    graph: PlanGraph
    token: ExtractionToken


@dataclass
class WorkingContext:
    session_id: str
    request: Optional[AbstractRequest] = None
    process: CompositeProcess = field(default_factory=empty_process)
    cache: Optional[PlanCache] = None
    pending: list[Suggestion] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    # Set when restoring from disk: number of plans already handed out,
    # used to fast-forward a rebuilt enumeration.
    restored_emitted: int = 0

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "request": self.request.to_dict() if self.request else None,
            "process": self.process.to_dict(),
            "pending": [s.to_dict() for s in self.pending],
            "history": self.history,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
            "plans_emitted": (self.cache.token.emitted if self.cache
                              else self.restored_emitted),
        }

    @staticmethod
    def from_dict(d: dict) -> "WorkingContext":
        ctx = WorkingContext(session_id=str(d["session_id"]))
        if d.get("request"):
            ctx.request = AbstractRequest.from_dict(d["request"])
        ctx.process = CompositeProcess.from_dict(d.get("process") or {})
        ctx.pending = [Suggestion.from_dict(s) for s in d.get("pending") or []]
        ctx.history = list(d.get("history") or [])
        ctx.diagnostics = [Diagnostic.from_dict(x)
                           for x in d.get("diagnostics") or []]
        ctx.restored_emitted = int(d.get("plans_emitted") or 0)
        return ctx


# --------------------------------------------------------------------------
# Primitive process edits (history entries replay through these)
# --------------------------------------------------------------------------

def apply_edit(process: CompositeProcess, edit: dict) -> CompositeProcess:
    proc = process.clone()
    op = edit.get("op")
    if op == "add_step":
        sid = str(edit["id"])
        if sid in proc.steps:
            raise ProcessError(f"step {sid} already exists")
        proc.steps[sid] = Step(id=sid, service=str(edit["service"]),
                               outcome=edit.get("outcome"),
                               provenance=edit.get("provenance",
                                                   PROVENANCE_USER))
        proc.control.children.append(sid)
    elif op == "remove_step":
        assist._remove_step(proc, str(edit["id"]))
    elif op == "set_outcome":
        sid = str(edit["id"])
        if sid not in proc.steps:
            raise ProcessError(f"unknown step: {sid}")
        proc.steps[sid].outcome = edit.get("outcome")
    elif op == "add_consolidation":
        proc.consolidations.append(Consolidation(
            producer=str(edit["producer"]), output=str(edit["output"]),
            consumer=str(edit["consumer"]), input=str(edit["input"]),
            provenance=edit.get("provenance", PROVENANCE_USER)))
    elif op == "remove_consolidation":
        key = (str(edit["producer"]), str(edit["output"]),
               str(edit["consumer"]), str(edit["input"]))
        before = len(proc.consolidations)
        proc.consolidations = [c for c in proc.consolidations
                               if c.key() != key]
        if len(proc.consolidations) == before:
            raise ProcessError(f"no consolidation {key}")
    elif op == "set_control":
        proc.control = Construct.from_dict(edit["control"])
    elif op == "adopt_process":
        return CompositeProcess.from_dict(edit["process"])
    else:
        raise ProcessError(f"unknown edit op: {op!r}")
    proc.validate()
    return proc


def replay_history(history: list[dict]) -> CompositeProcess:
    proc = empty_process()
    for entry in history:
        if entry["type"] == "edits":
            for edit in entry["edits"]:
                proc = apply_edit(proc, edit)
        elif entry["type"] == "suggestion":
            proc = apply_suggestion(
                proc, _unstale(Suggestion.from_dict(entry["suggestion"])))
        else:
            raise SessionError(f"unknown history entry: {entry['type']!r}")
    return proc


def _unstale(s: Suggestion) -> Suggestion:
    # History replay re-applies suggestions that were fresh when logged.
    s.basis_hash = ""
    s.target = "replayed"
    return s


# --------------------------------------------------------------------------
# Engine
# --------------------------------------------------------------------------

class Engine:
    """Owns the ontology store, the registry and all sessions.

    Per-session operations are serialized by the caller (one writer per
    session); registry and ontology reads always go through immutable
    snapshots taken at dispatch time.
    """

    def __init__(self, workspace: Optional[Path] = None):
        self.ontology = OntologyStore()
        self.registry = Registry()
        self.sessions: dict[str, WorkingContext] = {}
        self.workspace = Path(workspace) if workspace else None
        if self.workspace:
            (self.workspace / "sessions").mkdir(parents=True, exist_ok=True)

    # -- ontology and registry lifecycle ---------------------------------

    def load_ontology(self, document: str,
                      format: Optional[str] = None) -> list[Diagnostic]:
        self.ontology, diags = self.ontology.load(document, format)
        return diags

    def classify(self) -> list[Diagnostic]:
        self.ontology, diags = self.ontology.classify()
        return diags

    def register_service(self, profile: ServiceProfile) -> list[Diagnostic]:
        return self.registry.register(profile, self.ontology)

    def register_document(self, text: str) -> dict[str, list[Diagnostic]]:
        out = {}
        for profile in parse_profiles(text):
            out[profile.id] = self.register_service(profile)
        return out

    def deregister_service(self, service_id: str):
        self.registry.deregister(service_id)
        snapshot = self.registry.snapshot()
        for ctx in self.sessions.values():
            dangling = [sid for sid in ctx.process.step_ids()
                        if ctx.process.steps[sid].service == service_id]
            for sid in dangling:
                ctx.diagnostics.append(error(
                    Kind.DANGLING_STEP, sid,
                    f"service '{service_id}' used by step {sid} was "
                    "deregistered"))
            if dangling:
                ctx.pending.extend(dangling_removals(ctx.process, snapshot))
                self._persist(ctx)

    # -- sessions ----------------------------------------------------------

    def create_session(self) -> str:
        sid = uuid.uuid4().hex[:12]
        while sid in self.sessions:
            sid = uuid.uuid4().hex[:12]
        self.sessions[sid] = WorkingContext(session_id=sid)
        self._persist(self.sessions[sid])
        return sid

    def session(self, session_id: str) -> WorkingContext:
        if session_id not in self.sessions:
            if self.workspace:
                path = self.workspace / "sessions" / f"{session_id}.json"
                if path.exists():
                    ctx = WorkingContext.from_dict(
                        json.loads(path.read_text()))
                    self.sessions[session_id] = ctx
                    return ctx
            raise UnknownSessionError(f"unknown session: {session_id}")
        return self.sessions[session_id]

    def set_request(self, session_id: str,
                    request: AbstractRequest) -> list[Diagnostic]:
        ctx = self.session(session_id)
        request.validate()
        diags = []
        for cls in itertools.chain(request.available_inputs,
                                   request.goal_outputs):
            if not self.ontology.knows_class(cls):
                diags.append(warning(
                    Kind.UNRESOLVED_REF, cls,
                    f"request references undeclared class '{cls}'"))
        new_hash = request.content_hash()
        if ctx.cache and ctx.cache.basis[2] != new_hash:
            ctx.cache = None  # housekeeping: request changed
        if ctx.cache is None:
            ctx.restored_emitted = 0
        ctx.request = request
        self._persist(ctx)
        return diags

    def _persist(self, ctx: WorkingContext):
        if self.workspace:
            path = self.workspace / "sessions" / f"{ctx.session_id}.json"
            path.write_text(json.dumps(ctx.to_dict(), sort_keys=True,
                                       indent=1) + "\n")

    # -- cache -------------------------------------------------------------

    def _current_basis(self, ctx: WorkingContext) -> tuple:
        return (self.registry.version, self.ontology.version,
                ctx.request.content_hash() if ctx.request else None)

    def _plan_cache(self, ctx: WorkingContext) -> PlanCache:
        if ctx.request is None:
            raise SessionError("no request set; call set_request first")
        basis = self._current_basis(ctx)
        if ctx.cache is not None and ctx.cache.basis == basis:
            return ctx.cache
        graph = build_graph(ctx.request, self.registry.snapshot(),
                            self.ontology)
        token = ExtractionToken(graph)
        cache = PlanCache(basis=basis, graph=graph, token=token)
        if ctx.restored_emitted:
            # A restored session already handed out plans; fast-forward the
            # fresh enumeration so the continuation picks up where it left.
            extract_plans(graph, ctx.request, ctx.restored_emitted, token)
            ctx.restored_emitted = 0
        ctx.cache = cache
        return cache

    # -- dispatch ------------------------------------------------------------

    def invoke(self, session_id: str, req: MixedInitiativeRequest) -> dict:
        ctx = self.session(session_id)
        args = req.arguments
        snapshot = self.registry.snapshot()
        ontology = self.ontology
        verb = req.verb

        if verb == "Discover":
            query = DiscoveryQuery.from_dict(args.get("query") or args)
            matches = self.registry.discover(query, ontology)
            return {"matches": [m.to_dict() for m in matches]}

        if verb == "Producers":
            target = args.get("target")
            if isinstance(target, dict):
                target = StatusPattern.from_dict(target)
            matches = self.registry.producers_of(target, ontology)
            return {"matches": [m.to_dict() for m in matches]}

        if verb == "Successors":
            matches = self.registry.successors_of(str(args["service"]),
                                                  ontology)
            return {"matches": [m.to_dict() for m in matches]}

        if verb == "SuggestConsolidations":
            suggestions = assist.suggest_consolidations(
                ctx.process, str(args["producer"]), str(args["consumer"]),
                snapshot, ontology)
            self._stash(ctx, suggestions)
            return {"suggestions": [s.to_dict() for s in suggestions]}

        if verb == "CompleteDataflow":
            proc, suggestions = assist.complete_dataflow(
                ctx.process, snapshot, ontology)
            applied = [s for s in suggestions if s.applied]
            if applied:
                ctx.history.append({
                    "type": "edits",
                    "edits": [{"op": "add_consolidation",
                               "producer": s.payload["producer"],
                               "output": s.payload["output"],
                               "consumer": s.payload["consumer"],
                               "input": s.payload["input"],
                               "provenance": "auto-completed"}
                              for s in applied]})
                ctx.process = proc
            self._stash(ctx, [s for s in suggestions if not s.applied])
            self._persist(ctx)
            return {"suggestions": [s.to_dict() for s in suggestions],
                    "applied": len(applied)}

        if verb == "VerifyDataflow":
            diags = assist.verify_dataflow(ctx.process, snapshot, ontology,
                                           ctx.request)
            return {"diagnostics": [d.to_dict() for d in diags]}

        if verb == "SuggestOrderings":
            suggestions = assist.suggest_orderings(ctx.process, snapshot,
                                                   ontology)
            self._stash(ctx, suggestions)
            return {"suggestions": [s.to_dict() for s in suggestions]}

        if verb == "VerifyControlflow":
            if ctx.request is None:
                raise SessionError("no request set; call set_request first")
            diags = assist.verify_controlflow(ctx.process, ctx.request,
                                              snapshot, ontology)
            return {"diagnostics": [d.to_dict() for d in diags]}

        if verb == "DetectConflicts":
            diags, suggestions = assist.detect_conflicts(
                ctx.process, str(args["candidate"]),
                args.get("position"), snapshot, ontology)
            self._stash(ctx, suggestions)
            return {"diagnostics": [d.to_dict() for d in diags],
                    "suggestions": [s.to_dict() for s in suggestions]}

        if verb == "SuggestInsertions":
            if ctx.request is None:
                raise SessionError("no request set; call set_request first")
            suggestions = assist.suggest_insertions(
                ctx.process, ctx.request, snapshot, ontology)
            self._stash(ctx, suggestions)
            return {"suggestions": [s.to_dict() for s in suggestions]}

        if verb == "Plan":
            k = int(args.get("k", ctx.request.max_plans if ctx.request else 1))
            cache = self._plan_cache(ctx)
            plans, token = extract_plans(cache.graph, ctx.request, k,
                                         cache.token)
            self._persist(ctx)
            return {
                "plans": [p.to_dict() for p in plans],
                "token": token.summary(),
                "exhausted": token.exhausted,
                "graph": cache.graph.stats(),
                "processes": [
                    plan_to_process(p, snapshot, ontology).to_dict()
                    for p in plans],
            }

        if verb == "Relax":
            cache = self._plan_cache(ctx)
            graph = cache.graph
            while not (graph.leveled_off or graph.horizon_hit
                       or graph.goals_reachable()):
                graph.expand_level()
            suggestions = assist.suggest_relaxations(ctx.request, graph)
            self._stash(ctx, suggestions)
            return {"suggestions": [s.to_dict() for s in suggestions]}

        if verb == "ApplySuggestion":
            return self._apply_pending(ctx, str(args["suggestion"]))

        if verb == "Undo":
            if not ctx.history:
                raise SessionError("history is empty; nothing to undo")
            entry = ctx.history.pop()
            try:
                ctx.process = replay_history(ctx.history)
            except Exception:
                ctx.history.append(entry)
                raise
            self._persist(ctx)
            return {"process": ctx.process.to_dict(),
                    "undone": entry["type"]}

        if verb == "EditProcess":
            edits = args.get("edits") or []
            proc = ctx.process
            for edit in edits:
                proc = apply_edit(proc, edit)
            ctx.process = proc
            ctx.history.append({"type": "edits", "edits": edits})
            self._persist(ctx)
            return {"process": ctx.process.to_dict()}

        raise SessionError(f"unhandled verb: {verb}")

    def _stash(self, ctx: WorkingContext, suggestions: list[Suggestion]):
        known = {s.id for s in ctx.pending}
        for s in suggestions:
            if not s.applied and s.id not in known:
                ctx.pending.append(s)
        self._persist(ctx)

    def _apply_pending(self, ctx: WorkingContext, suggestion_id: str) -> dict:
        match = next((s for s in ctx.pending if s.id == suggestion_id), None)
        if match is None:
            raise SessionError(f"no pending suggestion '{suggestion_id}'")
        if match.kind == assist.KIND_RELAXATION:
            if ctx.request is None:
                raise SessionError("no request to relax")
            if match.basis_hash != ctx.request.content_hash():
                raise StaleSuggestionError(
                    "the request changed since this relaxation was computed")
            ctx.request = _apply_relaxation(ctx.request, match)
            ctx.cache = None
            ctx.pending = [s for s in ctx.pending if s.id != suggestion_id]
            self._persist(ctx)
            return {"request": ctx.request.to_dict()}
        new_proc = apply_suggestion(ctx.process, match,
                                    self.registry.snapshot())
        ctx.process = new_proc
        ctx.history.append({"type": "suggestion",
                            "suggestion": match.to_dict()})
        ctx.pending = [s for s in ctx.pending if s.id != suggestion_id]
        self._persist(ctx)
        return {"process": ctx.process.to_dict()}


def _apply_relaxation(request: AbstractRequest,
                      s: Suggestion) -> AbstractRequest:
    d = request.to_dict()
    p = s.payload
    if p["action"] == "generalize_goal":
        d["goal_outputs"] = [p["to"] if g == p["goal"] else g
                             for g in d["goal_outputs"]]
    elif p["action"] == "drop_goal":
        if p.get("goal_kind") == "status":
            d["goal_statuses"] = [g for g in d["goal_statuses"]
                                  if g["class"] != p["goal"]]
        else:
            d["goal_outputs"] = [g for g in d["goal_outputs"]
                                 if g != p["goal"]]
    elif p["action"] == "add_input":
        if p["type"] not in d["available_inputs"]:
            d["available_inputs"] = d["available_inputs"] + [p["type"]]
    else:
        raise SessionError(f"unknown relaxation action: {p['action']!r}")
    return AbstractRequest.from_dict(d)


# --------------------------------------------------------------------------
# Export / import
# --------------------------------------------------------------------------

def net_signature(process: CompositeProcess, snapshot) -> tuple[list, list]:
    """Unbound inputs and internally unconsumed outputs of the composite."""
    inputs = []
    for sid in process.step_ids():
        profile = snapshot.by_id(process.steps[sid].service)
        if profile is None:
            continue
        for p in profile.inputs:
            if process.consolidation_for(sid, p.name) is None:
                inputs.append({"name": f"{sid}.{p.name}", "type": p.type})
    consumed = {(c.producer, c.output) for c in process.consolidations}
    outputs = []
    for sid in process.step_ids():
        profile = snapshot.by_id(process.steps[sid].service)
        if profile is None:
            continue
        for p in profile.outputs:
            if (sid, p.name) not in consumed:
                outputs.append({"name": f"{sid}.{p.name}", "type": p.type})
    return inputs, outputs


def export_process(engine: Engine, session_id: str, format: str) -> str:
    """Deterministic serialization of a session's process.

    profile-bundle: a registrable profile exposing the composite's net
    inputs/outputs plus the full process model; round-trips through
    import_process.  plan-report: a human-readable summary.
    """
    ctx = engine.session(session_id)
    if format == "profile-bundle":
        if not ctx.process.steps:
            raise SessionError("process is empty; nothing to export")
        snapshot = engine.registry.snapshot()
        inputs, outputs = net_signature(ctx.process, snapshot)
        doc = {
            "profile": {
                "id": f"composite-{session_id}",
                "name": f"Composite process from session {session_id}",
                "inputs": inputs,
                "outputs": outputs,
            },
            "process": ctx.process.to_dict(),
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if format == "plan-report":
        lines = [f"# Session {session_id}"]
        if ctx.request:
            lines.append("goal outputs: "
                         + ", ".join(ctx.request.goal_outputs))
        lines.append(f"steps: {len(ctx.process.steps)}")
        for sid in ctx.process.step_ids():
            step = ctx.process.steps[sid]
            outcome = f" [{step.outcome}]" if step.outcome else ""
            lines.append(f"  {sid}: {step.service}{outcome}"
                         f" ({step.provenance})")
        lines.append(f"consolidations: {len(ctx.process.consolidations)}")
        for c in sorted(ctx.process.consolidations, key=lambda c: c.key()):
            lines.append(f"  {c.producer}.{c.output} -> "
                         f"{c.consumer}.{c.input}")
        return "\n".join(lines) + "\n"
    raise SessionError(f"unknown export format: {format!r}")


def import_process(document: str) -> CompositeProcess:
    doc = json.loads(document)
    return CompositeProcess.from_dict(doc["process"])
