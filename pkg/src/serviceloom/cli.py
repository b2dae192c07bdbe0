"""Command-line front end.

State lives in a workspace directory (flag --workspace or the
SERVICELOOM_WORKSPACE environment variable, default ./loom-workspace):
loaded ontology documents, registered profiles and sessions are kept as
plain files so runs stay inspectable and diffable between invocations.

Exit codes: 0 success, 1 diagnostics with errors, 2 usage or parse
failure.  Diagnostics go to stderr, results to stdout; every subcommand
takes --json for machine-readable output that round-trips through the
documented schemas.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .bench import BenchConfig, run_benchmark, write_report
from .diagnostics import Diagnostic, Severity
from .ontology import OntologyError, OntologyParseError
from .planner import AbstractRequest, PlannerError
from .process import CompositeProcess, ProcessError
from .profiles import ProfileError, parse_profiles
from .registry import DiscoveryQuery, RegistryError
from .session import (Engine, MixedInitiativeRequest, SessionError,
                      export_process, import_process)

_ENGINE_ERRORS = (OntologyError, PlannerError, ProcessError, ProfileError,
                  RegistryError, SessionError)


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _emit_diags(diags: list[Diagnostic], as_json: bool) -> bool:
    """Print diagnostics to stderr; returns True if any are errors."""
    err = False
    for d in diags:
        if as_json:
            click.echo(json.dumps(d.to_dict(), sort_keys=True), err=True)
        else:
            click.echo(f"{d.severity.value}: [{d.kind.value}] {d.location}: "
                       f"{d.explanation}", err=True)
        err = err or d.severity is Severity.ERROR
    return err


class Workspace:
    """Plain-file persistence between CLI invocations."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def _state(self) -> dict:
        path = self.root / "state.json"
        if path.exists():
            return json.loads(path.read_text())
        return {"classified": False}

    def _save_state(self, state: dict):
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "state.json").write_text(
            json.dumps(state, sort_keys=True, indent=1) + "\n")

    def load_engine(self) -> Engine:
        engine = Engine(workspace=self.root)
        onto_dir = self.root / "ontology"
        if onto_dir.is_dir():
            for path in sorted(onto_dir.iterdir()):
                engine.load_ontology(path.read_text())
        if self._state().get("classified"):
            engine.classify()
        prof_dir = self.root / "profiles"
        if prof_dir.is_dir():
            for path in sorted(prof_dir.iterdir()):
                engine.register_document(path.read_text())
        return engine

    def add_ontology(self, text: str, label: str):
        onto_dir = self.root / "ontology"
        onto_dir.mkdir(parents=True, exist_ok=True)
        n = len(list(onto_dir.iterdir()))
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in label)
        (onto_dir / f"{n:03d}_{safe}.txt").write_text(text)
        state = self._state()
        state["classified"] = False
        self._save_state(state)

    def mark_classified(self):
        state = self._state()
        state["classified"] = True
        self._save_state(state)

    def add_profile(self, profile_dict: dict):
        prof_dir = self.root / "profiles"
        prof_dir.mkdir(parents=True, exist_ok=True)
        (prof_dir / f"{profile_dict['id']}.json").write_text(
            json.dumps(profile_dict, sort_keys=True, indent=1) + "\n")

    def remove_profile(self, service_id: str):
        path = self.root / "profiles" / f"{service_id}.json"
        if path.exists():
            path.unlink()


pass_workspace = click.make_pass_decorator(Workspace)


@click.group()
@click.option("--workspace", envvar="SERVICELOOM_WORKSPACE",
              default="loom-workspace", show_default=True,
              type=click.Path(path_type=Path),
              help="Directory holding ontologies, profiles and sessions.")
@click.pass_context
def main(ctx, workspace: Path):
    """Mixed-initiative semantic service discovery and composition."""
    ctx.obj = Workspace(workspace)


@main.command("load-ontology")
@click.argument("file", type=click.Path(exists=True, path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["triples", "structured"]),
              default=None, help="Skip format sniffing.")
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def load_ontology(ws: Workspace, file: Path, fmt, as_json: bool):
    """Load an ontology document into the workspace."""
    text = file.read_text()
    engine = ws.load_engine()
    try:
        diags = engine.load_ontology(text, fmt)
    except OntologyParseError as e:
        _fail(str(e), 2)
    except OntologyError as e:
        _fail(str(e), 1)
    ws.add_ontology(text, file.stem)
    _emit_diags(diags, as_json)
    summary = engine.ontology.summary()
    summary["classified"] = False  # classify is an explicit, timed step
    click.echo(json.dumps(summary, sort_keys=True) if as_json else
               f"loaded {file}: {summary['triples']} triples, "
               f"{summary['classes']} classes")


@main.command()
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def classify(ws: Workspace, as_json: bool):
    """Compute subsumption closures over the loaded ontologies."""
    import time
    engine = ws.load_engine()
    t0 = time.perf_counter()
    diags = engine.classify()
    elapsed_ms = (time.perf_counter() - t0) * 1000
    ws.mark_classified()
    _emit_diags(diags, as_json)
    out = {"classified": True, "elapsed_ms": round(elapsed_ms, 3),
           "classes": len(engine.ontology.classes)}
    click.echo(json.dumps(out, sort_keys=True) if as_json else
               f"classified {out['classes']} classes "
               f"in {out['elapsed_ms']:.1f} ms")


@main.command()
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def register(ws: Workspace, source: Path, as_json: bool):
    """Register profiles from a file, bundle, or directory."""
    paths = sorted(source.glob("*")) if source.is_dir() else [source]
    engine = ws.load_engine()
    registered = []
    any_error = False
    for path in paths:
        if path.is_dir():
            continue
        try:
            profiles = parse_profiles(path.read_text())
        except ProfileError as e:
            _fail(f"{path}: {e}", 2)
        for profile in profiles:
            try:
                diags = engine.register_service(profile)
            except RegistryError as e:
                _fail(str(e), 1)
            any_error |= _emit_diags(diags, as_json)
            ws.add_profile(profile.to_dict())
            registered.append(profile.id)
    click.echo(json.dumps({"registered": registered}, sort_keys=True)
               if as_json else "registered: " + ", ".join(registered))
    sys.exit(1 if any_error else 0)


@main.command()
@click.argument("service_id")
@pass_workspace
def deregister(ws: Workspace, service_id: str):
    """Remove a registered service."""
    engine = ws.load_engine()
    try:
        engine.deregister_service(service_id)
    except RegistryError as e:
        _fail(str(e), 1)
    ws.remove_profile(service_id)
    click.echo(f"deregistered {service_id}")


@main.command()
@click.option("--query-file", type=click.Path(exists=True, path_type=Path))
@click.option("--output", "outputs", multiple=True,
              help="Desired output class (repeatable).")
@click.option("--input", "inputs", multiple=True,
              help="Class the caller can supply (repeatable).")
@click.option("--effect", "effects", multiple=True,
              help="Desired effect status class (repeatable).")
@click.option("--nf", "nf_filters", multiple=True,
              help="Non-functional filter attr:op:value (repeatable).")
@click.option("--max", "max_results", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def discover(ws: Workspace, query_file, outputs, inputs, effects,
             nf_filters, max_results, as_json: bool):
    """Semantic discovery over the registered services."""
    import yaml
    if query_file:
        query = DiscoveryQuery.from_dict(
            yaml.safe_load(Path(query_file).read_text()) or {})
    else:
        filters = []
        for spec in nf_filters:
            attr, op, raw = (spec.split(":", 2) + ["", ""])[:3]
            try:
                value: object = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    value = raw
            filters.append({"attribute": attr, "comparator": op,
                            "value": value})
        query = DiscoveryQuery.from_dict({
            "required_inputs": list(inputs),
            "desired_outputs": list(outputs),
            "desired_effects": [{"class": c} for c in effects],
            "nonfunctional_filters": filters,
            "max_results": max_results})
    engine = ws.load_engine()
    try:
        matches = engine.registry.discover(query, engine.ontology)
    except _ENGINE_ERRORS as e:
        _fail(str(e), 2)
    if as_json:
        click.echo(json.dumps({"matches": [m.to_dict() for m in matches]},
                              sort_keys=True))
    else:
        for m in matches:
            click.echo(f"{m.profile.id}  score={m.score}")
        if not matches:
            click.echo("no matches")


@main.command()
@click.argument("request_file", type=click.Path(exists=True, path_type=Path))
@click.option("--k", default=1, show_default=True,
              help="How many plans to extract this call.")
@click.option("--resume", "token", default=None,
              help="Session token from a previous plan call.")
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def plan(ws: Workspace, request_file: Path, k: int, token, as_json: bool):
    """Compose services satisfying an abstract request."""
    import yaml
    engine = ws.load_engine()
    request = AbstractRequest.from_dict(
        yaml.safe_load(request_file.read_text()) or {})
    try:
        if token:
            session_id = token
            engine.session(session_id)
        else:
            session_id = engine.create_session()
            engine.set_request(session_id, request)
        result = engine.invoke(session_id, MixedInitiativeRequest(
            "Plan", {"k": k}))
    except _ENGINE_ERRORS as e:
        _fail(str(e), 1)
    result["token"] = session_id
    if as_json:
        click.echo(json.dumps(result, sort_keys=True))
    else:
        for i, p in enumerate(result["plans"]):
            layers = " | ".join(
                ", ".join(f"{a['service']}[{a['outcome']}]" for a in layer)
                for layer in p["layers"] if layer) or "(empty plan)"
            click.echo(f"plan {i}: {layers}")
        if not result["plans"]:
            click.echo("no further plans"
                       if result["exhausted"] else "no plans")
        click.echo(f"token: {session_id}"
                   + ("  (exhausted)" if result["exhausted"] else ""))


@main.command()
@click.argument("process_file", type=click.Path(exists=True, path_type=Path))
@click.option("--request", "request_file",
              type=click.Path(exists=True, path_type=Path),
              help="Abstract request giving the initial state.")
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def verify(ws: Workspace, process_file: Path, request_file, as_json: bool):
    """Run dataflow (and, with --request, control-flow) verification."""
    import yaml
    from . import assist
    engine = ws.load_engine()
    try:
        proc = CompositeProcess.from_dict(
            yaml.safe_load(process_file.read_text()) or {})
    except ProcessError as e:
        _fail(str(e), 2)
    snapshot = engine.registry.snapshot()
    request = None
    if request_file:
        request = AbstractRequest.from_dict(
            yaml.safe_load(Path(request_file).read_text()) or {})
    try:
        diags = assist.verify_dataflow(proc, snapshot, engine.ontology,
                                       request)
        if request is not None:
            diags += assist.verify_controlflow(proc, request, snapshot,
                                               engine.ontology)
    except _ENGINE_ERRORS as e:
        _fail(str(e), 1)
    has_err = _emit_diags(diags, as_json)
    if as_json:
        click.echo(json.dumps(
            {"diagnostics": [d.to_dict() for d in diags]}, sort_keys=True))
    elif not diags:
        click.echo("no diagnostics")
    sys.exit(1 if has_err else 0)


@main.command()
@click.argument("kind", type=click.Choice(
    ["consolidations", "completion", "orderings", "insertions",
     "conflicts", "relaxations"]))
@click.argument("process_file", type=click.Path(exists=True, path_type=Path))
@click.option("--producer", help="Producer step (consolidations).")
@click.option("--consumer", help="Consumer step (consolidations).")
@click.option("--candidate", help="Candidate service id (conflicts).")
@click.option("--parallel-to", "position",
              help="Step the candidate would run beside (conflicts).")
@click.option("--request", "request_file",
              type=click.Path(exists=True, path_type=Path),
              help="Abstract request (insertions, relaxations).")
@click.option("--json", "as_json", is_flag=True)
@pass_workspace
def suggest(ws: Workspace, kind: str, process_file: Path, producer, consumer,
            candidate, position, request_file, as_json: bool):
    """Mixed-initiative suggestions over a process file."""
    import yaml
    from . import assist
    from .planner import build_graph
    engine = ws.load_engine()
    try:
        proc = CompositeProcess.from_dict(
            yaml.safe_load(process_file.read_text()) or {})
    except ProcessError as e:
        _fail(str(e), 2)
    snapshot = engine.registry.snapshot()
    request = None
    if request_file:
        request = AbstractRequest.from_dict(
            yaml.safe_load(Path(request_file).read_text()) or {})
    try:
        if kind == "consolidations":
            if not (producer and consumer):
                raise click.UsageError(
                    "consolidations need --producer and --consumer")
            suggestions = assist.suggest_consolidations(
                proc, producer, consumer, snapshot, engine.ontology)
        elif kind == "completion":
            proc2, suggestions = assist.complete_dataflow(
                proc, snapshot, engine.ontology)
            if any(s.applied for s in suggestions):
                click.echo(json.dumps(proc2.to_dict(), sort_keys=True)
                           if as_json else
                           f"{sum(s.applied for s in suggestions)} "
                           "consolidations applied")
        elif kind == "orderings":
            suggestions = assist.suggest_orderings(proc, snapshot,
                                                   engine.ontology)
        elif kind == "insertions":
            if request is None:
                raise click.UsageError("insertions need --request")
            suggestions = assist.suggest_insertions(
                proc, request, snapshot, engine.ontology)
        elif kind == "conflicts":
            if not candidate:
                raise click.UsageError("conflicts need --candidate")
            diags, suggestions = assist.detect_conflicts(
                proc, candidate, position, snapshot, engine.ontology)
            _emit_diags(diags, as_json)
        else:  # relaxations
            if request is None:
                raise click.UsageError("relaxations need --request")
            graph = build_graph(request, snapshot, engine.ontology)
            while not (graph.leveled_off or graph.horizon_hit
                       or graph.goals_reachable()):
                graph.expand_level()
            suggestions = assist.suggest_relaxations(request, graph)
    except click.UsageError:
        raise
    except _ENGINE_ERRORS as e:
        _fail(str(e), 1)
    if as_json:
        click.echo(json.dumps(
            {"suggestions": [s.to_dict() for s in suggestions]},
            sort_keys=True))
    else:
        for s in suggestions:
            flags = " (weak)" if s.weak else ""
            click.echo(f"[{s.kind}]{flags} {json.dumps(s.payload, sort_keys=True)}"
                       f"  -- {s.justification}")
        if not suggestions:
            click.echo("no suggestions")


@main.command()
@click.option("--port", default=8571, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@pass_workspace
def serve(ws: Workspace, port: int, host: str):
    """Serve the wire API over HTTP."""
    import uvicorn
    from .server import create_app
    engine = ws.load_engine()
    app = create_app(engine)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.argument("config_file", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              default=None, help="Directory for CSV, table and figures.")
@click.option("--quiet", is_flag=True)
def bench(config_file: Path, out_dir, quiet: bool):
    """Run the benchmark harness from a config file."""
    try:
        config = BenchConfig.from_file(str(config_file))
    except Exception as e:
        _fail(str(e), 2)
    progress = None if quiet else (lambda m: click.echo(m, err=True))
    report = run_benchmark(config, progress=progress)
    click.echo(report.to_table())
    if out_dir:
        written = write_report(report, Path(out_dir))
        for path in written:
            click.echo(f"wrote {path}", err=True)


@main.command("export")
@click.argument("session_id")
@click.option("--format", "fmt",
              type=click.Choice(["profile-bundle", "plan-report"]),
              default="profile-bundle", show_default=True)
@pass_workspace
def export_cmd(ws: Workspace, session_id: str, fmt: str):
    """Export a session's composite process."""
    engine = ws.load_engine()
    try:
        click.echo(export_process(engine, session_id, fmt), nl=False)
    except _ENGINE_ERRORS as e:
        _fail(str(e), 1)


@main.command("import-check")
@click.argument("bundle_file", type=click.Path(exists=True, path_type=Path))
def import_check(bundle_file: Path):
    """Verify that an exported bundle round-trips."""
    try:
        proc = import_process(bundle_file.read_text())
    except (ProcessError, KeyError, json.JSONDecodeError) as e:
        _fail(str(e), 2)
    click.echo(f"ok: {len(proc.steps)} steps, "
               f"{len(proc.consolidations)} consolidations")


if __name__ == "__main__":
    main()
