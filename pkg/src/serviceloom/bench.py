"""Benchmark harness: synthetic domains and a three-phase timing breakdown.

The harness measures loading (ontology plus service registration),
semantic reasoning (closure computation) and request processing (graph
construction plus k-plan extraction) as disjoint phases, reporting medians
with min/max over repetitions.  Everything is derived from the config's
seeds, so a run is fully reproducible apart from the times themselves.

The synthetic ontology is a rooted DAG of a configurable class count,
standing in for an external ontology of comparable triple count; any
ontology file can be substituted via the config's `path` key.  Random
services draw 1..max inputs and outputs uniformly over the classes, and
generated requests are constructed by backward chaining so that
satisfiable requests actually exist (verified against the engine);
adversarial unsatisfiable requests can be mixed in and are flagged.

The report path writes the delimited rows (CSV), a human-readable table
and matplotlib figures side by side.
"""

from __future__ import annotations

import csv
import io
import random
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .ontology import OntologyStore
from .planner import AbstractRequest, build_graph, extract_plans
from .profiles import Param, ServiceProfile
from .registry import Registry

CSV_COLUMNS = ("services", "solutions", "load_ms", "reason_ms", "request_ms")


class BenchError(Exception):
    pass


@dataclass
class OntologySpec:
    classes: int = 300
    max_depth: int = 8
    branching: int = 3
    seed: int = 17
    path: Optional[str] = None  # external ontology file instead


@dataclass
class BenchConfig:
    ontology: OntologySpec = field(default_factory=OntologySpec)
    service_count: int = 100
    max_inputs: int = 5
    max_outputs: int = 5
    request_count: int = 5
    request_seed: int = 23
    adversarial: int = 0
    plans_per_request: int = 3
    repetitions: int = 1
    count_cap: int = 200  # cap when counting all minimal plans

    def validate(self):
        if self.ontology.path is None and self.ontology.classes < 2:
            raise BenchError("ontology needs at least 2 classes")
        for name in ("service_count", "request_count", "plans_per_request",
                     "repetitions"):
            if getattr(self, name) < 0:
                raise BenchError(f"{name} must be non-negative")
        if self.repetitions < 1:
            raise BenchError("repetitions must be positive")

    @staticmethod
    def from_dict(d: dict) -> "BenchConfig":
        o = d.get("ontology") or {}
        spec = OntologySpec(
            classes=int(o.get("classes", 300)),
            max_depth=int(o.get("depth", o.get("max_depth", 8))),
            branching=int(o.get("branching", 3)),
            seed=int(o.get("seed", 17)),
            path=o.get("path"))
        r = d.get("requests") or {}
        return BenchConfig(
            ontology=spec,
            service_count=int(d.get("services", d.get("service_count", 100))),
            max_inputs=int(d.get("max_inputs", 5)),
            max_outputs=int(d.get("max_outputs", 5)),
            request_count=int(r.get("count", d.get("request_count", 5))),
            request_seed=int(r.get("seed", d.get("request_seed", 23))),
            adversarial=int(r.get("adversarial", 0)),
            plans_per_request=int(d.get("plans_per_request", 3)),
            repetitions=int(d.get("repetitions", 1)),
            count_cap=int(d.get("count_cap", 200)),
        )

    @staticmethod
    def from_file(path: str) -> "BenchConfig":
        with open(path) as fh:
            return BenchConfig.from_dict(yaml.safe_load(fh) or {})


# --------------------------------------------------------------------------
# Domain generation
# --------------------------------------------------------------------------

def _class_iri(i: int) -> str:
    return f"bench:C{i}"


def generate_ontology_document(spec: OntologySpec) -> str:
    """A rooted subclass DAG rendered in the line-oriented triple format."""
    rng = random.Random(spec.seed)
    lines = ["# synthetic benchmark ontology",
             f"# classes={spec.classes} depth={spec.max_depth} "
             f"branching={spec.branching} seed={spec.seed}"]
    depth = {0: 0}
    lines.append(f"<{_class_iri(0)}> <type> <Class> .")
    for i in range(1, spec.classes):
        # Prefer recent nodes so the DAG grows deep but stays within the cap.
        tries = 0
        while True:
            parent = rng.randrange(0, i)
            if depth[parent] < spec.max_depth or tries > 5:
                break
            tries += 1
        depth[i] = min(depth[parent] + 1, spec.max_depth)
        lines.append(f"<{_class_iri(i)}> <type> <Class> .")
        lines.append(f"<{_class_iri(i)}> <subClassOf> <{_class_iri(parent)}> .")
        # Occasional extra parent keeps it a DAG rather than a tree.
        if i > 2 and rng.random() < 1.0 / max(2, spec.branching):
            other = rng.randrange(0, i)
            if other != parent:
                lines.append(f"<{_class_iri(i)}> <subClassOf> "
                             f"<{_class_iri(other)}> .")
    return "\n".join(lines) + "\n"


def generate_services(config: BenchConfig, classes: list[str]
                      ) -> list[ServiceProfile]:
    rng = random.Random(config.ontology.seed + 1)
    profiles = []
    for i in range(config.service_count):
        n_in = rng.randint(1, max(1, config.max_inputs))
        n_out = rng.randint(1, max(1, config.max_outputs))
        ins = tuple(Param(f"in{j}", rng.choice(classes))
                    for j in range(n_in))
        outs = tuple(Param(f"out{j}", rng.choice(classes))
                     for j in range(n_out))
        profiles.append(ServiceProfile(
            id=f"svc-{i:04d}", name=f"Generated service {i}",
            inputs=ins, outputs=outs,
            nonfunctional=(("generated", 1),)))
    return profiles


def generate_requests(config: BenchConfig, profiles: list[ServiceProfile],
                      classes: list[str]) -> list[dict]:
    """Requests built by backward chaining from a goal-producing service,
    so each non-adversarial request is structurally satisfiable.  Returns
    dicts {request, satisfiable}."""
    rng = random.Random(config.request_seed)
    by_output: dict[str, list[ServiceProfile]] = {}
    for p in profiles:
        for o in p.outputs:
            by_output.setdefault(o.type, []).append(p)
    produced = sorted(by_output)
    requests = []
    for _ in range(config.request_count):
        if not produced:
            break
        goal_service = profiles[rng.randrange(len(profiles))]
        goal = rng.choice([o.type for o in goal_service.outputs])
        # Cover the chain's inputs: follow producers a few hops, anything
        # left uncovered becomes an available input.
        available: set[str] = set()
        frontier = [goal_service]
        seen: set[str] = set()
        hops = 0
        while frontier and hops < 3:
            nxt = []
            for svc in frontier:
                for param in svc.inputs:
                    producers = by_output.get(param.type, [])
                    if producers and rng.random() < 0.5:
                        chosen = producers[rng.randrange(len(producers))]
                        if chosen.id not in seen:
                            seen.add(chosen.id)
                            nxt.append(chosen)
                    else:
                        available.add(param.type)
            frontier = nxt
            hops += 1
        for svc in frontier:
            for param in svc.inputs:
                available.add(param.type)
        requests.append({
            "request": AbstractRequest(
                available_inputs=sorted(available),
                goal_outputs=[goal]),
            "satisfiable": True,
        })
    for i in range(config.adversarial):
        # A declared class nothing produces; synthesize one if needed.
        unproduced = [c for c in classes if c not in by_output]
        goal = unproduced[i % len(unproduced)] if unproduced \
            else f"bench:Unproduced{i}"
        requests.append({
            "request": AbstractRequest(
                available_inputs=[classes[0]] if classes else [],
                goal_outputs=[goal]),
            "satisfiable": False,
        })
    return requests


def generate_domain(config: BenchConfig
                    ) -> tuple[str, list[ServiceProfile], list[dict]]:
    """(ontology document, profiles, request records); deterministic in
    the config's seeds."""
    config.validate()
    if config.ontology.path:
        document = Path(config.ontology.path).read_text()
        store, _ = OntologyStore().load(document)
        classes = sorted(c for c in store.classes)
    else:
        document = generate_ontology_document(config.ontology)
        classes = [_class_iri(i) for i in range(config.ontology.classes)]
    profiles = generate_services(config, classes)
    extra = [r for r in generate_requests(config, profiles, classes)]
    # Adversarial goals may name classes outside the document; extend the
    # ontology so they resolve (they are still unproducible).
    synth = sorted({g for r in extra if not r["satisfiable"]
                    for g in r["request"].goal_outputs
                    if g not in classes})
    if synth:
        document += "".join(f"<{c}> <type> <Class> .\n" for c in synth)
    return document, profiles, extra


# --------------------------------------------------------------------------
# Harness
# --------------------------------------------------------------------------

@dataclass
class PhaseTimes:
    samples_ms: list[float]

    @property
    def median(self) -> float:
        return statistics.median(self.samples_ms)

    @property
    def lo(self) -> float:
        return min(self.samples_ms)

    @property
    def hi(self) -> float:
        return max(self.samples_ms)

    def to_dict(self) -> dict:
        return {"median_ms": round(self.median, 3),
                "min_ms": round(self.lo, 3), "max_ms": round(self.hi, 3)}


@dataclass
class RequestResult:
    index: int
    satisfiable_expected: bool
    reachable: bool
    plans_found: int
    minimal_plan_count: int      # exhaustive at first reachable depth, capped
    minimal_count_capped: bool
    times: PhaseTimes
    graph: dict


@dataclass
class BenchReport:
    config: BenchConfig
    service_count: int
    triple_count: int
    load: PhaseTimes
    reason: PhaseTimes
    requests: list[RequestResult]
    total_wall_ms: float

    def csv_rows(self) -> list[dict]:
        return [{
            "services": self.service_count,
            "solutions": r.plans_found,
            "load_ms": round(self.load.median, 3),
            "reason_ms": round(self.reason.median, 3),
            "request_ms": round(r.times.median, 3),
        } for r in self.requests]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in self.csv_rows():
            writer.writerow(row)
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [
            f"services: {self.service_count}   triples: {self.triple_count}"
            f"   repetitions: {self.config.repetitions}",
            f"loading:   median {self.load.median:10.1f} ms   "
            f"[{self.load.lo:.1f} .. {self.load.hi:.1f}]",
            f"reasoning: median {self.reason.median:10.1f} ms   "
            f"[{self.reason.lo:.1f} .. {self.reason.hi:.1f}]",
            "",
            "request  plans  minimal  reachable  median_ms       range",
        ]
        for r in self.requests:
            minimal = (f"{r.minimal_plan_count}+"
                       if r.minimal_count_capped else str(r.minimal_plan_count))
            lines.append(
                f"{r.index:7d}  {r.plans_found:5d}  {minimal:>7s}  "
                f"{str(r.reachable):>9s}  {r.times.median:9.1f}  "
                f"[{r.times.lo:.1f} .. {r.times.hi:.1f}]")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "service_count": self.service_count,
            "triple_count": self.triple_count,
            "load": self.load.to_dict(),
            "reason": self.reason.to_dict(),
            "total_wall_ms": round(self.total_wall_ms, 3),
            "requests": [{
                "index": r.index,
                "satisfiable_expected": r.satisfiable_expected,
                "reachable": r.reachable,
                "plans_found": r.plans_found,
                "minimal_plan_count": r.minimal_plan_count,
                "minimal_count_capped": r.minimal_count_capped,
                "times": r.times.to_dict(),
                "graph": r.graph,
            } for r in self.requests],
        }


def run_benchmark(config: BenchConfig,
                  progress=None) -> BenchReport:
    """Load (timed), classify (timed), then answer each request asking for
    k plans (timed per request).  k=0 degrades to reachability-only."""
    config.validate()
    wall_start = time.perf_counter()
    document, profiles, request_records = generate_domain(config)

    def note(msg: str):
        if progress:
            progress(msg)

    load_samples, reason_samples = [], []
    per_request_samples: list[list[float]] = [[] for _ in request_records]
    results: list[Optional[RequestResult]] = [None] * len(request_records)

    for rep in range(config.repetitions):
        note(f"repetition {rep + 1}/{config.repetitions}")
        t0 = time.perf_counter()
        store, _ = OntologyStore().load(document, format="triples")
        registry = Registry()
        for profile in profiles:
            registry.register(profile, store)
        t1 = time.perf_counter()
        load_samples.append((t1 - t0) * 1000)

        t0 = time.perf_counter()
        store, _ = store.classify()
        t1 = time.perf_counter()
        reason_samples.append((t1 - t0) * 1000)

        snapshot = registry.snapshot()
        for i, record in enumerate(request_records):
            request: AbstractRequest = record["request"]
            t0 = time.perf_counter()
            graph = build_graph(request, snapshot, store)
            reachable = graph.goals_reachable()
            plans = []
            if config.plans_per_request > 0 and reachable:
                plans, _token = extract_plans(graph, request,
                                              config.plans_per_request)
            t1 = time.perf_counter()
            per_request_samples[i].append((t1 - t0) * 1000)
            if rep == config.repetitions - 1:
                minimal_count, capped = 0, False
                if reachable:
                    minimal_count, capped = _count_minimal_plans(
                        request, snapshot, store, config.count_cap)
                results[i] = RequestResult(
                    index=i, satisfiable_expected=record["satisfiable"],
                    reachable=reachable, plans_found=len(plans),
                    minimal_plan_count=minimal_count,
                    minimal_count_capped=capped,
                    times=PhaseTimes(per_request_samples[i]),
                    graph=graph.stats())
            note(f"  request {i}: done")

    triple_count = document.count(" .")
    report = BenchReport(
        config=config,
        service_count=config.service_count,
        triple_count=triple_count,
        load=PhaseTimes(load_samples),
        reason=PhaseTimes(reason_samples),
        requests=[r for r in results if r is not None],
        total_wall_ms=(time.perf_counter() - wall_start) * 1000,
    )
    return report


def _count_minimal_plans(request, snapshot, store, cap: int
                         ) -> tuple[int, bool]:
    """Count plans whose canonical layer count equals the first reachable
    depth; the paper's solution counts are ambiguous between this and all
    plans to level-off, so the report carries both (plans_found is the
    requested-k figure)."""
    graph = build_graph(request, snapshot, store)
    plans, token = extract_plans(graph, request, cap + 1)
    if not plans:
        return 0, False
    min_layers = len(plans[0].canonical())
    minimal = [p for p in plans if len(p.canonical()) == min_layers]
    capped = not token.exhausted and len(plans) >= cap + 1
    return min(len(minimal), cap), capped or len(minimal) > cap


# --------------------------------------------------------------------------
# Report rendering
# --------------------------------------------------------------------------

def write_report(report: BenchReport, out_dir: Path) -> list[Path]:
    """CSV rows, the human-readable table, and the figures, side by side."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    csv_path = out_dir / "report.csv"
    csv_path.write_text(report.to_csv())
    written.append(csv_path)
    table_path = out_dir / "report.txt"
    table_path.write_text(report.to_table())
    written.append(table_path)
    written.extend(render_figures(report, out_dir))
    return written


def render_figures(report: BenchReport, out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    phases = ["loading", "reasoning"]
    medians = [report.load.median, report.reason.median]
    errs = [[report.load.median - report.load.lo,
             report.reason.median - report.reason.lo],
            [report.load.hi - report.load.median,
             report.reason.hi - report.reason.median]]
    ax.bar(phases, medians, yerr=errs, capsize=4, color=["#4878d0", "#ee854a"])
    ax.set_ylabel("time (ms)")
    ax.set_title(f"Phase times, {report.service_count} services, "
                 f"{report.triple_count} triples")
    fig.tight_layout()
    path = out_dir / "phase_times.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if report.requests:
        fig, ax = plt.subplots(figsize=(7, 4))
        xs = [r.index for r in report.requests]
        ys = [r.times.median for r in report.requests]
        los = [r.times.median - r.times.lo for r in report.requests]
        his = [r.times.hi - r.times.median for r in report.requests]
        colors = ["#6acc64" if r.reachable else "#d65f5f"
                  for r in report.requests]
        ax.bar(xs, ys, yerr=[los, his], capsize=3, color=colors)
        ax.set_xlabel("request")
        ax.set_ylabel("request processing (ms)")
        ax.set_title(f"Per-request times, k={report.config.plans_per_request}"
                     " (red: unreachable goals)")
        fig.tight_layout()
        path = out_dir / "request_times.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
