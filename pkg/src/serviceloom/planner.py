"""GraphPlan-style service composition over subsumption matching.

The plan graph alternates proposition layers P0, P1, ... with action layers
A1, A2, ...; an action enters a layer when every typed input is supported
by an Avail proposition whose type is subsumed by the input type, and every
status precondition by a matching status proposition, with a pairwise
non-mutex support choice.  Conditional effects are compiled optimistically
to one action node per (service, outcome); distinct outcomes of one service
are always mutex, and extracted plans record the assumed outcomes.

Action mutexes follow three rules: inconsistent effects (one deletes what
the other adds, or two outcomes of one service), interference (one deletes
every possible support of some requirement of the other) and competing
needs (some requirement pair has all cross supports mutex).  Two
propositions are mutex when all pairs of their producers are.

Plan extraction is a lazy backward search with failure memoization: plans
come out a few at a time in nondecreasing layer count, deduplicated on
their canonical layer structure, and a continuation token resumes the
enumeration where it stopped.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .diagnostics import Diagnostic, Kind, warning
from .ontology import OntologyStore, StaleClosureError
from .profiles import ServiceProfile, StatusPattern
from .process import (PROVENANCE_AUTO, PARALLEL, SEQUENCE, CompositeProcess,
                      Consolidation, Construct, Step)
from .registry import RegistrySnapshot, nf_passes
from .semantics import (AvailProp, GroundAction, GroundPattern, InputReq,
                        Prop, Requirement, StatusProp, StatusReq,
                        ground_actions, ground_pattern, initial_state,
                        pattern_matches)


class PlannerError(Exception):
    pass


class StaleTokenError(PlannerError):
    """Continuation token does not belong to this graph."""


# --------------------------------------------------------------------------
# Requests
# --------------------------------------------------------------------------

@dataclass
class AbstractRequest:
    """Declarative description of the desired composite service."""
    available_inputs: list[str] = field(default_factory=list)
    initial_statuses: list[StatusPattern] = field(default_factory=list)
    goal_outputs: list[str] = field(default_factory=list)
    goal_statuses: list[StatusPattern] = field(default_factory=list)
    nonfunctional_filters: list[tuple[str, str, object]] = field(
        default_factory=list)
    max_plans: int = 10
    horizon: Optional[int] = None

    def validate(self):
        if not (self.goal_outputs or self.goal_statuses):
            raise PlannerError("request has no goals")

    def to_dict(self) -> dict:
        return {
            "available_inputs": list(self.available_inputs),
            "initial_statuses": [p.to_dict() for p in self.initial_statuses],
            "goal_outputs": list(self.goal_outputs),
            "goal_statuses": [p.to_dict() for p in self.goal_statuses],
            "nonfunctional_filters": [
                {"attribute": a, "comparator": c, "value": v}
                for a, c, v in self.nonfunctional_filters],
            "max_plans": self.max_plans,
            "horizon": self.horizon,
        }

    @staticmethod
    def from_dict(d: dict) -> "AbstractRequest":
        filters = [(str(e["attribute"]), str(e["comparator"]), e["value"])
                   for e in d.get("nonfunctional_filters") or []]
        return AbstractRequest(
            available_inputs=[str(c) for c in d.get("available_inputs") or []],
            initial_statuses=[StatusPattern.from_dict(p)
                              for p in d.get("initial_statuses") or []],
            goal_outputs=[str(c) for c in d.get("goal_outputs") or []],
            goal_statuses=[StatusPattern.from_dict(p)
                           for p in d.get("goal_statuses") or []],
            nonfunctional_filters=filters,
            max_plans=int(d.get("max_plans", 10)),
            horizon=d.get("horizon"),
        )

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(
            self.to_dict(), sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# Graph nodes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionNode:
    """A (service, outcome) choice, or the no-op that persists a proposition."""
    service: Optional[str] = None
    outcome: Optional[str] = None
    noop: Optional[Prop] = None

    @property
    def is_noop(self) -> bool:
        return self.noop is not None

    def sort_key(self) -> tuple:
        if self.noop is not None:
            return (0, self.noop.key())
        return (1, self.service, self.outcome)

    def __repr__(self):
        if self.noop is not None:
            return f"noop({self.noop.key()})"
        return f"{self.service}/{self.outcome}"


def _prop_sort(props) -> list[Prop]:
    return sorted(props, key=lambda p: p.key())


# --------------------------------------------------------------------------
# Plan graph
# --------------------------------------------------------------------------

class PlanGraph:
    """Leveled propositions and actions with per-layer mutex relations.

    prop_layers[i] holds P_i; action_layers[i] holds the actions between
    P_i and P_{i+1}.  Proposition layers are monotone, so each proposition
    records the level it first appeared at and the subsumption indexes are
    cumulative.
    """

    def __init__(self, request: AbstractRequest, snapshot: RegistrySnapshot,
                 ontology: OntologyStore):
        request.validate()
        if not ontology.classified:
            # Applicability relies on precomputed closures.
            raise StaleClosureError(
                "classify() must run before planning")
        self.request = request
        self.ontology = ontology
        self.snapshot = snapshot
        self.basis = (snapshot.version, ontology.version,
                      request.content_hash())
        self.diagnostics: list[Diagnostic] = []

        profiles = [p for p in snapshot.profiles
                    if all(nf_passes(p, a, c, v, ontology)
                           for a, c, v in request.nonfunctional_filters)]
        self.actions: list[GroundAction] = []
        for profile in profiles:
            self.actions.extend(ground_actions(profile, ontology))
        self.actions.sort(key=lambda a: a.key())
        self._profile_by_id = {p.id: p for p in profiles}

        self.horizon = request.horizon or max(1, 2 * len(profiles))
        self.leveled_off = False
        self.horizon_hit = False

        p0 = initial_state(request.available_inputs,
                           request.initial_statuses, ontology)
        self.prop_layers: list[set[Prop]] = [set(p0)]
        self.action_layers: list[set[ActionNode]] = []
        self.action_mutex: list[set[frozenset[ActionNode]]] = []
        self.prop_mutex: list[set[frozenset[Prop]]] = [set()]
        self.first_level: dict[Prop, int] = {p: 0 for p in p0}
        self._avail_index: dict[str, set[AvailProp]] = {}
        self._status_index: dict[str, set[StatusProp]] = {}
        for p in p0:
            self._index_prop(p)
        self._node_action: dict[ActionNode, GroundAction] = {}
        self._support_cache: dict[tuple[int, tuple], tuple[Prop, ...]] = {}

    # -- indexing -----------------------------------------------------------

    def _ancestors_of(self, iri: str) -> Sequence[str]:
        # Unknown classes match nothing, so they are simply not indexed.
        if self.ontology.knows_class(iri):
            return tuple(self.ontology.ancestors(iri))
        return ()

    def _index_prop(self, prop: Prop):
        if isinstance(prop, AvailProp):
            for anc in self._ancestors_of(prop.type):
                self._avail_index.setdefault(anc, set()).add(prop)
        else:
            for anc in self._ancestors_of(prop.status_class):
                self._status_index.setdefault(anc, set()).add(prop)

    def supports(self, prop_level: int, req: Requirement) -> tuple[Prop, ...]:
        """Propositions at P_{prop_level} satisfying the requirement, sorted."""
        key = (prop_level, req.key())
        hit = self._support_cache.get(key)
        if hit is not None:
            return hit
        if isinstance(req, InputReq):
            cands = self._avail_index.get(req.type, ())
            out = tuple(_prop_sort(
                p for p in cands if self.first_level[p] <= prop_level))
        else:
            cands = self._status_index.get(req.pattern.status_class, ())
            out = tuple(_prop_sort(
                p for p in cands
                if self.first_level[p] <= prop_level
                and pattern_matches(p, req.pattern, self.ontology)))
        self._support_cache[key] = out
        return out

    def node_action(self, node: ActionNode) -> GroundAction:
        return self._node_action[node]

    def node_adds(self, node: ActionNode) -> tuple[Prop, ...]:
        if node.noop is not None:
            return (node.noop,)
        return self._node_action[node].adds

    def node_deletes(self, node: ActionNode) -> tuple[GroundPattern, ...]:
        if node.noop is not None:
            return ()
        return self._node_action[node].delete_patterns

    def node_requirements(self, node: ActionNode) -> tuple:
        """Requirement keys paired with their support sets are built by
        callers; no-ops require exactly the proposition they persist."""
        if node.noop is not None:
            return (node.noop,)
        return self._node_action[node].requirements

    # -- mutex queries ------------------------------------------------------

    def actions_mutex(self, layer: int, a: ActionNode, b: ActionNode) -> bool:
        return frozenset((a, b)) in self.action_mutex[layer]

    def props_mutex(self, level: int, p: Prop, q: Prop) -> bool:
        level = min(level, len(self.prop_mutex) - 1)
        return frozenset((p, q)) in self.prop_mutex[level]

    # -- expansion ----------------------------------------------------------

    def _applicable(self, prop_level: int, action: GroundAction) -> bool:
        support_sets = []
        for req in action.requirements:
            s = self.supports(prop_level, req)
            if not s:
                return False
            support_sets.append(s)
        if not self.prop_mutex[prop_level]:
            return True
        return self._nonmutex_choice_exists(prop_level, support_sets)

    def _nonmutex_choice_exists(self, level: int,
                                support_sets: list[tuple[Prop, ...]]) -> bool:
        chosen: list[Prop] = []

        def rec(i: int) -> bool:
            if i == len(support_sets):
                return True
            for p in support_sets[i]:
                if all(not self.props_mutex(level, p, q) or p == q
                       for q in chosen):
                    chosen.append(p)
                    if rec(i + 1):
                        chosen.pop()
                        return True
                    chosen.pop()
            return False

        return rec(0)

    def expand_level(self):
        """Add one action layer and one proposition layer; no-op once
        leveled off."""
        if self.leveled_off:
            return
        i = len(self.action_layers)  # new actions act between P_i and P_{i+1}
        prev_props = self.prop_layers[i]

        layer: set[ActionNode] = set()
        for prop in prev_props:
            node = ActionNode(noop=prop)
            layer.add(node)
        for action in self.actions:
            if self._applicable(i, action):
                node = ActionNode(service=action.service,
                                  outcome=action.outcome)
                layer.add(node)
                self._node_action[node] = action

        new_props: set[Prop] = set(prev_props)
        producers: dict[Prop, set[ActionNode]] = {}
        for node in layer:
            for p in self.node_adds(node):
                new_props.add(p)
                producers.setdefault(p, set()).add(node)
        for p in new_props:
            if p not in self.first_level:
                self.first_level[p] = i + 1
                self._index_prop(p)
            producers.setdefault(p, set())

        amutex = self._compute_action_mutex(i, layer)
        pmutex = self._compute_prop_mutex(i, new_props, producers, amutex)

        self.action_layers.append(layer)
        self.action_mutex.append(amutex)
        self.prop_layers.append(new_props)
        self.prop_mutex.append(pmutex)
        self._support_cache.clear()

        if (new_props == prev_props
                and pmutex == self.prop_mutex[i]
                and (i == 0 or (layer == self.action_layers[i - 1]
                                and amutex == self.action_mutex[i - 1]))):
            self.leveled_off = True

    def _deletes_prop(self, node: ActionNode, prop: Prop) -> bool:
        return any(pattern_matches(prop, pat, self.ontology)
                   for pat in self.node_deletes(node))

    def _requirement_support_sets(self, prop_level: int, node: ActionNode
                                  ) -> list[tuple[Prop, ...]]:
        if node.noop is not None:
            return [(node.noop,)]
        return [self.supports(prop_level, r)
                for r in self._node_action[node].requirements]

    def _compute_action_mutex(self, prop_level: int,
                              layer: set[ActionNode]
                              ) -> set[frozenset[ActionNode]]:
        mutex: set[frozenset[ActionNode]] = set()
        nodes = sorted(layer, key=lambda n: n.sort_key())
        real = [n for n in nodes if not n.is_noop]

        # Rule 1: distinct outcomes of one service are always mutex.
        by_service: dict[str, list[ActionNode]] = {}
        for n in real:
            by_service.setdefault(n.service, []).append(n)
        for group in by_service.values():
            for a, b in itertools.combinations(group, 2):
                mutex.add(frozenset((a, b)))

        # Rules 2 and 3 only involve actions that delete something.
        deleters = [n for n in real if self.node_deletes(n)]
        if deleters:
            support_sets = {n: self._requirement_support_sets(prop_level, n)
                            for n in nodes}
            for a in deleters:
                for b in nodes:
                    if a == b or frozenset((a, b)) in mutex:
                        continue
                    # Inconsistent effects: a deletes what b adds (the
                    # no-op case covers persistence of deleted facts).
                    if any(self._deletes_prop(a, p)
                           for p in self.node_adds(b)):
                        mutex.add(frozenset((a, b)))
                        continue
                    # Interference: a wipes out every possible support of
                    # one of b's requirements.
                    hit = False
                    for sset in support_sets[b]:
                        if sset and all(self._deletes_prop(a, p)
                                        for p in sset):
                            hit = True
                            break
                    if hit:
                        mutex.add(frozenset((a, b)))

        # Rule 4: competing needs, only meaningful under proposition mutexes.
        if self.prop_mutex[prop_level]:
            pm = self.prop_mutex[prop_level]
            involved: set[Prop] = set()
            for pair in pm:
                involved.update(pair)
            support_sets = {n: self._requirement_support_sets(prop_level, n)
                            for n in nodes}
            # Candidate actions: some requirement entirely inside the set of
            # mutex-involved propositions (otherwise a mutex-free supporter
            # defeats the rule).
            cands = [n for n in nodes
                     if any(s and all(p in involved for p in s)
                            for s in support_sets[n])]
            for a, b in itertools.combinations(cands, 2):
                if frozenset((a, b)) in mutex:
                    continue
                found = False
                for sa in support_sets[a]:
                    if not sa or not all(p in involved for p in sa):
                        continue
                    for sb in support_sets[b]:
                        if not sb:
                            continue
                        if all(frozenset((p, q)) in pm
                               for p in sa for q in sb if p != q) \
                                and all(p != q or False
                                        for p in sa for q in sb
                                        if frozenset((p, q)) not in pm):
                            # every cross pair mutex (identical props can
                            # never be, so any shared prop defeats it)
                            if not any(p == q for p in sa for q in sb):
                                found = True
                                break
                    if found:
                        break
                if found:
                    mutex.add(frozenset((a, b)))
        return mutex

    def _compute_prop_mutex(self, layer_idx: int, props: set[Prop],
                            producers: dict[Prop, set[ActionNode]],
                            amutex: set[frozenset[ActionNode]]
                            ) -> set[frozenset[Prop]]:
        if not amutex:
            return set()
        mutex_actions: set[ActionNode] = set()
        for pair in amutex:
            mutex_actions.update(pair)
        # Only propositions all of whose producers are involved in some
        # action mutex can possibly be mutex.
        cands = [p for p in _prop_sort(props)
                 if producers[p] and producers[p] <= mutex_actions]
        pmutex: set[frozenset[Prop]] = set()
        for p, q in itertools.combinations(cands, 2):
            if producers[p] & producers[q]:
                continue  # a shared producer yields both
            if all(frozenset((a, b)) in amutex
                   for a in producers[p] for b in producers[q]):
                pmutex.add(frozenset((p, q)))
        return pmutex

    # -- goals --------------------------------------------------------------

    def goal_labels(self) -> list[tuple]:
        labels: list[tuple] = [("output", c)
                               for c in sorted(self.request.goal_outputs)]
        for pat in self.request.goal_statuses:
            labels.append(("status", ground_pattern(pat, {}, self.ontology)))
        return labels

    def goal_candidates(self, prop_level: int) -> list[tuple[tuple, tuple[Prop, ...]]]:
        """Per goal, the matching propositions at the given layer."""
        prop_level = min(prop_level, len(self.prop_layers) - 1)
        out = []
        for label in self.goal_labels():
            if label[0] == "output":
                req = InputReq("goal", label[1])
            else:
                req = StatusReq(label[1])
            out.append((label, self.supports(prop_level, req)))
        return out

    def goals_reachable(self, prop_level: Optional[int] = None) -> bool:
        """True when every goal is matched at the layer and some choice of
        matched propositions is pairwise non-mutex."""
        if prop_level is None:
            prop_level = len(self.prop_layers) - 1
        cands = self.goal_candidates(prop_level)
        sets = []
        for _label, props in cands:
            if not props:
                return False
            sets.append(props)
        if not self.prop_mutex[min(prop_level, len(self.prop_mutex) - 1)]:
            return True
        return self._nonmutex_choice_exists(
            min(prop_level, len(self.prop_mutex) - 1), sets)

    def stats(self) -> dict:
        return {
            "levels": len(self.action_layers),
            "propositions": len(self.prop_layers[-1]),
            "actions": len(self.action_layers[-1]) if self.action_layers else 0,
            "action_mutex_pairs": sum(len(m) for m in self.action_mutex),
            "prop_mutex_pairs": sum(len(m) for m in self.prop_mutex),
            "leveled_off": self.leveled_off,
            "horizon_hit": self.horizon_hit,
        }


def build_graph(request: AbstractRequest, snapshot: RegistrySnapshot,
                ontology: OntologyStore) -> PlanGraph:
    """Expand a fresh graph until the goals are reachable non-mutex, the
    graph levels off, or the horizon is hit (reported, graph returned)."""
    graph = PlanGraph(request, snapshot, ontology)
    while True:
        if graph.goals_reachable():
            break
        if graph.leveled_off:
            break
        if len(graph.action_layers) >= graph.horizon:
            graph.horizon_hit = True
            graph.diagnostics.append(warning(
                Kind.HORIZON_EXCEEDED, "planner",
                f"horizon of {graph.horizon} levels hit before the graph "
                "leveled off"))
            break
        graph.expand_level()
    return graph


# --------------------------------------------------------------------------
# Plans
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowEdge:
    """Support provenance for a consumer input, used for consolidations."""
    consumer_level: int              # 1-based action layer
    consumer: ActionNode
    input_param: str
    producer_level: int              # 0 means the initial state
    producer: Optional[ActionNode]   # None for the initial state
    prop: Prop


@dataclass
class Plan:
    layers: list[frozenset[ActionNode]]   # real actions only
    assumptions: frozenset[tuple[str, str]]
    achieves: tuple[tuple, ...]
    flows: tuple[FlowEdge, ...] = ()

    def canonical(self) -> tuple:
        out = []
        for layer in self.layers:
            if layer:
                out.append(frozenset((n.service, n.outcome) for n in layer))
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "layers": [sorted([{"service": n.service, "outcome": n.outcome}
                               for n in layer],
                              key=lambda d: (d["service"], d["outcome"]))
                       for layer in self.layers],
            "assumptions": sorted(["%s/%s" % a for a in self.assumptions]),
            "achieves": [list(map(str, a)) for a in self.achieves],
        }


class ExtractionToken:
    """Opaque continuation handle for lazy plan enumeration."""

    def __init__(self, graph: PlanGraph):
        self.graph = graph
        self.emitted = 0
        self.exhausted = False
        self._gen: Optional[Iterator[Plan]] = None

    def summary(self) -> dict:
        return {"emitted": self.emitted, "exhausted": self.exhausted,
                "basis": list(self.graph.basis)}


# A stall of this many consecutive depths with no new plan, on a leveled-off
# graph, is treated as exhaustion.
_STALL_LIMIT = 2


def _enumerate_plans(graph: PlanGraph) -> Iterator[Plan]:
    request = graph.request
    # Find the first depth where goals are reachable, expanding on demand.
    depth = None
    for d in range(len(graph.prop_layers)):
        if graph.goals_reachable(d):
            depth = d
            break
    while depth is None:
        if graph.leveled_off or graph.horizon_hit:
            return
        if len(graph.action_layers) >= graph.horizon:
            graph.horizon_hit = True
            return
        graph.expand_level()
        if graph.goals_reachable():
            depth = len(graph.prop_layers) - 1

    seen: set[tuple] = set()
    nogoods: set[tuple] = set()
    solutions: dict[tuple, list] = {}
    stall = 0
    while True:
        new_at_depth = 0
        for plan in _extract_at_depth(graph, depth, nogoods, solutions):
            canon = plan.canonical()
            if canon in seen:
                continue
            seen.add(canon)
            new_at_depth += 1
            yield plan
        stall = 0 if new_at_depth else stall + 1
        if graph.leveled_off and stall >= _STALL_LIMIT:
            return
        if depth >= graph.horizon:
            graph.horizon_hit = True
            return
        depth += 1
        while depth > len(graph.action_layers) and not graph.leveled_off:
            if len(graph.action_layers) >= graph.horizon:
                graph.horizon_hit = True
                return
            graph.expand_level()


@dataclass
class _Frame:
    level: int
    producers: dict            # goal prop -> ActionNode
    supports: dict             # ActionNode -> tuple[(Requirement, Prop), ...]


def _extract_at_depth(graph: PlanGraph, depth: int, nogoods: set[tuple],
                      solutions: dict[tuple, list]) -> Iterator[Plan]:
    """All solutions using exactly `depth` layers, backward search.

    Every level must schedule at least one real action: a plan with an
    all-noop level canonicalizes to a shorter plan, which an earlier depth
    already produced (goals reachable there by mutex soundness), so such
    assignments only re-encode known plans and are pruned.  Nogood keys are
    therefore exact (level, goals) pairs; noop-padding monotonicity does
    not hold under this pruning.

    Subtrees are memoized lazily: `solutions` maps (level, goals) to the
    frame chains found so far plus the still-running raw generator, so a
    subtree shared by many parents is enumerated once and replayed.  The
    recursion strictly decreases the level, so a suspended generator is
    never re-entered while executing.
    """

    def glevel(j: int) -> int:
        return min(j, len(graph.prop_layers) - 1)

    def alayer(j: int) -> int:
        # action layer index used for extraction level j (1-based levels)
        return min(j, len(graph.action_layers)) - 1

    ontology = graph.ontology
    cand_cache: dict[tuple, list[ActionNode]] = {}

    def producer_candidates(j: int, goal: Prop) -> list[ActionNode]:
        key = (j, goal)
        hit = cand_cache.get(key)
        if hit is not None:
            return hit
        cands: list[ActionNode] = []
        if graph.first_level.get(goal, 1 << 30) <= glevel(j - 1):
            cands.append(ActionNode(noop=goal))
        li = alayer(j)
        if li >= 0:
            for node in graph.action_layers[li]:
                if node.is_noop:
                    continue
                if goal in graph.node_adds(node):
                    cands.append(node)
        cands.sort(key=lambda n: n.sort_key())
        cand_cache[key] = cands
        return cands

    def solve(j: int, goals: tuple[Prop, ...]) -> Iterator[list[_Frame]]:
        if j == 0:
            if all(graph.first_level.get(g, 1) == 0 for g in goals):
                yield []
            return
        gkey = (j, frozenset(goals))
        if gkey in nogoods:
            return
        entry = solutions.get(gkey)
        if entry is None:
            entry = [[], _solve_raw(j, goals)]
            solutions[gkey] = entry
        results, raw = entry
        i = 0
        while True:
            if i < len(results):
                yield results[i]
                i += 1
                continue
            if entry[1] is None:
                break
            try:
                item = next(entry[1])
            except StopIteration:
                entry[1] = None
                break
            results.append(item)
        if not results:
            nogoods.add(gkey)

    def _solve_raw(j: int, goals: tuple[Prop, ...]
                   ) -> Iterator[list[_Frame]]:
        li = alayer(j)
        pm_level = glevel(j - 1)

        # Different goal->producer maps with the same node multiset explore
        # identical subtrees; memoize on the accumulated node set.
        assign_memo: set = set()

        def assign(idx: int, chosen: dict, used: list[ActionNode]
                   ) -> Iterator[dict]:
            mkey = (idx, frozenset(used))
            if mkey in assign_memo:
                return
            assign_memo.add(mkey)
            if idx == len(goals):
                yield dict(chosen)
                return
            g = goals[idx]
            for node in producer_candidates(j, g):
                ok = True
                for other in used:
                    if other != node and graph.actions_mutex(li, node, other):
                        ok = False
                        break
                if not ok:
                    continue
                chosen[g] = node
                added = node not in used
                if added:
                    used.append(node)
                yield from assign(idx + 1, chosen, used)
                if added:
                    used.pop()
                del chosen[g]

        # Distinct (real action set, subgoal set) pairs drive the recursion;
        # everything else is provenance detail where the first find wins.
        explored: set = set()

        for producer_map in assign(0, {}, []):
            real = sorted({n for n in producer_map.values() if not n.is_noop},
                          key=lambda n: n.sort_key())
            if not real:
                continue  # all-noop level: re-encodes a shorter plan
            carried = frozenset(g for g, n in producer_map.items()
                                if n.is_noop)
            if any(p != q and graph.props_mutex(pm_level, p, q)
                   for p, q in itertools.combinations(carried, 2)):
                continue
            reqs: list[tuple[ActionNode, Requirement]] = []
            for node in real:
                for r in graph.node_action(node).requirements:
                    reqs.append((node, r))
            deletes = {node: graph.node_deletes(node) for node in real}

            def deleted_by_other(owner: ActionNode, prop: Prop) -> bool:
                for node in real:
                    if node is owner:
                        continue
                    if any(pattern_matches(prop, pat, ontology)
                           for pat in deletes[node]):
                        return True
                return False

            # Support choices that accumulate the same proposition set are
            # interchangeable; memoize on (position, accumulated set).
            pick_memo: set = set()

            def pick(idx: int, acc: frozenset,
                     chosen: tuple) -> Iterator[tuple[frozenset, tuple]]:
                mkey = (idx, acc)
                if mkey in pick_memo:
                    return
                pick_memo.add(mkey)
                if idx == len(reqs):
                    yield acc, chosen
                    return
                node, r = reqs[idx]
                for p in graph.supports(pm_level, r):
                    if p not in acc:
                        if deleted_by_other(node, p):
                            continue
                        if any(graph.props_mutex(pm_level, p, q)
                               for q in acc):
                            continue
                    elif deleted_by_other(node, p):
                        continue
                    yield from pick(idx + 1, acc | {p},
                                    chosen + ((node, r, p),))

            for acc, support_choice in pick(0, carried, ()):
                sub = tuple(_prop_sort(acc))
                skey = (frozenset(real), sub)
                if skey in explored:
                    continue
                explored.add(skey)
                frame = _Frame(
                    level=j,
                    producers=dict(producer_map),
                    supports={
                        node: tuple((r, p) for n, r, p in support_choice
                                    if n is node)
                        for node in real},
                )
                for tail in solve(j - 1, sub):
                    yield [frame] + tail

    # Top level: choose one matching proposition per goal, non-mutex;
    # distinct chosen sets are what matters.
    cands = graph.goal_candidates(depth)
    if any(not props for _label, props in cands):
        return
    pm_level = glevel(depth)
    goal_memo: set = set()

    def choose_goals(idx: int, chosen: frozenset,
                     ordered: tuple) -> Iterator[tuple[frozenset, tuple]]:
        mkey = (idx, chosen)
        if mkey in goal_memo:
            return
        goal_memo.add(mkey)
        if idx == len(cands):
            yield chosen, ordered
            return
        for p in cands[idx][1]:
            if p not in chosen and any(graph.props_mutex(pm_level, p, q)
                                       for q in chosen):
                continue
            yield from choose_goals(idx + 1, chosen | {p}, ordered + (p,))

    labels = [label for label, _props in cands]
    for chosen_set, goal_props in choose_goals(0, frozenset(), ()):
        ordered = tuple(_prop_sort(chosen_set))
        for frames in solve(depth, ordered):
            yield _assemble(graph, depth, frames, labels, list(goal_props))


def _assemble(graph: PlanGraph, depth: int, frames: list[_Frame],
              labels: list[tuple], goal_props: list[Prop]) -> Plan:
    by_level = {f.level: f for f in frames}
    layers: list[frozenset[ActionNode]] = []
    for j in range(1, depth + 1):
        f = by_level.get(j)
        if f is None:
            layers.append(frozenset())
            continue
        layers.append(frozenset(n for n in f.producers.values()
                                if not n.is_noop))

    def resolve_producer(j: int, prop: Prop) -> tuple[int, Optional[ActionNode]]:
        # Walk no-op chains downward to the real producer or level 0.
        while j > 0:
            f = by_level.get(j)
            node = f.producers.get(prop) if f else None
            if node is None or node.is_noop:
                j -= 1
                continue
            return j, node
        return 0, None

    flows: list[FlowEdge] = []
    for f in frames:
        for node, picks in f.supports.items():
            for req, prop in picks:
                if isinstance(req, InputReq):
                    lvl, producer = resolve_producer(f.level - 1, prop)
                    flows.append(FlowEdge(
                        consumer_level=f.level, consumer=node,
                        input_param=req.param, producer_level=lvl,
                        producer=producer, prop=prop))

    assumptions = frozenset((n.service, n.outcome)
                            for layer in layers for n in layer)
    achieves = tuple((str(l[0]), str(l[1]) if l[0] == "output"
                      else l[1].status_class, p.key())
                     for l, p in zip(labels, goal_props))
    return Plan(layers=layers, assumptions=assumptions,
                achieves=achieves, flows=tuple(flows))


def extract_plans(graph: PlanGraph, request: AbstractRequest, k: int,
                  token: Optional[ExtractionToken] = None
                  ) -> tuple[list[Plan], ExtractionToken]:
    """Up to k further plans plus the continuation token.

    A short batch (fewer than k plans) means the enumeration is exhausted
    and the returned token is terminal.
    """
    if k < 0:
        raise PlannerError("k must be non-negative")
    if token is None:
        token = ExtractionToken(graph)
    elif token.graph is not graph:
        raise StaleTokenError("token belongs to a different graph")
    if token.exhausted or k == 0:
        return [], token
    if token._gen is None:
        token._gen = _enumerate_plans(graph)
    plans: list[Plan] = []
    while len(plans) < k:
        try:
            plans.append(next(token._gen))
        except StopIteration:
            token.exhausted = True
            break
    token.emitted += len(plans)
    return plans, token


# --------------------------------------------------------------------------
# Plan -> process
# --------------------------------------------------------------------------

def plan_to_process(plan: Plan, snapshot: RegistrySnapshot,
                    ontology: OntologyStore) -> CompositeProcess:
    """Layers become a Sequence of Parallel constructs (singletons collapse
    to plain steps); consolidations are auto-filled from the support edges
    the plan used; chosen outcomes are recorded on the steps."""
    steps: dict[str, Step] = {}
    ids: dict[tuple[int, ActionNode], str] = {}
    children: list = []
    n = 0
    for li, layer in enumerate(plan.layers, start=1):
        nodes = sorted(layer, key=lambda x: x.sort_key())
        if not nodes:
            continue
        group: list[str] = []
        for node in nodes:
            if snapshot.by_id(node.service) is None:
                raise PlannerError(
                    f"plan references deregistered service '{node.service}'")
            n += 1
            sid = f"s{n}"
            ids[(li, node)] = sid
            steps[sid] = Step(id=sid, service=node.service,
                              outcome=node.outcome,
                              provenance=PROVENANCE_AUTO)
            group.append(sid)
        if len(group) == 1:
            children.append(group[0])
        else:
            children.append(Construct(PARALLEL, list(group)))

    consolidations: list[Consolidation] = []
    seen: set[tuple] = set()
    for edge in plan.flows:
        if edge.producer is None:
            continue  # fed by the request's available inputs
        producer_id = ids.get((edge.producer_level, edge.producer))
        consumer_id = ids.get((edge.consumer_level, edge.consumer))
        if producer_id is None or consumer_id is None:
            continue
        profile = snapshot.by_id(edge.producer.service)
        assert isinstance(edge.prop, AvailProp)
        out_params = sorted(p.name for p in profile.outputs
                            if p.type == edge.prop.type)
        if not out_params:
            continue
        c = Consolidation(producer=producer_id, output=out_params[0],
                          consumer=consumer_id, input=edge.input_param,
                          provenance=PROVENANCE_AUTO)
        if c.key() in seen or any(x.consumer == c.consumer
                                  and x.input == c.input
                                  for x in consolidations):
            continue
        seen.add(c.key())
        consolidations.append(c)

    proc = CompositeProcess(steps=steps,
                            control=Construct(SEQUENCE, children),
                            consolidations=consolidations)
    proc.validate()
    return proc


# --------------------------------------------------------------------------
# Pairwise conflict analysis (shared with the assist layer)
# --------------------------------------------------------------------------

def patterns_may_overlap(a: GroundPattern, b: GroundPattern,
                         ontology: OntologyStore) -> bool:
    """Could some proposition match both patterns? Conservative."""
    rel = (ontology.match_degree(a.status_class, b.status_class,
                                 strict=False).degree.value != "Fail")
    if not rel:
        return False
    da, db = dict(a.signature), dict(b.signature)
    for name in set(da) & set(db):
        x, y = da[name], db[name]
        if x[0] == "lit" and y[0] == "lit" and x != y:
            return False
        if x[0] == "class" and y[0] == "class":
            if ontology.match_degree(x[1], y[1],
                                     strict=False).degree.value == "Fail":
                return False
    return True


def static_conflict(a: GroundAction, b: GroundAction,
                    ontology: OntologyStore) -> Optional[str]:
    """Level-free mutex screen for two grounded actions.

    Returns the rule name, or None.  Used for suggestions about partial
    processes where no plan-graph level exists; conservative on
    interference (pattern overlap instead of support analysis).
    """
    if a.service == b.service and a.outcome != b.outcome:
        return "outcome-exclusivity"
    for x, y in ((a, b), (b, a)):
        for pat in x.delete_patterns:
            for p in y.adds:
                if pattern_matches(p, pat, ontology):
                    return "inconsistent-effects"
        for pat in x.delete_patterns:
            for r in y.requirements:
                if isinstance(r, StatusReq) and patterns_may_overlap(
                        pat, r.pattern, ontology):
                    return "interference"
    return None
