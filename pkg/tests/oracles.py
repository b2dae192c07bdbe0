"""Independent oracles for the test suite.

Everything here is implemented from scratch against the documented
semantics and shares no reasoning or planning code with the package:
ancestor sets come from a plain BFS (or a numpy boolean-matrix closure for
the large randomized checks), matching and state evolution are re-derived
from the profile data, and plan enumeration is a brute-force forward
search over layered action subsets with an explicit justification check.

A layered plan is valid when
  * no layer contains one service twice,
  * no action's deletes remove another layer-mate's added propositions,
  * there is a justification: every goal maps to a matching proposition of
    the final state, every needed proposition is carried or produced, every
    scheduled action produces at least one needed proposition, and each
    used action's requirements take supports from the previous state that
    survive the deletes of the co-scheduled actions.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

from serviceloom.profiles import ServiceProfile, StatusPattern

# --------------------------------------------------------------------------
# Subsumption
# --------------------------------------------------------------------------


def brute_force_ancestors(nodes, edges):
    """Reflexive-transitive ancestors with shortest distances, by BFS."""
    closure = {}
    for node in nodes:
        dist = {node: 0}
        queue = deque([node])
        while queue:
            cur = queue.popleft()
            for parent in edges.get(cur, ()):
                if parent not in dist:
                    dist[parent] = dist[cur] + 1
                    queue.append(parent)
        closure[node] = dist
    return closure


def matrix_closure(n, edge_pairs):
    """Boolean reachability matrix by repeated squaring (numpy)."""
    import numpy as np
    m = np.eye(n, dtype=bool)
    for child, parent in edge_pairs:
        m[child, parent] = True
    while True:
        nxt = m | (m @ m)
        if (nxt == m).all():
            return m
        m = nxt


# --------------------------------------------------------------------------
# Ground semantics, re-derived
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OAction:
    service: str
    outcome: str
    reqs: tuple           # ("avail", param, type) | ("status", cls, sig)
    adds: tuple           # ("avail", type) | ("status", cls, sig)
    deletes: tuple        # ("status", cls, sig) patterns


class World:
    """Profiles plus an independently computed subsumption relation."""

    def __init__(self, profiles, edges, known_classes):
        self.profiles = {p.id: p for p in profiles}
        nodes = set(known_classes)
        for child, parents in edges.items():
            nodes.add(child)
            nodes.update(parents)
        self.anc = brute_force_ancestors(nodes, edges)
        self.known = nodes
        self.actions = {}
        for p in profiles:
            for eff in p.effects:
                self.actions[(p.id, eff.label)] = self._ground(p, eff)

    def subsumed(self, specific, general) -> bool:
        if specific not in self.known or general not in self.known:
            return False
        return general in self.anc[specific]

    def _descriptor(self, target, params):
        if target in params:
            return ("class", params[target])
        if target in self.known:
            return ("class", target)
        return ("lit", target)

    def _sig(self, pattern: StatusPattern, params):
        return tuple(sorted((name, self._descriptor(value, params))
                            for name, value in pattern.bindings))

    def _ground(self, profile: ServiceProfile, effect) -> OAction:
        params = {p.name: p.type for p in profile.inputs + profile.outputs}
        reqs = [("avail", p.name, p.type) for p in profile.inputs]
        reqs += [("status", pat.status_class, self._sig(pat, params))
                 for pat in profile.preconditions]
        adds = [("avail", p.type) for p in profile.outputs]
        adds += [("status", pat.status_class, self._sig(pat, params))
                 for pat in effect.adds]
        deletes = [("status", pat.status_class, self._sig(pat, params))
                   for pat in effect.deletes]
        return OAction(profile.id, effect.label, tuple(reqs),
                       tuple(dict.fromkeys(adds)), tuple(deletes))

    # -- matching ---------------------------------------------------------

    def _desc_ok(self, provided, required) -> bool:
        if provided[0] == "lit" or required[0] == "lit":
            return provided == required
        return self.subsumed(provided[1], required[1])

    def prop_matches_pattern(self, prop, pattern) -> bool:
        if prop[0] != "status":
            return False
        _k, cls, sig = prop
        _pk, pcls, psig = pattern
        if not self.subsumed(cls, pcls):
            return False
        have = dict(sig)
        for name, desc in psig:
            if name not in have or not self._desc_ok(have[name], desc):
                return False
        return True

    def satisfies(self, prop, req) -> bool:
        if req[0] == "avail":
            return (prop[0] == "avail"
                    and self.subsumed(prop[1], req[2]))
        return self.prop_matches_pattern(prop, ("status", req[1], req[2]))

    def deleted_by(self, prop, action: OAction) -> bool:
        return any(self.prop_matches_pattern(prop, pat)
                   for pat in action.deletes)

    # -- state ------------------------------------------------------------

    def initial_state(self, request) -> frozenset:
        props = {("avail", t) for t in request.available_inputs}
        for pat in request.initial_statuses:
            props.add(("status", pat.status_class, self._sig(pat, {})))
        return frozenset(props)

    def apply_layer(self, state, actions) -> frozenset:
        adds = {p for a in actions for p in a.adds}
        out = set(state) | adds
        out -= {p for p in out
                for a in actions if self.deleted_by(p, a)}
        return frozenset(out)

    def goal_satisfiers(self, request, state):
        """Per goal, the matching propositions of the state."""
        out = []
        for cls in sorted(request.goal_outputs):
            out.append([p for p in state
                        if p[0] == "avail" and self.subsumed(p[1], cls)])
        for pat in request.goal_statuses:
            target = ("status", pat.status_class, self._sig(pat, {}))
            out.append([p for p in state
                        if self.prop_matches_pattern(p, target)])
        return out

    def goals_hold(self, request, state) -> bool:
        return all(s for s in self.goal_satisfiers(request, state))


# --------------------------------------------------------------------------
# Plan validity and justification
# --------------------------------------------------------------------------


def layer_feasible(world: World, state, actions) -> bool:
    """Independence-style co-execution check for one layer."""
    services = [a.service for a in actions]
    if len(services) != len(set(services)):
        return False
    for a, b in itertools.permutations(actions, 2):
        for p in b.adds:
            if world.deleted_by(p, a):
                return False  # inconsistent effects
    for b in actions:
        others = [a for a in actions if a is not b]
        for req in b.reqs:
            survivors = [p for p in state
                         if world.satisfies(p, req)
                         and not any(world.deleted_by(p, a)
                                     for a in others)]
            if not survivors:
                return False
    return True


def justified(world: World, request, layers, states) -> bool:
    """Does a backward producer/support assignment exist that uses every
    scheduled action at least once?"""
    memo: dict = {}

    def back(i, needed: frozenset) -> bool:
        if i == 0:
            return all(p in states[0] for p in needed)
        key = (i, needed)
        if key in memo:
            return memo[key]
        acts = layers[i - 1]
        ordered = sorted(needed)
        options = []
        for p in ordered:
            opts = []
            if p in states[i - 1]:
                opts.append(None)  # carry
            opts += [a for a in acts if p in a.adds]
            if not opts:
                memo[key] = False
                return False
            options.append(opts)
        for combo in itertools.product(*options):
            used = {a for a in combo if a is not None}
            if set(acts) - used:
                continue  # some scheduled action produces nothing needed
            support_lists = []
            feasible = True
            for a in sorted(used, key=lambda a: (a.service, a.outcome)):
                others = [b for b in used if b is not a]
                for req in a.reqs:
                    supports = [p for p in states[i - 1]
                                if world.satisfies(p, req)
                                and not any(world.deleted_by(p, b)
                                            for b in others)]
                    if not supports:
                        feasible = False
                        break
                    support_lists.append(supports)
                if not feasible:
                    break
            if not feasible:
                continue
            carried = {p for p, producer in zip(ordered, combo)
                       if producer is None}
            for support_combo in itertools.product(*support_lists):
                if back(i - 1, frozenset(carried | set(support_combo))):
                    memo[key] = True
                    return True
        memo[key] = False
        return False

    final = states[len(layers)]
    per_goal = world.goal_satisfiers(request, final)
    if any(not g for g in per_goal):
        return False
    for goal_combo in itertools.product(*per_goal):
        if back(len(layers), frozenset(goal_combo)):
            return True
    return False


def plan_valid(world: World, request, canonical_layers) -> bool:
    """Forward check of a canonical plan (tuple of frozensets of
    (service, outcome) pairs) including the justification."""
    try:
        layers = [[world.actions[pair] for pair in sorted(layer)]
                  for layer in canonical_layers]
    except KeyError:
        return False
    states = [world.initial_state(request)]
    for layer in layers:
        if not layer_feasible(world, states[-1], layer):
            return False
        states.append(world.apply_layer(states[-1], layer))
    if not world.goals_hold(request, states[-1]):
        return False
    return justified(world, request, layers, states)


def enumerate_minimal_plans(world: World, request, max_depth=6,
                            cap=20000) -> tuple[int, set]:
    """Brute-force DFS over layered action subsets.

    Returns (minimal layer count, set of canonical plans at that count);
    (-1, empty set) when nothing is found within max_depth.
    """
    init = world.initial_state(request)
    if world.goals_hold(request, init):
        return 0, {()}
    all_actions = sorted(world.actions.values(),
                         key=lambda a: (a.service, a.outcome))

    def optimistic_reachable(state, remaining) -> bool:
        # Ignore deletes; can the goals possibly appear within `remaining`?
        cur = set(state)
        for _ in range(remaining):
            new = set(cur)
            for a in all_actions:
                if all(any(world.satisfies(p, r) for p in cur)
                       for r in a.reqs):
                    new.update(a.adds)
            if new == cur:
                break
            cur = new
        return world.goals_hold(request, cur)

    for depth in range(1, max_depth + 1):
        found: set = set()
        budget = [cap]

        def rec(state, layers_left, prefix):
            budget[0] -= 1
            if budget[0] <= 0:
                raise RuntimeError("oracle enumeration budget exhausted")
            if layers_left == 0:
                states = [init]
                lactions = [[world.actions[pair] for pair in sorted(layer)]
                            for layer in prefix]
                for layer in lactions:
                    states.append(world.apply_layer(states[-1], layer))
                if justified(world, request, lactions, states):
                    found.add(tuple(prefix))
                return
            if not optimistic_reachable(state, layers_left):
                return
            applicable = []
            for a in all_actions:
                if all(any(world.satisfies(p, r) for p in state)
                       for r in a.reqs):
                    applicable.append(a)
            for size in range(1, len(applicable) + 1):
                for combo in itertools.combinations(applicable, size):
                    if not layer_feasible(world, state, list(combo)):
                        continue
                    layer = frozenset((a.service, a.outcome) for a in combo)
                    rec(world.apply_layer(state, list(combo)),
                        layers_left - 1, prefix + [layer])

        rec(init, depth, [])
        if found:
            return depth, found
    return -1, set()


# --------------------------------------------------------------------------
# Independent mutex recomputation over a concrete plan
# --------------------------------------------------------------------------


def plan_mutex_violations(world: World, request, canonical_layers) -> list:
    """Pairs in one layer related by one of the three mutex rules,
    evaluated against the plan's own pre-layer states."""
    violations = []
    layers = [[world.actions[pair] for pair in sorted(layer)]
              for layer in canonical_layers]
    state = world.initial_state(request)
    for li, layer in enumerate(layers):
        for a, b in itertools.combinations(layer, 2):
            rule = None
            if a.service == b.service and a.outcome != b.outcome:
                rule = "outcome-exclusivity"
            if rule is None:
                for x, y in ((a, b), (b, a)):
                    if any(world.deleted_by(p, x) for p in y.adds):
                        rule = "inconsistent-effects"
                        break
            if rule is None:
                for x, y in ((a, b), (b, a)):
                    for req in y.reqs:
                        sup = [p for p in state if world.satisfies(p, req)]
                        if sup and all(world.deleted_by(p, x) for p in sup):
                            rule = "interference"
                            break
                    if rule:
                        break
            # Competing needs relates propositions that can never co-hold;
            # inside a concrete state every support is co-true, so the rule
            # cannot fire here.
            if rule:
                violations.append((li, a.service, b.service, rule))
        state = world.apply_layer(state, layer)
    return violations


# --------------------------------------------------------------------------
# Discovery oracle
# --------------------------------------------------------------------------


def _distance(world: World, specific, general):
    return world.anc.get(specific, {}).get(general)


def _degree(world: World, provided, required):
    """Re-derivation of the documented match ranking."""
    if provided not in world.known or required not in world.known:
        return ("Fail", None)
    if provided == required:
        return ("Exact", 0)
    d = _distance(world, provided, required)
    if d is not None:
        return ("Plugin", d)
    d = _distance(world, required, provided)
    if d is not None:
        return ("Subsume", d)
    return ("Fail", None)


def brute_force_discover(world: World, profiles, query) -> list[str]:
    """Expected discovery result ids, in the documented ranking order."""
    rows = []
    for profile in profiles:
        degrees = []
        ok = True
        for goal in query.desired_outputs:
            cands = [_degree(world, p.type, goal) for p in profile.outputs]
            cands = [c for c in cands if c[0] in ("Exact", "Plugin")]
            if not cands:
                ok = False
                break
            cands.sort(key=lambda c: (0 if c[0] == "Exact" else 1, c[1]))
            degrees.append(cands[0])
        if ok:
            for pat in query.desired_effects:
                cands = [_degree(world, add.status_class, pat.status_class)
                         for eff in profile.effects for add in eff.adds]
                cands = [c for c in cands if c[0] in ("Exact", "Plugin")]
                if not cands:
                    ok = False
                    break
                cands.sort(key=lambda c: (0 if c[0] == "Exact" else 1, c[1]))
                degrees.append(cands[0])
        if ok and query.required_inputs:
            for param in profile.inputs:
                cands = [_degree(world, sup, param.type)
                         for sup in query.required_inputs]
                cands = [c for c in cands if c[0] in ("Exact", "Plugin")]
                if not cands:
                    ok = False
                    break
                cands.sort(key=lambda c: (0 if c[0] == "Exact" else 1, c[1]))
                degrees.append(cands[0])
        if not ok:
            continue
        exact = sum(1 for d in degrees if d[0] == "Exact")
        plugin = sum(1 for d in degrees if d[0] == "Plugin")
        total = sum(d[1] or 0 for d in degrees)
        rows.append(((exact, plugin, -total), profile.id))
    rows.sort(key=lambda r: (tuple(-x for x in r[0]), r[1]))
    if query.max_results is not None:
        rows = rows[:query.max_results]
    return [r[1] for r in rows]
