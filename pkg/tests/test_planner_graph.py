from __future__ import annotations

import pytest

from serviceloom.diagnostics import Kind
from serviceloom.ontology import StaleClosureError
from serviceloom.planner import (AbstractRequest, ActionNode, PlannerError,
                                 build_graph, static_conflict)
from serviceloom.profiles import (ConditionalEffect, Param, ServiceProfile,
                                  StatusPattern)
from serviceloom.registry import Registry
from serviceloom.semantics import ground_actions

from conftest import load_store

STATUS_ONTOLOGY = """
classes:
  - iri: X
  - iri: Y
  - iri: Z
  - iri: Ready
  - iri: Done
"""


def mk_registry(store, *profiles) -> Registry:
    registry = Registry()
    for p in profiles:
        registry.register(p, store)
    return registry


def svc(sid, ins=(), outs=(), pre=(), effects=None):
    return ServiceProfile(
        id=sid, name=sid,
        inputs=tuple(Param(f"in{i}", t) for i, t in enumerate(ins)),
        outputs=tuple(Param(f"out{i}", t) for i, t in enumerate(outs)),
        preconditions=tuple(StatusPattern.make(c) for c in pre),
        effects=tuple(effects) if effects else
        (ConditionalEffect("effect"),))


def eff(label, adds=(), deletes=()):
    return ConditionalEffect(
        label,
        adds=tuple(StatusPattern.make(c) for c in adds),
        deletes=tuple(StatusPattern.make(c) for c in deletes))


# -- build_graph ----------------------------------------------------------------

def test_goals_in_initial_state_single_layer(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:Quote"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    assert graph.goals_reachable()
    assert len(graph.action_layers) == 0


def test_rfq_quote_reachable_at_level_one(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    assert graph.goals_reachable()
    assert len(graph.action_layers) == 1


def test_disconnected_goal_levels_off_unreachable(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:PurchaseOrder"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    assert graph.leveled_off
    assert not graph.goals_reachable()


def test_planning_requires_classified_ontology(rfq_registry):
    from serviceloom.ontology import OntologyStore
    store, _ = OntologyStore().load("<A> <type> <Class> .")
    with pytest.raises(StaleClosureError):
        build_graph(AbstractRequest(goal_outputs=["A"],
                                    available_inputs=[]),
                    rfq_registry.snapshot(), store)


def test_request_needs_goals():
    with pytest.raises(PlannerError):
        AbstractRequest(available_inputs=["X"]).validate()


def test_horizon_reported(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:PurchaseOrder"],
                              horizon=1)
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    assert graph.horizon_hit or graph.leveled_off
    if graph.horizon_hit:
        assert any(d.kind is Kind.HORIZON_EXCEEDED
                   for d in graph.diagnostics)


def test_nonfunctional_filters_restrict_planning(rfq_store, rfq_registry):
    request = AbstractRequest(
        available_inputs=["ex:RFQ"], goal_outputs=["ex:Quote"],
        nonfunctional_filters=[("price", ">", 1000)])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    assert not graph.goals_reachable()


# -- expansion and mutex rules -----------------------------------------------------

def test_no_applicable_services_levels_off_immediately(rfq_store):
    registry = mk_registry(rfq_store,
                           svc("only", ins=["ex:Order"], outs=["ex:Quote"]))
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, registry.snapshot(), rfq_store)
    assert graph.leveled_off
    assert graph.prop_layers[-1] == graph.prop_layers[0]


def test_inconsistent_effects_mutex():
    store = load_store(STATUS_ONTOLOGY)
    asserter = svc("asserter", ins=["X"],
                   effects=[eff("go", adds=["Ready"])])
    deleter = svc("deleter", ins=["X"],
                  effects=[eff("go", deletes=["Ready"])])
    registry = mk_registry(store, asserter, deleter)
    request = AbstractRequest(available_inputs=["X"], goal_outputs=["X"])
    graph = build_graph(request, registry.snapshot(), store)
    if not graph.action_layers:
        graph.expand_level()
    a = ActionNode(service="asserter", outcome="go")
    b = ActionNode(service="deleter", outcome="go")
    # Hand-computed: the pair lands in the inconsistent-effects rule.
    assert graph.actions_mutex(0, a, b)


def test_two_outcomes_always_mutex():
    store = load_store(STATUS_ONTOLOGY)
    approval = svc("approval", ins=["X"],
                   effects=[eff("approved", adds=["Done"]),
                            eff("rejected", adds=["Ready"])])
    registry = mk_registry(store, approval)
    request = AbstractRequest(available_inputs=["X"],
                              goal_statuses=[StatusPattern.make("Done")])
    graph = build_graph(request, registry.snapshot(), store)
    layer = graph.action_layers[0]
    approved = ActionNode(service="approval", outcome="approved")
    rejected = ActionNode(service="approval", outcome="rejected")
    assert approved in layer and rejected in layer
    assert graph.actions_mutex(0, approved, rejected)


def test_interference_mutex_with_noop():
    store = load_store(STATUS_ONTOLOGY)
    deleter = svc("deleter", ins=["X"],
                  effects=[eff("go", deletes=["Ready"])])
    registry = mk_registry(store, deleter)
    request = AbstractRequest(
        available_inputs=["X"],
        initial_statuses=[StatusPattern.make("Ready")],
        goal_statuses=[StatusPattern.make("Ready")])
    graph = build_graph(request, registry.snapshot(), store)
    if not graph.action_layers:
        graph.expand_level()
    ready_prop = next(p for p in graph.prop_layers[0]
                      if getattr(p, "status_class", None) == "Ready")
    noop = ActionNode(noop=ready_prop)
    deleter_node = ActionNode(service="deleter", outcome="go")
    assert graph.actions_mutex(0, noop, deleter_node)


def test_subsumption_applicability(rfq_store):
    # DetailedQuote flows into a Quote-typed input via the closure.
    registry = mk_registry(
        rfq_store,
        svc("detailer", ins=["ex:RFQ"], outs=["ex:DetailedQuote"]),
        svc("orderer", ins=["ex:Quote"], outs=["ex:Order"]))
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Order"])
    graph = build_graph(request, registry.snapshot(), rfq_store)
    assert graph.goals_reachable()
    assert len(graph.action_layers) == 2


def test_goal_mutex_blocks_reachability():
    store = load_store(STATUS_ONTOLOGY)
    # Two goals achievable only through mutually mutex propositions: one
    # service's two outcomes produce them exclusively.
    split = svc("split", ins=["X"],
                effects=[eff("a", adds=["Ready"]),
                         eff("b", adds=["Done"])])
    registry = mk_registry(store, split)
    request = AbstractRequest(
        available_inputs=["X"],
        goal_statuses=[StatusPattern.make("Ready"),
                       StatusPattern.make("Done")])
    graph = build_graph(request, registry.snapshot(), store)
    graph.expand_level()
    # At level 1 both statuses exist but only via mutex outcomes.
    assert not graph.goals_reachable(1)


def test_expand_level_idempotent_after_leveloff(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:PurchaseOrder"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    assert graph.leveled_off
    layers = len(graph.action_layers)
    graph.expand_level()
    assert len(graph.action_layers) == layers


def test_monotone_proposition_layers(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Order"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    for earlier, later in zip(graph.prop_layers, graph.prop_layers[1:]):
        assert earlier <= later


def test_mutex_symmetric_never_reflexive(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Order"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    for level in graph.action_mutex:
        for pair in level:
            assert len(pair) == 2


# -- static pairwise conflicts -----------------------------------------------------

def test_static_conflict_rules():
    store = load_store(STATUS_ONTOLOGY)
    split = svc("split", ins=["X"],
                effects=[eff("a", adds=["Ready"]), eff("b", adds=["Done"])])
    asserter = svc("asserter", ins=["X"], effects=[eff("go", adds=["Ready"])])
    deleter = svc("deleter", ins=["X"], effects=[eff("go", deletes=["Ready"])])
    needs = svc("needs", ins=["X"], pre=["Ready"])
    ga = {p.id: ground_actions(p, store)
          for p in (split, asserter, deleter, needs)}
    assert static_conflict(ga["split"][0], ga["split"][1],
                           store) == "outcome-exclusivity"
    assert static_conflict(ga["asserter"][0], ga["deleter"][0],
                           store) == "inconsistent-effects"
    assert static_conflict(ga["deleter"][0], ga["needs"][0],
                           store) == "interference"
    assert static_conflict(ga["asserter"][0], ga["needs"][0], store) is None
