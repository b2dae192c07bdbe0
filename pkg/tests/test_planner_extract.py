from __future__ import annotations

import random

import pytest

from serviceloom.planner import (AbstractRequest, build_graph, extract_plans,
                                 plan_to_process)
from serviceloom.process import PARALLEL, SEQUENCE, Construct
from serviceloom.profiles import Param, ServiceProfile
from serviceloom.registry import Registry

from conftest import build_engine_domain, load_store, random_domain
from oracles import World, enumerate_minimal_plans, plan_valid

THREE_WAY_ONTOLOGY = """
classes:
  - iri: I
  - iri: G
"""


def three_plan_domain():
    """Exactly three minimal plans (brute-force verified in the test)."""
    store = load_store(THREE_WAY_ONTOLOGY)
    registry = Registry()
    for i in range(3):
        registry.register(ServiceProfile(
            id=f"maker{i}", name=f"Maker {i}",
            inputs=(Param("x", "I"),), outputs=(Param("g", "G"),)),
            store)
    request = AbstractRequest(available_inputs=["I"], goal_outputs=["G"])
    return store, registry, request


def exhaust(graph, request, batch=50):
    plans = []
    token = None
    while True:
        got, token = extract_plans(graph, request, batch, token)
        plans.extend(got)
        if token.exhausted:
            return plans, token


def collect_minimal(graph, request):
    """All minimal-layer plans: plans come out in nondecreasing layer
    count, so pull until a longer one appears."""
    plans = []
    token = None
    while True:
        got, token = extract_plans(graph, request, 1, token)
        if not got:
            return plans
        (plan,) = got
        if plans and len(plan.canonical()) > len(plans[0].canonical()):
            return plans
        plans.append(plan)


# -- fixtures -------------------------------------------------------------------

def test_goal_in_initial_state_yields_single_empty_plan(rfq_store,
                                                        rfq_registry):
    request = AbstractRequest(available_inputs=["ex:Quote"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, token = exhaust(graph, request)
    assert [p.canonical() for p in plans] == [()]


def test_rfq_quote_single_plan(rfq_store):
    registry = Registry()
    registry.register(ServiceProfile(
        id="quote-service", name="Quote",
        inputs=(Param("rfq", "ex:RFQ"),),
        outputs=(Param("quote", "ex:Quote"),)), rfq_store)
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 5)
    # Brute-force enumeration of this one-service domain finds exactly one.
    assert [p.canonical() for p in plans] == [
        (frozenset({("quote-service", "effect")}),)]


def test_two_step_chain(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Order"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 1)
    assert len(plans) == 1
    canon = plans[0].canonical()
    assert len(canon) == 2
    assert canon[1] == frozenset({("order-service", "effect")})


def test_unreachable_goal_returns_empty(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:PurchaseOrder"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, token = extract_plans(graph, request, 3)
    assert plans == [] and token.exhausted


def test_one_at_a_time_extraction_with_token():
    store, registry, request = three_plan_domain()
    graph = build_graph(request, registry.snapshot(), store)
    first, token = extract_plans(graph, request, 2)
    assert len(first) == 2 and not token.exhausted
    second, token = extract_plans(graph, request, 2, token)
    assert len(second) == 1 and token.exhausted
    third, token = extract_plans(graph, request, 2, token)
    assert third == [] and token.exhausted
    canons = {p.canonical() for p in first + second}
    assert len(canons) == 3


def test_three_plan_count_verified_by_bruteforce():
    store, registry, request = three_plan_domain()
    snapshot = registry.snapshot()
    world = World(snapshot.profiles, {}, store.classes)
    depth, plans = enumerate_minimal_plans(world, request)
    assert depth == 1 and len(plans) == 3


def test_enumeration_deterministic():
    store, registry, request = three_plan_domain()

    def run():
        graph = build_graph(request, registry.snapshot(), store)
        plans, _ = extract_plans(graph, request, 10)
        return [p.canonical() for p in plans]

    assert run() == run()


def test_plans_emitted_in_nondecreasing_layer_count(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, _token = exhaust(graph, request)
    sizes = [len(p.canonical()) for p in plans]
    assert sizes == sorted(sizes)


def test_assumptions_record_chosen_outcomes(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 5)
    assert plans
    for plan in plans:
        acted = {(n.service, n.outcome)
                 for layer in plan.layers for n in layer}
        assert plan.assumptions == frozenset(acted)
    all_assumed = set().union(*(p.assumptions for p in plans))
    assert ("quote-service", "effect") in all_assumed


# -- plan -> process -----------------------------------------------------------------

def test_empty_plan_gives_empty_process(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:Quote"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 1)
    proc = plan_to_process(plans[0], rfq_registry.snapshot(), rfq_store)
    assert proc.steps == {}


def test_two_layer_plan_becomes_sequence_with_consolidation(rfq_store):
    registry = Registry()
    registry.register(ServiceProfile(
        id="quote-service", name="Quote",
        inputs=(Param("rfq", "ex:RFQ"),),
        outputs=(Param("quote", "ex:Quote"),)), rfq_store)
    registry.register(ServiceProfile(
        id="order-service", name="Order",
        inputs=(Param("quote", "ex:Quote"),),
        outputs=(Param("order", "ex:Order"),)), rfq_store)
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Order"])
    graph = build_graph(request, registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 1)
    proc = plan_to_process(plans[0], registry.snapshot(), rfq_store)
    assert proc.control.kind == SEQUENCE
    assert [proc.steps[s].service for s in proc.step_ids()] \
        == ["quote-service", "order-service"]
    (c,) = proc.consolidations
    assert (c.producer, c.output, c.consumer, c.input) \
        == ("s1", "quote", "s2", "quote")


def test_parallel_layer_becomes_parallel_construct(rfq_store):
    registry = Registry()
    registry.register(ServiceProfile(
        id="a", name="a", inputs=(Param("x", "ex:RFQ"),),
        outputs=(Param("o", "ex:Quote"),)), rfq_store)
    registry.register(ServiceProfile(
        id="b", name="b", inputs=(Param("x", "ex:RFQ"),),
        outputs=(Param("o", "ex:Order"),)), rfq_store)
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote", "ex:Order"])
    graph = build_graph(request, registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 1)
    proc = plan_to_process(plans[0], registry.snapshot(), rfq_store)
    (layer,) = proc.control.children
    assert isinstance(layer, Construct) and layer.kind == PARALLEL


def test_plan_to_process_rejects_dangling(rfq_store, rfq_registry):
    request = AbstractRequest(available_inputs=["ex:RFQ"],
                              goal_outputs=["ex:Quote"])
    graph = build_graph(request, rfq_registry.snapshot(), rfq_store)
    plans, _ = extract_plans(graph, request, 1)
    used_service = next(iter(plans[0].assumptions))[0]
    rfq_registry.deregister(used_service)
    from serviceloom.planner import PlannerError
    with pytest.raises(PlannerError):
        plan_to_process(plans[0], rfq_registry.snapshot(), rfq_store)


# -- randomized validity and completeness ------------------------------------------

def test_random_domain_plans_pass_forward_simulation():
    rng = random.Random(1337)
    checked = 0
    for _ in range(30):
        document, edges, profiles, request = random_domain(rng)
        request.horizon = 4  # keep deep self-looping chains bounded
        store, registry = build_engine_domain(document, profiles)
        graph = build_graph(request, registry.snapshot(), store)
        plans, _ = extract_plans(graph, request, 10)
        world = World(profiles, edges, store.classes)
        for plan in plans:
            checked += 1
            assert plan_valid(world, request, plan.canonical()), \
                (request.to_dict(), plan.canonical())
    assert checked > 20  # the domains actually exercised extraction


def test_small_scale_completeness_against_bruteforce():
    rng = random.Random(90125)
    compared = 0
    for round_ in range(12):
        document, edges, profiles, request = random_domain(
            rng, n_classes=6, n_services=4, max_params=2)
        store, registry = build_engine_domain(document, profiles)
        graph = build_graph(request, registry.snapshot(), store)
        plans = collect_minimal(graph, request)
        world = World(profiles, edges, store.classes)
        depth, expected = enumerate_minimal_plans(world, request,
                                                  max_depth=4)
        if depth < 0:
            assert plans == [], round_
            continue
        got = {p.canonical() for p in plans}
        min_engine = min((len(p.canonical()) for p in plans), default=-1)
        assert min_engine == depth, round_
        assert got == expected, (round_, sorted(got), sorted(expected))
        compared += 1
    assert compared >= 6
