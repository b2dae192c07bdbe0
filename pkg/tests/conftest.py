from __future__ import annotations

import random

import pytest

from serviceloom.ontology import OntologyStore
from serviceloom.profiles import (ConditionalEffect, Param, ServiceProfile,
                                  StatusPattern)
from serviceloom.registry import Registry

RFQ_ONTOLOGY = """
classes:
  - iri: ex:Document
  - iri: ex:RFQ
    subclass_of: [ex:Document]
  - iri: ex:Quote
    subclass_of: [ex:Document]
  - iri: ex:DetailedQuote
    subclass_of: [ex:Quote]
  - iri: ex:Order
    subclass_of: [ex:Document]
  - iri: ex:PurchaseOrder
    subclass_of: [ex:Document]
  - iri: ex:Submitted
  - iri: ex:Approved
properties:
  - iri: ex:doc
    domain: ex:Submitted
    range: ex:Document
"""

FIGURE6_ONTOLOGY = """
classes:
  - iri: po:Location
  - iri: po:ship_to_location
    subclass_of: [po:Location]
  - iri: po:warehouse_address
    subclass_of: [po:ship_to_location]
  - iri: po:PurchaseOrder
  - iri: po:Confirmation
"""


def load_store(document: str) -> OntologyStore:
    store, _ = OntologyStore().load(document)
    store, _ = store.classify()
    return store


@pytest.fixture
def rfq_store() -> OntologyStore:
    return load_store(RFQ_ONTOLOGY)


def quote_service() -> ServiceProfile:
    return ServiceProfile(
        id="quote-service", name="Quote Service",
        inputs=(Param("rfq", "ex:RFQ"),),
        outputs=(Param("quote", "ex:Quote"),),
        nonfunctional=(("owner", "sales"), ("price", 10)))


def precise_quote_service() -> ServiceProfile:
    return ServiceProfile(
        id="precise-quote-service", name="Precise Quote Service",
        inputs=(Param("rfq", "ex:RFQ"),),
        outputs=(Param("quote", "ex:DetailedQuote"),),
        nonfunctional=(("owner", "sales"), ("price", 25)))


def order_service() -> ServiceProfile:
    return ServiceProfile(
        id="order-service", name="Order Service",
        inputs=(Param("quote", "ex:Quote"),),
        outputs=(Param("order", "ex:Order"),))


def purchase_service() -> ServiceProfile:
    return ServiceProfile(
        id="purchase-service", name="Purchase Service",
        inputs=(Param("po", "ex:PurchaseOrder"),),
        outputs=(),
        effects=(ConditionalEffect(
            "submitted",
            adds=(StatusPattern.make("ex:Submitted", {"ex:doc": "po"}),)),))


@pytest.fixture
def rfq_registry(rfq_store) -> Registry:
    registry = Registry()
    for profile in (quote_service(), precise_quote_service(),
                    order_service(), purchase_service()):
        registry.register(profile, rfq_store)
    return registry


@pytest.fixture
def figure6_store() -> OntologyStore:
    return load_store(FIGURE6_ONTOLOGY)


@pytest.fixture
def figure6_registry(figure6_store) -> Registry:
    registry = Registry()
    registry.register(ServiceProfile(
        id="warehouse-service", name="Select Warehouse",
        inputs=(Param("po", "po:PurchaseOrder"),),
        outputs=(Param("warehouse_address", "po:warehouse_address"),)),
        figure6_store)
    registry.register(ServiceProfile(
        id="shipping-service", name="Arrange Shipping",
        inputs=(Param("ship_to_location", "po:ship_to_location"),),
        outputs=(Param("confirmation", "po:Confirmation"),)),
        figure6_store)
    return registry


# --------------------------------------------------------------------------
# Seeded random domains for property and acceptance tests
# --------------------------------------------------------------------------


def random_dag(rng: random.Random, n: int) -> dict[str, set[str]]:
    """Edges child -> parents over classes c0..c{n-1}; c0 is a root."""
    edges: dict[str, set[str]] = {}
    for i in range(1, n):
        parents = {f"c{rng.randrange(i)}"}
        if i > 1 and rng.random() < 0.3:
            parents.add(f"c{rng.randrange(i)}")
        edges[f"c{i}"] = parents
    return edges


def edges_to_document(edges: dict[str, set[str]], n: int) -> str:
    lines = [f"<c{i}> <type> <Class> ." for i in range(n)]
    for child in sorted(edges):
        for parent in sorted(edges[child]):
            lines.append(f"<{child}> <subClassOf> <{parent}> .")
    return "\n".join(lines) + "\n"


def random_domain(rng: random.Random, n_classes=8, n_services=5,
                  max_params=3, status_rate=0.5, outcome_rate=0.2):
    """A small random planning domain plus a request biased to be
    interesting: goals drawn from service outputs, a couple of available
    inputs, occasional statuses, deletes, and two-outcome services."""
    from serviceloom.planner import AbstractRequest

    classes = [f"c{i}" for i in range(n_classes)]
    statuses = [f"st{i}" for i in range(3)]
    edges = random_dag(rng, n_classes)
    document = edges_to_document(edges, n_classes)
    document += "".join(f"<{s}> <type> <Class> .\n" for s in statuses)

    profiles = []
    for i in range(n_services):
        n_in = rng.randint(1, max_params)
        n_out = rng.randint(1, max_params)
        inputs = tuple(Param(f"in{j}", rng.choice(classes))
                       for j in range(n_in))
        outputs = tuple(Param(f"out{j}", rng.choice(classes))
                        for j in range(n_out))
        preconditions = ()
        if rng.random() < status_rate * 0.5:
            preconditions = (StatusPattern.make(rng.choice(statuses)),)
        effects = []
        n_outcomes = 2 if rng.random() < outcome_rate else 1
        for oi in range(n_outcomes):
            adds = []
            deletes = []
            if rng.random() < status_rate:
                adds.append(StatusPattern.make(rng.choice(statuses)))
            if rng.random() < status_rate * 0.6:
                cand = rng.choice(statuses)
                if StatusPattern.make(cand) not in adds:
                    deletes.append(StatusPattern.make(cand))
            effects.append(ConditionalEffect(
                f"o{oi}", adds=tuple(adds), deletes=tuple(deletes)))
        profiles.append(ServiceProfile(
            id=f"svc{i}", name=f"Service {i}", inputs=inputs,
            outputs=outputs, preconditions=preconditions,
            effects=tuple(effects)))

    producible = sorted({p.type for prof in profiles for p in prof.outputs})
    goal = rng.choice(producible) if producible else classes[0]
    goals = [goal]
    if producible and rng.random() < 0.3:
        extra = rng.choice(producible)
        if extra not in goals:
            goals.append(extra)
    available = sorted({rng.choice(classes)
                        for _ in range(rng.randint(1, 2))})
    initial_statuses = []
    if rng.random() < status_rate * 0.5:
        initial_statuses.append(StatusPattern.make(rng.choice(statuses)))
    goal_statuses = []
    if rng.random() < 0.2:
        goal_statuses.append(StatusPattern.make(rng.choice(statuses)))
    request = AbstractRequest(
        available_inputs=available,
        initial_statuses=initial_statuses,
        goal_outputs=goals,
        goal_statuses=goal_statuses)
    return document, edges, profiles, request


def build_engine_domain(document: str, profiles):
    store = load_store(document)
    registry = Registry()
    for profile in profiles:
        registry.register(profile, store)
    return store, registry
