import random

import pytest

from tabsplus.canon import canonical_json
from tabsplus.errors import CycleDetected, Disconnected
from tabsplus.graph import (
    build_dag,
    dag_to_dict,
    dominators,
    to_dot,
    topological_ranks,
)

from .helpers import dag_from_edges, model_from_edges, random_dag_edges


# --- independent oracle: dominance via full path enumeration ---------------

def _paths_between(dag, frm, to):
    paths = []

    def walk(v, acc):
        acc.append(v)
        if v == to:
            paths.append(tuple(acc))
        else:
            for w in sorted(dag.succ(v)):
                walk(w, acc)
        acc.pop()

    walk(frm, [])
    return paths


def oracle_idoms(dag):
    """idom/ipdom straight from the definition: shared vertices of all paths."""
    doms = {}
    pdoms = {}
    for v in dag.vertices:
        fwd = _paths_between(dag, dag.source, v)
        shared = set(fwd[0])
        for p in fwd[1:]:
            shared &= set(p)
        doms[v] = shared
        bwd = _paths_between(dag, v, dag.sink)
        shared = set(bwd[0])
        for p in bwd[1:]:
            shared &= set(p)
        pdoms[v] = shared

    def closest(v, table):
        strict = table[v] - {v}
        # dominators of v are totally ordered; the largest set is the nearest
        return max(strict, key=lambda u: len(table[u])) if strict else v

    idom = {v: closest(v, doms) if v != dag.source else dag.source for v in dag.vertices}
    ipdom = {v: closest(v, pdoms) if v != dag.sink else dag.sink for v in dag.vertices}
    return idom, ipdom


# --- fixture ---------------------------------------------------------------

def test_fixture_shape(supply_dag):
    assert supply_dag.source == "buyer_start"
    assert supply_dag.sink == "buyer_end"
    assert len(supply_dag.vertices) == 24
    assert len(supply_dag.edges) == 25  # 16 sequence + 9 message flows


def test_fixture_order_is_topological(supply_dag):
    pos = {v: i for i, v in enumerate(supply_dag.order)}
    assert sorted(pos) == sorted(supply_dag.vertices)
    for e in supply_dag.edges:
        assert pos[e.source] < pos[e.target], (e.source, e.target)


def test_fixture_ranks_strictly_increase_along_edges(supply_dag):
    ranks = topological_ranks(supply_dag)
    assert ranks[supply_dag.source] == 0
    for e in supply_dag.edges:
        assert ranks[e.source] < ranks[e.target]
    assert max(ranks.values()) == ranks[supply_dag.sink]


def test_fixture_immediate_dominators(supply_dag):
    dom = dominators(supply_dag)
    # the fork at "forward order" owns the shipping block up to the join
    assert dom.idom["sup_recv_request"] == "mm_forward_order"
    assert dom.ipdom["mm_forward_order"] == "sup_recv_request"
    assert dom.idom["sup_provide_details"] == "sup_recv_request"
    assert dom.ipdom["sup_provide_details"] == "car_recv_waybill"
    assert dom.idom["mm_order_transport"] == "mm_forward_order"
    assert dom.idom[supply_dag.source] == supply_dag.source


def test_fixture_dominates_relation(supply_dag):
    dom = dominators(supply_dag)
    assert all(dom.dominates(supply_dag.source, v) for v in supply_dag.vertices)
    assert all(dom.postdominates(supply_dag.sink, v) for v in supply_dag.vertices)
    assert dom.dominates("mm_forward_order", "sup_produce")
    assert not dom.dominates("mm_order_transport", "sup_recv_request")
    assert dom.postdominates("sup_recv_request", "car_request_details")
    assert dom.postdominates("car_deliver_order", "buyer_start")
    assert not dom.postdominates("car_request_details", "buyer_start")


def test_fixture_matches_dominator_oracle(supply_dag):
    idom, ipdom = oracle_idoms(supply_dag)
    dom = dominators(supply_dag)
    assert dom.idom == idom
    assert dom.ipdom == ipdom


# --- exports ---------------------------------------------------------------

def test_dot_export(supply_dag):
    dot = to_dot(supply_dag)
    assert dot.startswith("digraph flow {")
    for v in supply_dag.vertices:
        assert f'"{v}"' in dot
    assert dot.count("style=dashed") == 9
    assert dot == to_dot(supply_dag)


def test_dag_dict_is_deterministic(supply_model, supply_dag):
    d1 = dag_to_dict(supply_dag)
    d2 = dag_to_dict(build_dag(supply_model))
    assert canonical_json(d1) == canonical_json(d2)
    assert [v["id"] for v in d1["vertices"]] == supply_dag.order
    assert len(d1["edges"]) == 25


# --- rejection paths -------------------------------------------------------

def test_cycle_rejected():
    model = model_from_edges([("s", "a"), ("a", "b"), ("b", "a"), ("b", "e")])
    with pytest.raises(CycleDetected) as err:
        build_dag(model)
    assert "->" in str(err.value)


def test_two_sinks_rejected():
    model = model_from_edges([("s", "a"), ("a", "e1"), ("a", "e2")])
    with pytest.raises(Disconnected):
        build_dag(model)


def test_two_sources_rejected():
    model = model_from_edges([("s1", "a"), ("s2", "a"), ("a", "e")])
    with pytest.raises(Disconnected):
        build_dag(model)


# --- randomized agreement --------------------------------------------------

def test_random_dags_match_dominator_oracle():
    rng = random.Random(0xD0C5)
    for trial in range(150):
        n = rng.randrange(4, 13)
        dag = dag_from_edges(random_dag_edges(rng, n), name=f"t{trial}")
        idom, ipdom = oracle_idoms(dag)
        dom = dominators(dag)
        assert dom.idom == idom, trial
        assert dom.ipdom == ipdom, trial
        ranks = topological_ranks(dag)
        for e in dag.edges:
            assert ranks[e.source] < ranks[e.target], trial
