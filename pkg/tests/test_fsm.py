import pytest
from dataclasses import replace

from tabsplus.errors import CorruptPackage, SchemaVersionMismatch, UnguardedExclusiveFork
from tabsplus.fsm import (
    DeFsmModel,
    Fsm,
    State,
    build_hierarchy,
    defsm_from_dict,
    defsm_to_dict,
    flatten,
    fsm_to_dict,
    synthesize,
)
from tabsplus.graph import build_dag
from tabsplus.model import BPMN_NS, FORK, normalize, parse_bpmn
from tabsplus.plan import build_plan, empty_plan
from tabsplus.sese import enumerate_candidates

from .helpers import model_from_edges


def synth(supply, selection, mechanism="sc-all"):
    model, dag, forest = supply
    if selection:
        plan = build_plan(forest, selection, mechanism)
    else:
        plan = empty_plan(model.name)
    return synthesize(model, dag, forest, plan)


@pytest.fixture()
def supply(supply_model, supply_dag, supply_forest):
    return supply_model, supply_dag, supply_forest


# four guarded branches behind one exclusive fork
BRANCHY = (
    f'<definitions xmlns="{BPMN_NS}" id="branchy"><process id="p">'
    '<startEvent id="s"/><task id="t0"/>'
    '<exclusiveGateway id="F"/>'
    '<task id="b1"/><task id="b2"/><task id="b3"/><task id="b4"/>'
    '<inclusiveGateway id="J"/>'
    '<endEvent id="e"/>'
    '<sequenceFlow id="f0" sourceRef="s" targetRef="t0"/>'
    '<sequenceFlow id="f1" sourceRef="t0" targetRef="F"/>'
    '<sequenceFlow id="g1" sourceRef="F" targetRef="b1">'
    "<conditionExpression>x == 1</conditionExpression></sequenceFlow>"
    '<sequenceFlow id="g2" sourceRef="F" targetRef="b2">'
    "<conditionExpression>x == 2</conditionExpression></sequenceFlow>"
    '<sequenceFlow id="g3" sourceRef="F" targetRef="b3">'
    "<conditionExpression>x == 3</conditionExpression></sequenceFlow>"
    '<sequenceFlow id="g4" sourceRef="F" targetRef="b4" tabsDefault="true"/>'
    '<sequenceFlow id="h1" sourceRef="b1" targetRef="J"/>'
    '<sequenceFlow id="h2" sourceRef="b2" targetRef="J"/>'
    '<sequenceFlow id="h3" sourceRef="b3" targetRef="J"/>'
    '<sequenceFlow id="h4" sourceRef="b4" targetRef="J"/>'
    '<sequenceFlow id="f2" sourceRef="J" targetRef="e"/>'
    "</process></definitions>"
)


@pytest.fixture(scope="module")
def branchy():
    model = normalize(parse_bpmn(BRANCHY, name="branchy"))
    dag = build_dag(model)
    return model, dag, enumerate_candidates(dag)


# --- fixture synthesis -----------------------------------------------------

def test_fixture_one_machine_per_actor(supply):
    dm = synth(supply, [])
    assert [m.id for m in dm.machines] == [
        "actor_buyer", "actor_manufacturer", "actor_middleman",
        "actor_supplier", "actor_special_carrier",
    ]
    chains = {m.id: m.vertices for m in dm.machines}
    assert chains["actor_buyer"] == [
        "buyer_start", "buyer_send_offer", "buyer_recv_product", "buyer_end",
    ]
    assert chains["actor_middleman"] == [
        "mm_recv_order", "mm_forward_order", "mm_order_transport",
    ]
    assert chains["actor_supplier"] == [
        "sup_recv_order", "sup_produce", "sup_prepare_transport",
        "sup_recv_request", "sup_provide_details", "sup_provide_waybill",
    ]
    assert chains["actor_special_carrier"] == [
        "car_recv_order", "car_request_details", "car_recv_details",
        "car_recv_waybill", "car_deliver_order",
    ]
    assert all(m.kind == "actor" and m.primary for m in dm.machines)


def test_fixture_region_machines_carved_out(supply):
    dm = synth(supply, ["S3"])
    assert len(dm.machines) == 7
    chains = {m.id: m.vertices for m in dm.machines}
    assert chains["actor_supplier"] == [
        "sup_recv_order", "sup_produce", "sup_prepare_transport", "sup_recv_request",
    ]
    assert chains["actor_special_carrier"] == [
        "car_recv_order", "car_request_details", "car_deliver_order",
    ]
    assert chains["txn_S3__supplier"] == ["sup_provide_details", "sup_provide_waybill"]
    assert chains["txn_S3__special_carrier"] == ["car_recv_details", "car_recv_waybill"]
    regions = {m.id: m.region for m in dm.machines}
    assert regions["txn_S3__supplier"] == "S3"
    assert regions["actor_supplier"] == ""


def test_fixture_two_regions(supply):
    dm = synth(supply, ["S1", "S2"])
    assert len(dm.machines) == 11
    chains = {m.id: m.vertices for m in dm.machines}
    assert chains["actor_middleman"] == []  # everything it owns is in S1/S2
    assert chains["txn_S1__buyer"] == ["buyer_start", "buyer_send_offer"]
    assert chains["txn_S1__middleman"] == ["mm_recv_order"]
    assert chains["txn_S2__middleman"] == ["mm_forward_order", "mm_order_transport"]
    assert chains["txn_S2__supplier"] == [
        "sup_recv_order", "sup_produce", "sup_prepare_transport", "sup_recv_request",
    ]
    assert chains["txn_S2__special_carrier"] == ["car_recv_order", "car_request_details"]
    # S1 machines sort before S2 machines
    txn_ids = [m.id for m in dm.machines if m.kind == "txn"]
    assert txn_ids == [
        "txn_S1__buyer", "txn_S1__manufacturer", "txn_S1__middleman",
        "txn_S2__middleman", "txn_S2__supplier", "txn_S2__special_carrier",
    ]


def test_nested_selection_same_machines_as_flat(supply):
    flat = synth(supply, ["S1", "S2"])
    nested = synth(supply, ["S5", "S1", "S2"], "sc-2m")
    # S5 owns no vertex of its own, so the machine set is identical
    assert [m.id for m in flat.machines] == [m.id for m in nested.machines]
    assert defsm_to_dict(flat) == defsm_to_dict(nested)


def test_whole_model_region(supply):
    dm = synth(supply, ["S7"])
    assert len(dm.machines) == 10
    actor_machines = dm.by_kind("actor")
    assert all(m.vertices == [] and m.primary for m in actor_machines)
    txn = dm.by_kind("txn")
    assert {m.region for m in txn} == {"S7"}
    total = sum(len(m.vertices) for m in txn)
    assert total == 24


@pytest.mark.parametrize("selection,count", [
    ([], 5),
    (["S3"], 7),
    (["S1", "S2"], 11),
    (["S5", "S1", "S2"], 11),
    (["S7"], 10),
])
def test_machine_counts(supply, selection, count):
    assert len(synth(supply, selection).machines) == count


def test_vertex_coverage_is_exact(supply):
    model, dag, forest = supply
    for selection in ([], ["S3"], ["S1", "S2"], ["S7"], ["S9", "S3"]):
        dm = synth(supply, selection)
        index = dm.vertex_index()
        assert set(index) == set(dag.vertices)
        counted = sum(len(m.vertices) for m in dm.machines)
        assert counted == len(dag.vertices)


def test_vertex_index_positions(supply):
    dm = synth(supply, ["S1", "S2"])
    index = dm.vertex_index()
    assert index["sup_produce"] == ("txn_S2__supplier", 1)
    assert index["buyer_end"] == ("actor_buyer", 1)
    assert index["buyer_start"] == ("txn_S1__buyer", 0)


def test_synthesis_is_deterministic(supply):
    a = defsm_to_dict(synth(supply, ["S1", "S2"]))
    b = defsm_to_dict(synth(supply, ["S1", "S2"]))
    assert a == b


# --- fork and join machines ------------------------------------------------

def test_branchy_machine_set(branchy):
    model, dag, forest = branchy
    dm = synthesize(model, dag, forest, empty_plan("branchy"))
    ids = [m.id for m in dm.machines]
    assert ids == [
        "actor_p", "actor_p_2", "actor_p_3", "actor_p_4", "actor_p_5",
        "ctrl_F", "join_J",
    ]
    chains = {m.id: m.vertices for m in dm.machines}
    assert chains["actor_p"] == ["s", "t0", "e"]
    assert chains["actor_p_2"] == ["b1"]
    assert chains["actor_p_5"] == ["b4"]
    spawned = [m for m in dm.machines if m.spawned_by]
    assert [m.id for m in spawned] == ["actor_p_2", "actor_p_3", "actor_p_4", "actor_p_5"]
    assert all(m.spawned_by == "F" for m in spawned)


def test_branchy_control_machine_guard_table(branchy):
    model, dag, forest = branchy
    dm = synthesize(model, dag, forest, empty_plan("branchy"))
    ctrl = dm.machine("ctrl_F")
    assert ctrl.kind == "control" and ctrl.flavor == "exclusive"
    assert [b["guard"] for b in ctrl.branches] == ["x == 1", "x == 2", "x == 3", ""]
    assert [b["default"] for b in ctrl.branches] == [False, False, False, True]
    assert [b["target"] for b in ctrl.branches] == ["b1", "b2", "b3", "b4"]
    join = dm.machine("join_J")
    assert join.kind == "join" and join.inflows == 4 and join.strict is False


def test_strict_joins_flag(branchy):
    model, dag, forest = branchy
    dm = synthesize(model, dag, forest, empty_plan("branchy"), strict_joins=True)
    assert dm.machine("join_J").strict is True


def test_branchy_region_selection_lifts_branch_machines(branchy):
    model, dag, forest = branchy
    minimal = [r.id for r in forest.minimal()]
    diamond = next(
        r.id for r in forest.minimal() if {"F", "J"} <= set(r.members)
    )
    plan = build_plan(forest, [diamond], "sc-all")
    dm = synthesize(model, dag, forest, plan)
    txn = dm.by_kind("txn")
    assert [m.vertices for m in txn] == [["b1"], ["b2"], ["b3"], ["b4"]]
    assert all(m.spawned_by == "F" for m in txn)
    assert dm.machine("ctrl_F").region == diamond
    assert dm.machine("join_J").region == diamond
    # only the anchor actor machine survives outside the region
    actors = dm.by_kind("actor")
    assert [m.id for m in actors] == ["actor_p"]
    assert actors[0].vertices == ["s", "t0", "e"]


def test_unguarded_exclusive_fork_rejected():
    model = model_from_edges([("s", "g"), ("g", "a"), ("g", "b"), ("a", "e"), ("b", "e")])
    i = next(i for i, n in enumerate(model.nodes) if n.id == "g")
    model.nodes[i] = replace(model.nodes[i], kind=FORK, flavor="exclusive")
    dag = build_dag(model)
    forest = enumerate_candidates(dag)
    with pytest.raises(UnguardedExclusiveFork):
        synthesize(model, dag, forest, empty_plan("bad"))


# --- flatten ---------------------------------------------------------------

def plain_chain(mid, verts, **kw):
    states = [State(f"{mid}.{i}") for i in range(len(verts) + 1)]
    return Fsm(mid, kw.pop("kind", "actor"), kw.pop("owner", "a"),
               states=states, vertices=list(verts), **kw)


def test_flatten_splices_single_untagged_sub():
    sub = plain_chain("sub", ["x", "y"])
    m = Fsm("m", "actor", "a",
            states=[State("m.0"), State("m.1", (sub,)), State("m.2")],
            vertices=["a", "b"])
    out = flatten([m])
    assert len(out) == 1
    flat = out[0]
    assert flat.vertices == ["a", "x", "y", "b"]
    assert [s.id for s in flat.states] == [
        "m.0", "m.1/sub.0", "m.1/sub.1", "m.1/sub.2", "m.2",
    ]
    ts = flat.transitions()
    assert (ts[0].source, ts[0].target) == ("m.0", "m.1/sub.0")
    assert (ts[3].source, ts[3].target) == ("m.1/sub.2", "m.2")


def test_flatten_splice_recurses():
    inner = plain_chain("inner", ["q"])
    mid = Fsm("mid", "actor", "a",
              states=[State("mid.0", (inner,)), State("mid.1")], vertices=["r"])
    outer = Fsm("m", "actor", "a",
                states=[State("m.0"), State("m.1", (mid,))], vertices=["p"])
    out = flatten([outer])
    assert len(out) == 1
    assert out[0].vertices == ["p", "q", "r"]


def test_flatten_lifts_concurrent_subs():
    s1 = plain_chain("s1", ["x"])
    s2 = plain_chain("s2", ["y"])
    m = Fsm("m", "actor", "a",
            states=[State("m.0", (s1, s2)), State("m.1")], vertices=["a"])
    out = flatten([m])
    assert [f.id for f in out] == ["m", "s1", "s2"]
    assert out[0].vertices == ["a"]
    assert [s.id for s in out[0].states] == ["m.0", "m.1"]


def test_flatten_lifts_region_tagged_sub_and_propagates_spawn():
    sub = plain_chain("txn_R__a", ["x", "y"], region="R", kind="txn")
    shell = Fsm("m", "actor", "a", spawned_by="F",
                states=[State("m.0", (sub,))], vertices=[])
    out = flatten([shell])
    assert [f.id for f in out] == ["m", "txn_R__a"]
    assert out[0].vertices == []
    lifted = out[1]
    assert lifted.region == "R" and lifted.spawned_by == "F"


def test_flatten_is_idempotent(supply):
    model, dag, forest = supply
    plan = build_plan(forest, ["S1", "S2"], "sc-all")
    hier = build_hierarchy(model, dag, forest, plan)
    once = flatten(hier)
    assert flatten(once) == once
    assert not any(m.is_hierarchical() for m in once)


def test_hierarchy_has_nested_states(supply):
    model, dag, forest = supply
    plan = build_plan(forest, ["S5", "S1", "S2"], "sc-2m")
    hier = build_hierarchy(model, dag, forest, plan)
    buyer = next(m for m in hier if m.id == "actor_buyer")
    assert buyer.is_hierarchical()
    subs = [sub for s in buyer.states for sub in s.submachine]
    assert [s.id for s in subs] == ["txn_S5__buyer"]
    inner = [sub for s in subs[0].states for sub in s.submachine]
    assert [s.id for s in inner] == ["txn_S1__buyer"]


# --- serialization ---------------------------------------------------------

def test_defsm_round_trip(supply):
    dm = synth(supply, ["S1", "S2"])
    data = defsm_to_dict(dm)
    assert data["schema"] == "tabsplus-fsm/1"
    back = defsm_from_dict(data)
    assert defsm_to_dict(back) == data


def test_defsm_schema_checked(supply):
    data = defsm_to_dict(synth(supply, []))
    data["schema"] = "tabsplus-fsm/0"
    with pytest.raises(SchemaVersionMismatch):
        defsm_from_dict(data)


def test_corrupt_machine_rejected(supply):
    data = defsm_to_dict(synth(supply, []))
    broken = {**data, "machines": [
        {**data["machines"][0], "states": data["machines"][0]["states"][:-1]}
    ]}
    with pytest.raises(CorruptPackage):
        defsm_from_dict(broken)


def test_tampered_transition_table_rejected(supply):
    data = defsm_to_dict(synth(supply, []))
    m0 = data["machines"][0]
    tampered = [dict(t) for t in m0["transitions"]]
    tampered[0]["target"] = tampered[-1]["target"]
    broken = {**data, "machines": [{**m0, "transitions": tampered}] }
    with pytest.raises(CorruptPackage):
        defsm_from_dict(broken)


def test_hierarchical_machine_cannot_serialize():
    sub = plain_chain("sub", ["x"])
    m = Fsm("m", "actor", "a", states=[State("m.0", (sub,))], vertices=[])
    with pytest.raises(CorruptPackage):
        fsm_to_dict(m)
