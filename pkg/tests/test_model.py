import pytest

from tabsplus.errors import (
    DanglingFlowRef,
    DuplicateId,
    NotNormalizable,
    SchemaVersionMismatch,
    UnsupportedElement,
    XmlSyntax,
)
from tabsplus.model import (
    END,
    FORK,
    JOIN,
    MSG_RECV,
    MSG_SEND,
    START,
    TASK,
    BPMN_NS,
    model_from_dict,
    model_to_dict,
    normalize,
    parse_bpmn,
    parse_model_json,
    serialize_model,
    validate,
)


def doc(body: str, collab: str = "") -> str:
    return (
        f'<definitions xmlns="{BPMN_NS}" id="m">{collab}'
        f'<process id="p">{body}</process></definitions>'
    )


def diag_codes(model):
    return [d.code for d in validate(model)]


# --- fixture parsing -------------------------------------------------------

def test_fixture_actor_roster(supply_model):
    assert [a.name for a in supply_model.actors] == [
        "Buyer", "Manufacturer", "Middleman", "Supplier", "Special Carrier",
    ]
    carrier = supply_model.actors[-1]
    assert carrier.credential == "cred-special-carrier"


def test_fixture_node_census(supply_model):
    kinds = {}
    for n in supply_model.nodes:
        kinds[n.kind] = kinds.get(n.kind, 0) + 1
    assert kinds == {START: 1, END: 1, TASK: 4, MSG_SEND: 9, MSG_RECV: 9}
    assert len(supply_model.sequence_flows) == 16
    assert len(supply_model.message_flows) == 9


def test_fixture_task_effects(supply_model):
    produce = supply_model.node("sup_produce")
    assert produce.task_spec.ledger_writes == (("product/{run}", 256),)
    assert produce.task_spec.offchain_puts == (1024,)
    details = supply_model.node("car_recv_details")
    assert details.task_spec.ledger_reads == ("details/{run}",)
    report = supply_model.node("mfr_report_production")
    assert report.task_spec.ledger_reads == ("product/{run}",)
    assert report.task_spec.ledger_writes == (("production/{run}", 64),)


def test_fixture_is_already_normal(supply_xml):
    parsed = parse_bpmn(supply_xml, name="supply-chain")
    assert model_to_dict(normalize(parsed)) == model_to_dict(parsed)


def test_normalize_is_idempotent(supply_model):
    again = normalize(supply_model)
    assert model_to_dict(again) == model_to_dict(supply_model)


def test_fixture_validates_clean(supply_model):
    assert diag_codes(supply_model) == []


# --- serialization ---------------------------------------------------------

def test_json_round_trip(supply_model):
    text = serialize_model(supply_model)
    back = parse_model_json(text)
    assert model_to_dict(back) == model_to_dict(supply_model)
    assert serialize_model(back) == text


def test_schema_version_checked(supply_model):
    data = model_to_dict(supply_model)
    data["schema"] = "tabsplus-model/999"
    with pytest.raises(SchemaVersionMismatch):
        model_from_dict(data)


# --- parser error paths ----------------------------------------------------

def test_malformed_xml():
    with pytest.raises(XmlSyntax):
        parse_bpmn("<definitions><unclosed>")


def test_wrong_root():
    with pytest.raises(UnsupportedElement):
        parse_bpmn(f'<process xmlns="{BPMN_NS}" id="p"/>')


def test_unsupported_process_element():
    with pytest.raises(UnsupportedElement) as err:
        parse_bpmn(doc('<scriptTask id="t"/>'))
    assert "scriptTask" in str(err.value)


def test_duplicate_node_id():
    with pytest.raises(DuplicateId):
        parse_bpmn(doc('<task id="t"/><task id="t"/>'))


def test_dangling_flow_reference():
    with pytest.raises(DanglingFlowRef):
        parse_bpmn(doc('<task id="t"/><sequenceFlow id="f" sourceRef="t" targetRef="ghost"/>'))


def test_bad_effects_json():
    body = (
        '<task id="t"><extensionElements>'
        '<effects xmlns="urn:tabsplus:effects">{nope</effects>'
        "</extensionElements></task>"
    )
    with pytest.raises(XmlSyntax):
        parse_bpmn(doc(body))


# --- validation ------------------------------------------------------------

CHAIN = (
    '<startEvent id="s"/><task id="a"/><endEvent id="e"/>'
    '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
    '<sequenceFlow id="f2" sourceRef="a" targetRef="e"/>'
)


def test_clean_chain_has_no_diagnostics():
    assert diag_codes(parse_bpmn(doc(CHAIN))) == []


def test_loop_is_an_error():
    body = (
        '<startEvent id="s"/><task id="a"/><task id="b"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="a" targetRef="b"/>'
        '<sequenceFlow id="f3" sourceRef="b" targetRef="a"/>'
        '<sequenceFlow id="f4" sourceRef="b" targetRef="e"/>'
    )
    assert "loop" in diag_codes(parse_bpmn(doc(body)))


def test_missing_start_and_end():
    model = parse_bpmn(doc('<task id="a"/>'))
    codes = diag_codes(model)
    assert "no-start" in codes and "no-end" in codes
    with pytest.raises(NotNormalizable):
        normalize(model)


def test_parallel_gateway_rejected():
    body = (
        '<startEvent id="s"/><parallelGateway id="g"/>'
        '<task id="a"/><task id="b"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="g"/>'
        '<sequenceFlow id="f2" sourceRef="g" targetRef="a"/>'
        '<sequenceFlow id="f3" sourceRef="g" targetRef="b"/>'
        '<sequenceFlow id="f4" sourceRef="a" targetRef="e"/>'
        '<sequenceFlow id="f5" sourceRef="b" targetRef="e"/>'
    )
    model = parse_bpmn(doc(body))
    assert "parallel-gateway" in diag_codes(model)
    with pytest.raises(NotNormalizable) as err:
        normalize(model)
    assert any(d["code"] == "parallel-gateway" for d in err.value.detail)


def test_data_split_at_task_is_an_error():
    body = (
        '<startEvent id="s"/><task id="a"/><task id="b"/><task id="c"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="a" targetRef="b">'
        "<conditionExpression>x == 1</conditionExpression></sequenceFlow>"
        '<sequenceFlow id="f3" sourceRef="a" targetRef="c"/>'
        '<sequenceFlow id="f4" sourceRef="b" targetRef="e"/>'
        '<sequenceFlow id="f5" sourceRef="c" targetRef="e"/>'
    )
    assert "data-split" in diag_codes(parse_bpmn(doc(body)))


def test_unguarded_exclusive_fork_is_an_error():
    body = (
        '<startEvent id="s"/><exclusiveGateway id="g"/>'
        '<task id="a"/><task id="b"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="g"/>'
        '<sequenceFlow id="f2" sourceRef="g" targetRef="a"/>'
        '<sequenceFlow id="f3" sourceRef="g" targetRef="b"/>'
        '<sequenceFlow id="f4" sourceRef="a" targetRef="e"/>'
        '<sequenceFlow id="f5" sourceRef="b" targetRef="e"/>'
    )
    assert "unguarded-exclusive" in diag_codes(parse_bpmn(doc(body)))


def test_default_flow_satisfies_exclusive_fork():
    body = (
        '<startEvent id="s"/><exclusiveGateway id="g"/>'
        '<task id="a"/><task id="b"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="g"/>'
        '<sequenceFlow id="f2" sourceRef="g" targetRef="a">'
        "<conditionExpression>x == 1</conditionExpression></sequenceFlow>"
        '<sequenceFlow id="f3" sourceRef="g" targetRef="b" tabsDefault="true"/>'
        '<sequenceFlow id="f4" sourceRef="a" targetRef="e"/>'
        '<sequenceFlow id="f5" sourceRef="b" targetRef="e"/>'
    )
    codes = diag_codes(parse_bpmn(doc(body)))
    assert "unguarded-exclusive" not in codes
    assert codes == ["implicit-join"]  # the diamond still needs a join at e


def test_cross_actor_sequence_flow_is_an_error():
    collab = (
        '<collaboration id="c">'
        '<participant id="p" name="P" processRef="p"/>'
        '<participant id="q" name="Q" processRef="q"/>'
        "</collaboration>"
    )
    body = (
        f'<definitions xmlns="{BPMN_NS}" id="m">{collab}'
        '<process id="p"><startEvent id="s"/><task id="a"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="a" targetRef="b"/></process>'
        '<process id="q"><task id="b"/><endEvent id="e"/>'
        '<sequenceFlow id="f3" sourceRef="b" targetRef="e"/></process>'
        "</definitions>"
    )
    assert "cross-actor-seq" in diag_codes(parse_bpmn(body))


def test_intra_actor_message_flow_is_an_error():
    collab = (
        '<collaboration id="c">'
        '<participant id="p" name="P" processRef="p"/>'
        '<messageFlow id="m1" sourceRef="a" targetRef="b"/>'
        "</collaboration>"
    )
    body = (
        f'<definitions xmlns="{BPMN_NS}" id="m">{collab}'
        '<process id="p"><startEvent id="s"/><sendTask id="a"/>'
        '<receiveTask id="b"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="b" targetRef="e"/></process>'
        "</definitions>"
    )
    assert "intra-actor-msg" in diag_codes(parse_bpmn(body))


# --- normalization repairs -------------------------------------------------

def test_implicit_split_gets_a_fork():
    body = (
        '<startEvent id="s"/><task id="a"/><task id="b"/><task id="c"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="a" targetRef="b"/>'
        '<sequenceFlow id="f3" sourceRef="a" targetRef="c"/>'
        '<sequenceFlow id="f4" sourceRef="b" targetRef="e"/>'
        '<sequenceFlow id="f5" sourceRef="c" targetRef="e"/>'
    )
    model = parse_bpmn(doc(body))
    codes = diag_codes(model)
    assert "implicit-split" in codes and "implicit-join" in codes
    norm = normalize(model)
    forks = [n for n in norm.nodes if n.kind == FORK]
    joins = [n for n in norm.nodes if n.kind == JOIN]
    assert len(forks) == 1 and len(joins) == 1
    assert forks[0].flavor == "inclusive"
    # inserted inclusive fork takes over a's two outgoing flows, all-true
    out = norm.seq_out(forks[0].id)
    assert len(out) == 2
    assert all(f.guard is not None and f.guard.text == "true" for f in out)
    assert len(norm.seq_out("a")) == 1
    assert norm.seq_out("a")[0].target == forks[0].id
    assert model_to_dict(normalize(norm)) == model_to_dict(norm)


def test_multiple_starts_merged():
    body = (
        '<startEvent id="s1"/><startEvent id="s2"/><task id="a"/><endEvent id="e"/>'
        '<sequenceFlow id="f1" sourceRef="s1" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="s2" targetRef="a"/>'
        '<sequenceFlow id="f3" sourceRef="a" targetRef="e"/>'
    )
    model = parse_bpmn(doc(body))
    assert "multi-start" in diag_codes(model)
    norm = normalize(model)
    starts = [n for n in norm.nodes if n.kind == START]
    assert len(starts) == 1 and starts[0].label == "INIT"
    # the old start events keep their ids but become plain tasks
    assert norm.node("s1").kind == TASK
    assert norm.node("s2").kind == TASK
    assert model_to_dict(normalize(norm)) == model_to_dict(norm)


def test_multiple_ends_merged():
    body = (
        '<startEvent id="s"/><task id="a"/><task id="b"/>'
        '<endEvent id="e1"/><endEvent id="e2"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f2" sourceRef="s" targetRef="b"/>'
        '<sequenceFlow id="f3" sourceRef="a" targetRef="e1"/>'
        '<sequenceFlow id="f4" sourceRef="b" targetRef="e2"/>'
    )
    norm = normalize(parse_bpmn(doc(body)))
    ends = [n for n in norm.nodes if n.kind == END]
    assert len(ends) == 1 and ends[0].label == "SUCCESS"
    assert model_to_dict(normalize(norm)) == model_to_dict(norm)


def test_mixed_gateway_split_into_join_then_fork():
    body = (
        '<startEvent id="s"/><task id="a"/><task id="b"/>'
        '<inclusiveGateway id="g"/>'
        '<task id="c"/><task id="d"/><endEvent id="e"/>'
        '<sequenceFlow id="f0" sourceRef="s" targetRef="a"/>'
        '<sequenceFlow id="f1" sourceRef="s" targetRef="b"/>'
        '<sequenceFlow id="f2" sourceRef="a" targetRef="g"/>'
        '<sequenceFlow id="f3" sourceRef="b" targetRef="g"/>'
        '<sequenceFlow id="f4" sourceRef="g" targetRef="c"/>'
        '<sequenceFlow id="f5" sourceRef="g" targetRef="d"/>'
        '<sequenceFlow id="f6" sourceRef="c" targetRef="e"/>'
        '<sequenceFlow id="f7" sourceRef="d" targetRef="e"/>'
    )
    model = parse_bpmn(doc(body))
    assert "mixed-gateway" in diag_codes(model)
    norm = normalize(model)
    joins = [n for n in norm.nodes if n.kind == JOIN]
    forks = [n for n in norm.nodes if n.kind == FORK]
    # one join+fork pair replaces g, plus repairs at s (split) and e (join)
    assert len(joins) == 2 and len(forks) == 2
    for j in joins:
        assert len(norm.seq_in(j.id)) == 2 and len(norm.seq_out(j.id)) == 1
    for f in forks:
        assert len(norm.seq_in(f.id)) == 1 and len(norm.seq_out(f.id)) == 2
    assert model_to_dict(normalize(norm)) == model_to_dict(norm)


def test_renames_sole_start_and_end():
    norm = normalize(parse_bpmn(doc(CHAIN)))
    assert norm.node("s").label == "INIT"
    assert norm.node("e").label == "SUCCESS"
