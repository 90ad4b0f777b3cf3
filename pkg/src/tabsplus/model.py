"""Collaboration model: actors, flow nodes, sequence and message flows.

The XML reader accepts the BPMN 2.0 subset we execute (tasks, send/receive
tasks, message throw/catch events, exclusive and inclusive gateways, sequence
and message flows, one pool per actor). Task effects on the ledger are read
from a ``tabs:effects`` extension element carrying JSON.

``validate`` reports diagnostics without mutating; ``normalize`` repairs what
is repairable (single start/end, implicit and mixed gateways) and refuses the
rest. Canonical JSON serialization round-trips the model exactly.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

from .canon import canonical_json
from .errors import (
    DanglingFlowRef,
    DuplicateId,
    NotNormalizable,
    SchemaVersionMismatch,
    UnsupportedElement,
    XmlSyntax,
)
from .guards import TRUE, Guard, parse_guard

MODEL_SCHEMA = "tabsplus-model/1"

BPMN_NS = "http://www.omg.org/spec/BPMN/20100524/MODEL"
EFFECTS_NS = "urn:tabsplus:effects"

START = "StartEvent"
END = "EndEvent"
TASK = "Task"
FORK = "ForkGateway"
JOIN = "JoinGateway"
MSG_SEND = "MessageSend"
MSG_RECV = "MessageReceive"

NODE_KINDS = (START, END, TASK, FORK, JOIN, MSG_SEND, MSG_RECV)
GATEWAY_KINDS = (FORK, JOIN)
# flavors: inclusive | exclusive; "parallel" is admitted by the parser solely
# so validation can reject it with a model-level diagnostic.
GATEWAY_FLAVORS = ("inclusive", "exclusive", "parallel")


@dataclass(frozen=True)
class Actor:
    id: str
    name: str
    credential: str


@dataclass(frozen=True)
class TaskSpec:
    """Declarative ledger effects of a task.

    ledger_writes: (key template, byte size) pairs; ledger_reads: key
    templates; emits: (target actor id, message name, payload byte size);
    offchain_puts: blob byte sizes. Key templates may contain ``{run}`` and
    ``{txn}`` placeholders expanded at execution time.
    """

    ledger_writes: tuple = ()
    ledger_reads: tuple = ()
    emits: tuple = ()
    offchain_puts: tuple = ()

    def is_empty(self) -> bool:
        return not (self.ledger_writes or self.ledger_reads or self.emits or self.offchain_puts)


EMPTY_SPEC = TaskSpec()


@dataclass(frozen=True)
class FlowNode:
    id: str
    kind: str
    actor: str
    label: str
    flavor: str = ""  # gateway flavor, empty for non-gateways
    task_spec: TaskSpec = EMPTY_SPEC


@dataclass(frozen=True)
class Flow:
    """A sequence flow (guarded, intra-actor) or message flow (inter-actor)."""

    id: str
    source: str
    target: str
    guard: Guard | None = None
    is_default: bool = False
    payload_schema: str = ""


@dataclass
class BpmnModel:
    name: str
    actors: list[Actor] = field(default_factory=list)
    nodes: list[FlowNode] = field(default_factory=list)
    sequence_flows: list[Flow] = field(default_factory=list)
    message_flows: list[Flow] = field(default_factory=list)

    def node(self, node_id: str) -> FlowNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def actor_of(self, node_id: str) -> str:
        return self.node(node_id).actor

    def seq_in(self, node_id: str) -> list[Flow]:
        return [f for f in self.sequence_flows if f.target == node_id]

    def seq_out(self, node_id: str) -> list[Flow]:
        return [f for f in self.sequence_flows if f.source == node_id]

    def msg_in(self, node_id: str) -> list[Flow]:
        return [f for f in self.message_flows if f.target == node_id]

    def msg_out(self, node_id: str) -> list[Flow]:
        return [f for f in self.message_flows if f.source == node_id]


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    subject: str = ""

    def to_dict(self) -> dict:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "subject": self.subject,
        }


# ---------------------------------------------------------------------------
# XML parsing


def _tag(el) -> str:
    return el.tag.rsplit("}", 1)[-1]


_SUPPORTED_IGNORED = {
    "documentation",
    "extensionElements",
    "incoming",
    "outgoing",
    "messageEventDefinition",
    "conditionExpression",
    "message",
    "laneSet",
    "lane",
    "flowNodeRef",
    "BPMNDiagram",
    "BPMNPlane",
    "BPMNShape",
    "BPMNEdge",
    "Bounds",
    "waypoint",
    "BPMNLabel",
}

_NODE_TAGS = {
    "startEvent": START,
    "endEvent": END,
    "task": TASK,
    "userTask": TASK,
    "serviceTask": TASK,
    "sendTask": MSG_SEND,
    "receiveTask": MSG_RECV,
    "intermediateThrowEvent": MSG_SEND,
    "intermediateCatchEvent": MSG_RECV,
    "exclusiveGateway": (FORK, "exclusive"),
    "inclusiveGateway": (FORK, "inclusive"),
    "parallelGateway": (FORK, "parallel"),
}


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


def _read_task_spec(el) -> TaskSpec:
    for ext in el:
        if _tag(ext) != "extensionElements":
            continue
        for child in ext:
            if _tag(child) != "effects":
                continue
            try:
                raw = json.loads(child.text or "{}")
            except json.JSONDecodeError as exc:
                raise XmlSyntax(f"bad effects JSON on {el.get('id')}: {exc}")
            return TaskSpec(
                ledger_writes=tuple((k, int(s)) for k, s in raw.get("ledger_writes", [])),
                ledger_reads=tuple(raw.get("ledger_reads", [])),
                emits=tuple((a, m, int(s)) for a, m, s in raw.get("emits", [])),
                offchain_puts=tuple(int(s) for s in raw.get("offchain_puts", [])),
            )
    return EMPTY_SPEC


def _read_credential(el) -> str | None:
    for ext in el:
        if _tag(ext) != "extensionElements":
            continue
        for child in ext:
            if _tag(child) == "credential":
                return (child.text or "").strip()
    return None


def parse_bpmn(xml_text: str, name: str = "") -> BpmnModel:
    """Parse BPMN XML into a model; structural errors raise immediately."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise XmlSyntax(f"not well-formed XML: {exc}")
    if _tag(root) != "definitions":
        raise UnsupportedElement(f"expected <definitions> root, got <{_tag(root)}>")

    model = BpmnModel(name=name or root.get("id") or "model")
    processes = {}
    process_owner: dict[str, str] = {}
    message_flow_els = []

    for el in root:
        tag = _tag(el)
        if tag == "collaboration":
            for sub in el:
                stag = _tag(sub)
                if stag == "participant":
                    pid = sub.get("id") or ""
                    pname = sub.get("name") or pid
                    cred = _read_credential(sub) or f"cred-{_slug(pname)}"
                    if any(a.id == pid for a in model.actors):
                        raise DuplicateId(f"duplicate participant id {pid!r}")
                    model.actors.append(Actor(pid, pname, cred))
                    if sub.get("processRef"):
                        process_owner[sub.get("processRef")] = pid
                elif stag == "messageFlow":
                    message_flow_els.append(sub)
                elif stag not in _SUPPORTED_IGNORED:
                    raise UnsupportedElement(f"unsupported element <{stag}> in collaboration")
        elif tag == "process":
            processes[el.get("id") or f"proc{len(processes)}"] = el
        elif tag in _SUPPORTED_IGNORED:
            continue
        else:
            raise UnsupportedElement(f"unsupported element <{tag}>")

    if not model.actors:
        # single-process model without a collaboration wrapper
        for pid in processes:
            model.actors.append(Actor(pid, pid, f"cred-{_slug(pid)}"))
            process_owner[pid] = pid

    seen_ids: set[str] = set()
    seq_flow_els = []
    for pid, proc in processes.items():
        owner = process_owner.get(pid)
        if owner is None:
            raise DanglingFlowRef(f"process {pid!r} has no participant")
        for el in proc:
            tag = _tag(el)
            if tag == "sequenceFlow":
                seq_flow_els.append((el, owner))
                continue
            if tag in _SUPPORTED_IGNORED:
                continue
            if tag not in _NODE_TAGS:
                raise UnsupportedElement(f"unsupported element <{tag}> in process {pid!r}")
            nid = el.get("id") or ""
            if not nid or nid in seen_ids:
                raise DuplicateId(f"missing or duplicate node id {nid!r}")
            seen_ids.add(nid)
            mapped = _NODE_TAGS[tag]
            if isinstance(mapped, tuple):
                kind, flavor = mapped
                # a gateway's fork/join nature is degree-dependent; settled
                # after flows are read
                model.nodes.append(FlowNode(nid, kind, owner, el.get("name") or nid, flavor))
            else:
                model.nodes.append(
                    FlowNode(nid, mapped, owner, el.get("name") or nid, "", _read_task_spec(el))
                )

    node_ids = {n.id for n in model.nodes}

    def _flow(el, flow_id_prefix: str) -> Flow:
        fid = el.get("id") or f"{flow_id_prefix}{len(model.sequence_flows) + len(model.message_flows)}"
        if fid in seen_ids:
            raise DuplicateId(f"duplicate flow id {fid!r}")
        seen_ids.add(fid)
        src, tgt = el.get("sourceRef") or "", el.get("targetRef") or ""
        for ref in (src, tgt):
            if ref not in node_ids:
                raise DanglingFlowRef(f"flow {fid!r} references unknown node {ref!r}")
        guard = None
        for sub in el:
            if _tag(sub) == "conditionExpression" and (sub.text or "").strip():
                guard = parse_guard(sub.text.strip())
        return Flow(fid, src, tgt, guard, el.get("tabsDefault") == "true", el.get("name") or "")

    for el, _owner in seq_flow_els:
        model.sequence_flows.append(_flow(el, "sf"))
    for el in message_flow_els:
        model.message_flows.append(_flow(el, "mf"))

    _settle_gateway_directions(model)
    return model


def _settle_gateway_directions(model: BpmnModel) -> None:
    """Converging gateways were parsed as FORK; flip by sequence-flow degree."""
    for i, n in enumerate(model.nodes):
        if n.kind != FORK:
            continue
        n_in = len(model.seq_in(n.id))
        n_out = len(model.seq_out(n.id))
        if n_in > 1 and n_out <= 1:
            model.nodes[i] = replace(n, kind=JOIN)


# ---------------------------------------------------------------------------
# validation


def _seq_cycle(model: BpmnModel) -> list[str]:
    """Return one cycle over sequence+message flows, or [] if acyclic."""
    adj: dict[str, list[str]] = {n.id: [] for n in model.nodes}
    for f in model.sequence_flows + model.message_flows:
        adj[f.source].append(f.target)
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(v: str) -> list[str]:
        color[v] = 1
        stack.append(v)
        for w in adj[v]:
            if color.get(w, 0) == 1:
                return stack[stack.index(w):] + [w]
            if color.get(w, 0) == 0:
                found = visit(w)
                if found:
                    return found
        color[v] = 2
        stack.pop()
        return []

    for v in adj:
        if color.get(v, 0) == 0:
            found = visit(v)
            if found:
                return found
    return []


def validate(model: BpmnModel) -> list[Diagnostic]:
    """Structural diagnostics. Errors block normalization; warnings do not."""
    out: list[Diagnostic] = []
    add = lambda sev, code, msg, subj="": out.append(Diagnostic(sev, code, msg, subj))

    cycle = _seq_cycle(model)
    if cycle:
        add("error", "loop", "loop unsupported: " + " -> ".join(cycle), cycle[0])

    starts = [n for n in model.nodes if n.kind == START]
    ends = [n for n in model.nodes if n.kind == END]
    if not starts:
        add("error", "no-start", "model has no start event")
    elif len(starts) > 1:
        add("warning", "multi-start", f"{len(starts)} start events; normalizer will merge")
    if not ends:
        add("error", "no-end", "model has no end event")
    elif len(ends) > 1:
        add("warning", "multi-end", f"{len(ends)} end events; normalizer will merge")

    for n in model.nodes:
        n_in, n_out = len(model.seq_in(n.id)), len(model.seq_out(n.id))
        if n.kind in GATEWAY_KINDS:
            if n.flavor == "parallel":
                add("error", "parallel-gateway", f"parallel gateway {n.id!r} unsupported", n.id)
            if n_in > 1 and n_out > 1:
                add("warning", "mixed-gateway", f"{n.id!r}: mixed gateway; will be split", n.id)
            if not n.task_spec.is_empty():
                add("error", "gateway-effects", f"gateway {n.id!r} carries task effects", n.id)
        else:
            if n_out > 1:
                guarded = any(f.guard is not None for f in model.seq_out(n.id))
                if guarded:
                    add("error", "data-split", f"data-based split at non-gateway {n.id!r}", n.id)
                else:
                    add("warning", "implicit-split", f"implicit split at {n.id!r}; fork inserted", n.id)
            if n_in > 1:
                add("warning", "implicit-join", f"implicit join at {n.id!r}; join inserted", n.id)
        if n.kind == START and n_in:
            add("error", "start-inflow", f"start event {n.id!r} has incoming flow", n.id)
        if n.kind == END and n_out:
            add("error", "end-outflow", f"end event {n.id!r} has outgoing flow", n.id)

    actor_ids = {a.id for a in model.actors}
    for n in model.nodes:
        if n.actor not in actor_ids:
            add("error", "unknown-actor", f"node {n.id!r} owned by unknown actor {n.actor!r}", n.id)
    for f in model.sequence_flows:
        if model.actor_of(f.source) != model.actor_of(f.target):
            add("error", "cross-actor-seq", f"sequence flow {f.id!r} crosses actors", f.id)
    for f in model.message_flows:
        if model.actor_of(f.source) == model.actor_of(f.target):
            add("error", "intra-actor-msg", f"message flow {f.id!r} stays inside one actor", f.id)
        if f.guard is not None:
            add("error", "guarded-msg", f"message flow {f.id!r} carries a guard", f.id)

    for n in model.nodes:
        if n.kind == FORK and n.flavor == "exclusive":
            flows = model.seq_out(n.id)
            if len(flows) > 1 and not any(f.guard or f.is_default for f in flows):
                add("error", "unguarded-exclusive",
                    f"exclusive fork {n.id!r} has no guards and no default flow", n.id)
    return out


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diags)


# ---------------------------------------------------------------------------
# normalization


def normalize(model: BpmnModel) -> BpmnModel:
    """Rewrite to the well-formed shape.

    Post: exactly one start labelled INIT and one end labelled SUCCESS; forks
    have one incoming and several outgoing sequence flows, joins the reverse;
    non-gateway nodes have at most one of each; mixed gateways are split into
    a join feeding a fork. Raises ``NotNormalizable`` when validation found
    hard errors. Idempotent.
    """
    diags = validate(model)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise NotNormalizable(
            "model has non-repairable defects", detail=[d.to_dict() for d in errors]
        )

    m = BpmnModel(
        model.name,
        list(model.actors),
        list(model.nodes),
        list(model.sequence_flows),
        list(model.message_flows),
    )
    used_ids = {n.id for n in m.nodes} | {f.id for f in m.sequence_flows + m.message_flows}

    def fresh(base: str) -> str:
        cand, i = base, 2
        while cand in used_ids:
            cand = f"{base}{i}"
            i += 1
        used_ids.add(cand)
        return cand

    def node_index(node_id: str) -> int:
        for i, n in enumerate(m.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)

    # single start / end
    starts = [n for n in m.nodes if n.kind == START]
    if len(starts) > 1:
        init_id, fork_id = fresh("init"), fresh("init_fork")
        owner = min(starts, key=lambda n: n.id).actor
        m.nodes.append(FlowNode(init_id, START, owner, "INIT"))
        m.nodes.append(FlowNode(fork_id, FORK, owner, "init fork", "inclusive"))
        m.sequence_flows.append(Flow(fresh("sf_init"), init_id, fork_id))
        for s in starts:
            # demote the old start to a plain task so its lane keeps its shape
            m.nodes[node_index(s.id)] = replace(s, kind=TASK)
            m.sequence_flows.append(Flow(fresh("sf_init"), fork_id, s.id))
    else:
        s = starts[0]
        if s.label != "INIT":
            m.nodes[node_index(s.id)] = replace(s, label="INIT")

    ends = [n for n in m.nodes if n.kind == END]
    if len(ends) > 1:
        succ_id, join_id = fresh("success"), fresh("success_join")
        owner = min(ends, key=lambda n: n.id).actor
        m.nodes.append(FlowNode(succ_id, END, owner, "SUCCESS"))
        m.nodes.append(FlowNode(join_id, JOIN, owner, "success join", "inclusive"))
        m.sequence_flows.append(Flow(fresh("sf_succ"), join_id, succ_id))
        for e in ends:
            m.nodes[node_index(e.id)] = replace(e, kind=TASK)
            m.sequence_flows.append(Flow(fresh("sf_succ"), e.id, join_id))
    else:
        e = ends[0]
        if e.label != "SUCCESS":
            m.nodes[node_index(e.id)] = replace(e, label="SUCCESS")

    # implicit splits/joins on non-gateways; mixed gateways
    for n in list(m.nodes):
        cur = m.node(n.id)
        ins, outs = m.seq_in(cur.id), m.seq_out(cur.id)
        if cur.kind in GATEWAY_KINDS:
            if len(ins) > 1 and len(outs) > 1:
                join_id = fresh(f"{cur.id}_join")
                fork_id = fresh(f"{cur.id}_fork")
                idx = node_index(cur.id)
                m.nodes[idx] = FlowNode(join_id, JOIN, cur.actor, cur.label + " join", cur.flavor)
                m.nodes.insert(idx + 1, FlowNode(fork_id, FORK, cur.actor, cur.label + " fork", cur.flavor))
                for i, f in enumerate(m.sequence_flows):
                    if f.target == cur.id:
                        m.sequence_flows[i] = replace(f, target=join_id)
                    elif f.source == cur.id:
                        m.sequence_flows[i] = replace(f, source=fork_id)
                m.sequence_flows.append(Flow(fresh(f"sf_{cur.id}"), join_id, fork_id))
        else:
            if len(outs) > 1:
                fork_id = fresh(f"{cur.id}_split")
                m.nodes.insert(node_index(cur.id) + 1,
                               FlowNode(fork_id, FORK, cur.actor, cur.label + " split", "inclusive"))
                for i, f in enumerate(m.sequence_flows):
                    if f.source == cur.id:
                        m.sequence_flows[i] = replace(f, source=fork_id)
                m.sequence_flows.append(Flow(fresh(f"sf_{cur.id}"), cur.id, fork_id))
            if len(ins) > 1:
                join_id = fresh(f"{cur.id}_join")
                m.nodes.insert(node_index(cur.id),
                               FlowNode(join_id, JOIN, cur.actor, cur.label + " join", "inclusive"))
                for i, f in enumerate(m.sequence_flows):
                    if f.target == cur.id:
                        m.sequence_flows[i] = replace(f, target=join_id)
                m.sequence_flows.append(Flow(fresh(f"sf_{cur.id}"), join_id, cur.id))

    # guards on inclusive fork flows default to literal true
    for i, f in enumerate(m.sequence_flows):
        try:
            src = m.node(f.source)
        except KeyError:
            continue
        if src.kind == FORK and src.flavor == "inclusive" and f.guard is None:
            m.sequence_flows[i] = replace(f, guard=TRUE)

    _assert_well_formed(m)
    return m


def _assert_well_formed(m: BpmnModel) -> None:
    starts = [n for n in m.nodes if n.kind == START]
    ends = [n for n in m.nodes if n.kind == END]
    if len(starts) != 1 or starts[0].label != "INIT":
        raise NotNormalizable("normalization failed to produce a single INIT start")
    if len(ends) != 1 or ends[0].label != "SUCCESS":
        raise NotNormalizable("normalization failed to produce a single SUCCESS end")
    for n in m.nodes:
        n_in, n_out = len(m.seq_in(n.id)), len(m.seq_out(n.id))
        if n.kind == FORK and n_in > 1:
            raise NotNormalizable(f"fork {n.id!r} still has {n_in} incoming flows")
        if n.kind == JOIN and n_out > 1:
            raise NotNormalizable(f"join {n.id!r} still has {n_out} outgoing flows")
        if n.kind not in GATEWAY_KINDS and (n_in > 1 or n_out > 1):
            raise NotNormalizable(f"non-gateway {n.id!r} still has parallel flows")


# ---------------------------------------------------------------------------
# canonical serialization


def _spec_dict(s: TaskSpec) -> dict:
    return {
        "ledger_writes": [list(w) for w in s.ledger_writes],
        "ledger_reads": list(s.ledger_reads),
        "emits": [list(e) for e in s.emits],
        "offchain_puts": list(s.offchain_puts),
    }


def model_to_dict(model: BpmnModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "name": model.name,
        "actors": [
            {"id": a.id, "name": a.name, "credential": a.credential} for a in model.actors
        ],
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "actor": n.actor,
                "label": n.label,
                "flavor": n.flavor,
                "effects": _spec_dict(n.task_spec),
            }
            for n in model.nodes
        ],
        "sequence_flows": [_flow_dict(f) for f in model.sequence_flows],
        "message_flows": [_flow_dict(f) for f in model.message_flows],
    }


def _flow_dict(f: Flow) -> dict:
    return {
        "id": f.id,
        "source": f.source,
        "target": f.target,
        "guard": f.guard.text if f.guard else None,
        "default": f.is_default,
        "payload_schema": f.payload_schema,
    }


def serialize_model(model: BpmnModel) -> str:
    return canonical_json(model_to_dict(model))


def model_from_dict(data: dict) -> BpmnModel:
    if data.get("schema") != MODEL_SCHEMA:
        raise SchemaVersionMismatch(
            f"expected {MODEL_SCHEMA!r}, got {data.get('schema')!r}"
        )
    model = BpmnModel(data["name"])
    for a in data["actors"]:
        model.actors.append(Actor(a["id"], a["name"], a["credential"]))
    for n in data["nodes"]:
        eff = n.get("effects") or {}
        spec = TaskSpec(
            ledger_writes=tuple((k, int(s)) for k, s in eff.get("ledger_writes", [])),
            ledger_reads=tuple(eff.get("ledger_reads", [])),
            emits=tuple((a, mn, int(s)) for a, mn, s in eff.get("emits", [])),
            offchain_puts=tuple(int(s) for s in eff.get("offchain_puts", [])),
        )
        model.nodes.append(FlowNode(n["id"], n["kind"], n["actor"], n["label"], n.get("flavor", ""), spec))
    for f in data["sequence_flows"]:
        model.sequence_flows.append(_flow_from_dict(f))
    for f in data["message_flows"]:
        model.message_flows.append(_flow_from_dict(f))
    return model


def _flow_from_dict(f: dict) -> Flow:
    guard = parse_guard(f["guard"]) if f.get("guard") else None
    return Flow(f["id"], f["source"], f["target"], guard, bool(f.get("default")), f.get("payload_schema", ""))


def parse_model_json(text: str) -> BpmnModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise XmlSyntax(f"model JSON is not parseable: {exc}")
    return model_from_dict(data)


def load_model(path: str) -> BpmnModel:
    """Read a model from disk; .bpmn/.xml parse as XML, .json as canonical JSON."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("<"):
        return parse_bpmn(text, name=path.rsplit("/", 1)[-1].rsplit(".", 1)[0])
    return parse_model_json(text)
