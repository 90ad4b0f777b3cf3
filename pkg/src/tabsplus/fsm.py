"""Synthesis of discrete-event state machines from the flow DAG and a plan.

Every vertex of the DAG lands on exactly one machine:

* per actor, the non-gateway vertices split into chains by control condition:
  two vertices share a chain iff they execute under exactly the same set of
  fork decisions. Chains whose first vertex hangs off a fork branch carry a
  ``spawned_by`` tag.
* each fork gateway becomes a control machine carrying its guard table, each
  join gateway a pass-through machine (strict wait-all behind a flag).
* vertices of a selected region are wrapped into hierarchical states holding
  region submachines; ``flatten`` lifts those out as separate transaction
  machines, so an interpreter per actor never executes region vertices
  directly.

``flatten`` splices a single untagged submachine inline and lifts anything
region-tagged or concurrent; it never builds product machines, which keeps
the one-vertex-one-machine invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import CorruptPackage, SchemaVersionMismatch, UnguardedExclusiveFork
from .graph import FlowDag
from .model import FORK, GATEWAY_KINDS, JOIN, BpmnModel
from .plan import TxnPlan, _method_slug
from .sese import RegionForest

FSM_SCHEMA = "tabsplus-fsm/1"

MACHINE_ACTOR = "actor"
MACHINE_CONTROL = "control"
MACHINE_JOIN = "join"
MACHINE_TXN = "txn"


@dataclass(frozen=True)
class State:
    id: str
    submachine: tuple = ()  # nested machines; empty once flattened


@dataclass(frozen=True)
class Transition:
    vertex: str
    source: str
    target: str


@dataclass
class Fsm:
    id: str
    kind: str
    owner: str
    region: str = ""
    spawned_by: str = ""
    flavor: str = ""      # control machines: exclusive | inclusive
    strict: bool = False  # join machines: wait for every inflow
    inflows: int = 0
    primary: bool = False  # the actor's anchor machine, kept even when empty
    states: list[State] = field(default_factory=list)
    vertices: list[str] = field(default_factory=list)
    branches: tuple = ()  # control machines: guard table in flow order

    @property
    def start(self) -> str:
        return self.states[0].id

    def is_hierarchical(self) -> bool:
        return any(s.submachine for s in self.states)

    def transitions(self) -> list[Transition]:
        if self.kind in (MACHINE_CONTROL, MACHINE_JOIN):
            s = self.states[0].id
            return [Transition(v, s, s) for v in self.vertices]
        return [
            Transition(v, self.states[i].id, self.states[i + 1].id)
            for i, v in enumerate(self.vertices)
        ]


@dataclass
class DeFsmModel:
    machines: list[Fsm]

    def machine(self, machine_id: str) -> Fsm:
        for m in self.machines:
            if m.id == machine_id:
                return m
        raise KeyError(machine_id)

    def vertex_index(self) -> dict[str, tuple[str, int]]:
        index: dict[str, tuple[str, int]] = {}
        for m in self.machines:
            for i, v in enumerate(m.vertices):
                index[v] = (m.id, i)
        return index

    def for_region(self, region_id: str) -> list[Fsm]:
        return [m for m in self.machines if m.region == region_id]

    def by_kind(self, kind: str) -> list[Fsm]:
        return [m for m in self.machines if m.kind == kind]


# ---------------------------------------------------------------------------
# control conditions and chain decomposition


def _conditions(model: BpmnModel, dag: FlowDag) -> dict[str, frozenset]:
    """For each vertex, the set of (fork, flow) decisions it depends on.

    An edge out of a fork marks a decision unless it is an inclusive flow
    guarded by literal true (those always fire). A vertex with several
    in-edges depends only on decisions shared by all of them, so the region
    after a join is unconditional again.
    """
    flows = {f.id: f for f in model.sequence_flows + model.message_flows}
    cond: dict[str, frozenset] = {dag.source: frozenset()}
    for v in dag.order:
        exts = []
        for e in dag.in_edges(v):
            c = set(cond[e.source])
            src = dag.vertices[e.source]
            if src.kind == FORK:
                f = flows[e.flow_id]
                always = src.flavor == "inclusive" and f.guard is not None and f.guard.text == "true"
                if not always:
                    c.add((e.source, e.flow_id))
            exts.append(frozenset(c))
        if exts:
            cond[v] = frozenset.intersection(*exts)
        else:
            cond[v] = frozenset()
    return cond


def _actor_chains(dag: FlowDag, cond: dict[str, frozenset], actor_id: str) -> list[list[str]]:
    chains: list[list[str]] = []
    keys: list[frozenset] = []
    for v in dag.order:
        node = dag.vertices[v]
        if node.actor != actor_id or node.kind in GATEWAY_KINDS:
            continue
        c = cond[v]
        if c in keys:
            chains[keys.index(c)].append(v)
        else:
            keys.append(c)
            chains.append([v])
    return chains


def _innermost_region(v: str, plan: TxnPlan, members: dict[str, frozenset]) -> str:
    holding = [rid for rid in plan.selection if v in members[rid]]
    if not holding:
        return ""
    return min(holding, key=lambda rid: len(members[rid]))


# ---------------------------------------------------------------------------
# hierarchy construction


def _build_chain_machine(
    mid: str,
    kind: str,
    owner: str,
    slug: str,
    chain: list[str],
    own_region: str,
    level_regions: list[str],
    plan: TxnPlan,
    members: dict[str, frozenset],
    counter: dict,
    spawned: str,
    primary: bool = False,
) -> Fsm:
    groups: list[tuple[str, list[str]]] = []
    for v in chain:
        rid = next((r for r in level_regions if v in members[r]), "")
        if groups and groups[-1][0] == rid:
            groups[-1][1].append(v)
        else:
            groups.append((rid, [v]))

    states = [State(f"{mid}.0")]
    vertices: list[str] = []
    for rid, verts in groups:
        if not rid:
            for v in verts:
                vertices.append(v)
                states.append(State(f"{mid}.{len(states)}"))
        else:
            n = counter.get((rid, slug), 0) + 1
            counter[(rid, slug)] = n
            sub_id = f"txn_{rid}__{slug}" + ("" if n == 1 else f"_{n}")
            sub = _build_chain_machine(
                sub_id, MACHINE_TXN, owner, slug, verts, rid,
                plan.children(rid), plan, members, counter, "",
            )
            last = states[-1]
            states[-1] = State(last.id, last.submachine + (sub,))
    return Fsm(
        mid, kind, owner, region=own_region, spawned_by=spawned,
        primary=primary, states=states, vertices=vertices,
    )


def build_hierarchy(
    model: BpmnModel, dag: FlowDag, forest: RegionForest, plan: TxnPlan
) -> list[Fsm]:
    """Machines with hierarchical states; region content still nested inside."""
    cond = _conditions(model, dag)
    fork_of = {
        f.target: f.source
        for f in model.sequence_flows
        if model.node(f.source).kind == FORK
    }
    members = {rid: forest.by_id(rid).members for rid in plan.selection}
    roots = plan.roots()
    counter: dict = {}
    machines: list[Fsm] = []

    for actor in model.actors:
        slug = _method_slug(actor.name)
        chains = _actor_chains(dag, cond, actor.id)
        if not chains:
            machines.append(
                Fsm(f"actor_{slug}", MACHINE_ACTOR, actor.id, primary=True,
                    states=[State(f"actor_{slug}.0")])
            )
            continue
        for ci, chain in enumerate(chains):
            mid = f"actor_{slug}" if ci == 0 else f"actor_{slug}_{ci + 1}"
            machines.append(
                _build_chain_machine(
                    mid, MACHINE_ACTOR, actor.id, slug, chain, "",
                    roots, plan, members, counter,
                    fork_of.get(chain[0], ""), primary=ci == 0,
                )
            )

    for v in dag.order:
        node = dag.vertices[v]
        if node.kind == FORK:
            flows = model.seq_out(v)
            if (
                node.flavor == "exclusive"
                and len(flows) > 1
                and not any(f.guard is not None or f.is_default for f in flows)
            ):
                raise UnguardedExclusiveFork(
                    f"exclusive fork {v!r} has neither guards nor a default flow"
                )
            branches = tuple(
                {
                    "flow": f.id,
                    "target": f.target,
                    "guard": f.guard.text if f.guard else "",
                    "default": f.is_default,
                }
                for f in flows
            )
            machines.append(
                Fsm(f"ctrl_{v}", MACHINE_CONTROL, node.actor,
                    region=_innermost_region(v, plan, members),
                    flavor=node.flavor or "inclusive",
                    states=[State(f"ctrl_{v}.0")], vertices=[v], branches=branches)
            )
        elif node.kind == JOIN:
            machines.append(
                Fsm(f"join_{v}", MACHINE_JOIN, node.actor,
                    region=_innermost_region(v, plan, members),
                    inflows=len(dag.in_edges(v)),
                    states=[State(f"join_{v}.0")], vertices=[v])
            )
    return machines


# ---------------------------------------------------------------------------
# flattening


def flatten(machines: list[Fsm]) -> list[Fsm]:
    """Remove hierarchical states: splice single untagged submachines inline,
    lift region-tagged and concurrent submachines to the top level."""
    out: list[Fsm] = []
    for m in machines:
        out.extend(_flatten_machine(m))
    return out


def _flatten_machine(m: Fsm) -> list[Fsm]:
    if not m.is_hierarchical():
        return [m]
    lifted: list[Fsm] = []
    new_states: list[State] = []
    new_vertices: list[str] = []

    for i, st in enumerate(m.states):
        subs: list[Fsm] = []
        for sub in st.submachine:
            subs.extend(_flatten_machine(sub))
        def liftable(s: Fsm) -> bool:
            return bool(s.region) or s.kind in (MACHINE_CONTROL, MACHINE_JOIN)

        to_splice = [s for s in subs if not liftable(s)]
        to_lift = [s for s in subs if liftable(s)]
        if len(to_splice) > 1:  # concurrent: independent machines, no product
            to_lift = to_splice + to_lift
            to_splice = []
        if to_splice:
            sub = to_splice[0]
            for j, sub_state in enumerate(sub.states):
                new_states.append(State(f"{st.id}/{sub_state.id}"))
                if j < len(sub.vertices):
                    new_vertices.append(sub.vertices[j])
        else:
            new_states.append(State(st.id))
        if i == 0 and m.spawned_by:
            to_lift = [
                replace(s, spawned_by=s.spawned_by or m.spawned_by) for s in to_lift
            ]
        lifted.extend(to_lift)
        if i < len(m.vertices):
            new_vertices.append(m.vertices[i])

    flat = Fsm(
        m.id, m.kind, m.owner, m.region, m.spawned_by, m.flavor, m.strict,
        m.inflows, m.primary, new_states, new_vertices, m.branches,
    )
    return [flat] + lifted


# ---------------------------------------------------------------------------
# top level


def synthesize(
    model: BpmnModel,
    dag: FlowDag,
    forest: RegionForest,
    plan: TxnPlan,
    strict_joins: bool = False,
) -> DeFsmModel:
    flat = flatten(build_hierarchy(model, dag, forest, plan))
    if strict_joins:
        for m in flat:
            if m.kind == MACHINE_JOIN:
                m.strict = True
    kept = [m for m in flat if m.vertices or m.primary]

    sel_index = {rid: i for i, rid in enumerate(plan.selection)}
    rank = {MACHINE_ACTOR: 0, MACHINE_CONTROL: 1, MACHINE_JOIN: 1, MACHINE_TXN: 2}

    def sort_key(pair):
        i, m = pair
        return (rank[m.kind], sel_index.get(m.region, 0) if m.kind == MACHINE_TXN else 0, i)

    ordered = [m for _, m in sorted(enumerate(kept), key=sort_key)]
    out = DeFsmModel(ordered)
    _check_coverage(out, dag)
    return out


def _check_coverage(dm: DeFsmModel, dag: FlowDag) -> None:
    seen: dict[str, str] = {}
    for m in dm.machines:
        for v in m.vertices:
            assert v not in seen, f"vertex {v} on machines {seen[v]} and {m.id}"
            seen[v] = m.id
    missing = set(dag.vertices) - set(seen)
    assert not missing, f"vertices on no machine: {sorted(missing)}"


# ---------------------------------------------------------------------------
# serialization


def fsm_to_dict(m: Fsm) -> dict:
    if m.is_hierarchical():
        raise CorruptPackage(f"machine {m.id} still has hierarchical states")
    return {
        "id": m.id,
        "kind": m.kind,
        "owner": m.owner,
        "region": m.region,
        "spawned_by": m.spawned_by,
        "flavor": m.flavor,
        "strict": m.strict,
        "inflows": m.inflows,
        "primary": m.primary,
        "start": m.start,
        "states": [s.id for s in m.states],
        "vertices": list(m.vertices),
        "branches": [dict(b) for b in m.branches],
        "transitions": [
            {"vertex": t.vertex, "source": t.source, "target": t.target}
            for t in m.transitions()
        ],
    }


def defsm_to_dict(dm: DeFsmModel) -> dict:
    return {"schema": FSM_SCHEMA, "machines": [fsm_to_dict(m) for m in dm.machines]}


def fsm_from_dict(data: dict) -> Fsm:
    try:
        m = Fsm(
            data["id"], data["kind"], data["owner"], data.get("region", ""),
            data.get("spawned_by", ""), data.get("flavor", ""),
            bool(data.get("strict", False)), int(data.get("inflows", 0)),
            bool(data.get("primary", False)),
            [State(s) for s in data["states"]],
            list(data["vertices"]),
            tuple(dict(b) for b in data.get("branches", [])),
        )
    except (KeyError, TypeError) as exc:
        raise CorruptPackage(f"malformed machine record: {exc}")
    if not m.states:
        raise CorruptPackage(f"machine {m.id} has no states")
    if m.kind not in (MACHINE_CONTROL, MACHINE_JOIN) and len(m.states) != len(m.vertices) + 1:
        raise CorruptPackage(f"machine {m.id}: state/vertex counts disagree")
    want = [
        {"vertex": t.vertex, "source": t.source, "target": t.target}
        for t in m.transitions()
    ]
    if data.get("transitions", want) != want:
        raise CorruptPackage(f"machine {m.id}: transition table does not match chain")
    return m


def defsm_from_dict(data: dict) -> DeFsmModel:
    schema = data.get("schema")
    if schema != FSM_SCHEMA:
        raise SchemaVersionMismatch(f"expected {FSM_SCHEMA}, got {schema!r}")
    return DeFsmModel([fsm_from_dict(m) for m in data.get("machines", [])])
