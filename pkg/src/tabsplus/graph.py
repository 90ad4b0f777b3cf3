"""Directed acyclic flow graph built from a normalized model.

Vertices are the model's flow nodes; edges are its sequence flows plus its
message flows. The graph must have a unique source (INIT), a unique sink
(SUCCESS), and every vertex on some source-to-sink path. Dominators and
postdominators are computed by the iterative data-flow method over reverse
postorder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CycleDetected, Disconnected
from .model import END, START, BpmnModel, FlowNode


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    kind: str  # "seq" | "msg"
    flow_id: str
    annotation: str = ""


@dataclass
class FlowDag:
    vertices: dict[str, FlowNode]
    edges: list[Edge]
    source: str
    sink: str
    order: list[str] = field(default_factory=list)  # deterministic topological order

    def out_edges(self, v: str) -> list[Edge]:
        return self._out[v]

    def in_edges(self, v: str) -> list[Edge]:
        return self._in[v]

    def succ(self, v: str) -> list[str]:
        return [e.target for e in self._out[v]]

    def pred(self, v: str) -> list[str]:
        return [e.source for e in self._in[v]]

    def index(self) -> None:
        self._out = {v: [] for v in self.vertices}
        self._in = {v: [] for v in self.vertices}
        for e in self.edges:
            self._out[e.source].append(e)
            self._in[e.target].append(e)


@dataclass(frozen=True)
class DominatorInfo:
    idom: dict[str, str]   # immediate dominator; source maps to itself
    ipdom: dict[str, str]  # immediate postdominator; sink maps to itself

    def dominates(self, a: str, b: str) -> bool:
        while True:
            if a == b:
                return True
            nxt = self.idom[b]
            if nxt == b:
                return False
            b = nxt

    def postdominates(self, a: str, b: str) -> bool:
        while True:
            if a == b:
                return True
            nxt = self.ipdom[b]
            if nxt == b:
                return False
            b = nxt


def build_dag(model: BpmnModel) -> FlowDag:
    """Assemble and check the DAG; rejects cycles and unreachable vertices."""
    vertices = {n.id: n for n in model.nodes}
    edges = [
        Edge(f.source, f.target, "seq", f.id, f.payload_schema)
        for f in model.sequence_flows
    ] + [
        Edge(f.source, f.target, "msg", f.id, f.payload_schema)
        for f in model.message_flows
    ]

    starts = [n.id for n in model.nodes if n.kind == START]
    ends = [n.id for n in model.nodes if n.kind == END]
    if len(starts) != 1 or len(ends) != 1:
        raise Disconnected(f"expected one source and one sink, got {starts} / {ends}")

    dag = FlowDag(vertices, edges, starts[0], ends[0])
    dag.index()

    order = _topological(dag)
    dag.order = order

    sources = {v for v in vertices if not dag.in_edges(v)}
    sinks = {v for v in vertices if not dag.out_edges(v)}
    if sources != {dag.source}:
        raise Disconnected(f"expected {dag.source!r} as the only source, got {sorted(sources)}")
    if sinks != {dag.sink}:
        raise Disconnected(f"expected {dag.sink!r} as the only sink, got {sorted(sinks)}")

    reach = _reachable(dag, dag.source, forward=True)
    coreach = _reachable(dag, dag.sink, forward=False)
    stranded = sorted(set(vertices) - (reach & coreach))
    if stranded:
        raise Disconnected(f"vertices not on any source-to-sink path: {stranded}")
    return dag


def _topological(dag: FlowDag) -> list[str]:
    """Kahn's algorithm; ties broken by vertex id so the order is stable."""
    import heapq

    indeg = {v: len(dag.in_edges(v)) for v in dag.vertices}
    ready = [v for v, d in sorted(indeg.items()) if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in dag.succ(v):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != len(dag.vertices):
        cycle = _find_cycle(dag, set(order))
        raise CycleDetected("flow graph contains a cycle: " + " -> ".join(cycle))
    return order


def _find_cycle(dag: FlowDag, done: set[str]) -> list[str]:
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(v: str) -> list[str]:
        color[v] = 1
        stack.append(v)
        for w in dag.succ(v):
            if color.get(w, 0) == 1:
                return stack[stack.index(w):] + [w]
            if color.get(w, 0) == 0:
                found = visit(w)
                if found:
                    return found
        color[v] = 2
        stack.pop()
        return []

    for v in sorted(dag.vertices):
        if v not in done and color.get(v, 0) == 0:
            found = visit(v)
            if found:
                return found
    return ["?"]


def _reachable(dag: FlowDag, start: str, forward: bool) -> set[str]:
    step = dag.succ if forward else dag.pred
    seen = {start}
    work = [start]
    while work:
        v = work.pop()
        for w in step(v):
            if w not in seen:
                seen.add(w)
                work.append(w)
    return seen


def _immediate_dominators(order: list[str], pred) -> dict[str, str]:
    """Cooper-Harvey-Kennedy iteration; ``order`` is reverse postorder."""
    position = {v: i for i, v in enumerate(order)}
    root = order[0]
    idom: dict[str, str] = {root: root}

    def intersect(a: str, b: str) -> str:
        while a != b:
            while position[a] > position[b]:
                a = idom[a]
            while position[b] > position[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for v in order[1:]:
            candidates = [p for p in pred(v) if p in idom]
            new = candidates[0]
            for p in candidates[1:]:
                new = intersect(new, p)
            if idom.get(v) != new:
                idom[v] = new
                changed = True
    return idom


def dominators(dag: FlowDag) -> DominatorInfo:
    order = dag.order or _topological(dag)
    idom = _immediate_dominators(order, dag.pred)
    ipdom = _immediate_dominators(list(reversed(order)), dag.succ)
    return DominatorInfo(idom=idom, ipdom=ipdom)


def topological_ranks(dag: FlowDag) -> dict[str, int]:
    """Longest-path layering; used as layout hints by the service and UI."""
    rank = {v: 0 for v in dag.vertices}
    for v in dag.order:
        for w in dag.succ(v):
            rank[w] = max(rank[w], rank[v] + 1)
    return rank


def to_dot(dag: FlowDag) -> str:
    """Deterministic GraphViz rendering of the DAG."""
    def esc(s: str) -> str:
        return s.replace("\\", "\\\\").replace('"', '\\"')

    lines = ["digraph flow {", "  rankdir=LR;"]
    for v in sorted(dag.vertices):
        node = dag.vertices[v]
        shape = {
            START: "circle",
            END: "doublecircle",
        }.get(node.kind, "diamond" if node.kind in ("ForkGateway", "JoinGateway") else "box")
        lines.append(f'  "{esc(v)}" [label="{esc(node.label)}", shape={shape}];')
    for e in sorted(dag.edges, key=lambda e: (e.source, e.target, e.flow_id)):
        style = "solid" if e.kind == "seq" else "dashed"
        lines.append(f'  "{esc(e.source)}" -> "{esc(e.target)}" [style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def dag_to_dict(dag: FlowDag) -> dict:
    ranks = topological_ranks(dag)
    return {
        "source": dag.source,
        "sink": dag.sink,
        "vertices": [
            {
                "id": v,
                "kind": dag.vertices[v].kind,
                "actor": dag.vertices[v].actor,
                "label": dag.vertices[v].label,
                "rank": ranks[v],
            }
            for v in dag.order
        ],
        "edges": [
            {"source": e.source, "target": e.target, "kind": e.kind, "flow": e.flow_id}
            for e in sorted(dag.edges, key=lambda e: (e.source, e.target, e.flow_id))
        ],
    }
