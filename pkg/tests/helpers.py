"""Builders for small synthetic models shared across test modules."""

from tabsplus.graph import build_dag
from tabsplus.model import END, START, TASK, Actor, BpmnModel, Flow, FlowNode


def model_from_edges(edges, name="synthetic"):
    """Single-actor model over (source, target) id pairs.

    The unique id with no incoming edge becomes the start event, the unique
    id with no outgoing edge the end event, everything else a plain task.
    """
    ids = []
    seen = set()
    for s, t in edges:
        for v in (s, t):
            if v not in seen:
                seen.add(v)
                ids.append(v)
    sources = {s for s, _ in edges}
    targets = {t for _, t in edges}
    nodes = []
    for v in ids:
        if v not in targets:
            kind = START
        elif v not in sources:
            kind = END
        else:
            kind = TASK
        nodes.append(FlowNode(v, kind, "a", v))
    flows = [Flow(f"f{i}", s, t) for i, (s, t) in enumerate(edges)]
    return BpmnModel(name, [Actor("a", "A", "cred-a")], nodes, flows, [])


def dag_from_edges(edges, name="synthetic"):
    return build_dag(model_from_edges(edges, name))


def random_dag_edges(rng, n):
    """Random single-source single-sink DAG over n0..n{n-1} in index order."""
    edges = set()
    for i in range(1, n):
        edges.add((f"n{rng.randrange(i)}", f"n{i}"))
    for i in range(n - 1):
        if not any(s == f"n{i}" for s, _ in edges):
            edges.add((f"n{i}", f"n{rng.randrange(i + 1, n)}"))
    for _ in range(rng.randrange(7)):
        i = rng.randrange(n - 1)
        edges.add((f"n{i}", f"n{rng.randrange(i + 1, n)}"))
    return sorted(edges)
