"""Single-entry single-exit region analysis over the flow DAG.

The top level of any single-source single-sink DAG decomposes into a sequence
of blocks delimited by the edges that lie on *every* source-to-sink path
("cut edges"). Blocks between consecutive cut edges partition the vertex set;
maximal runs of single-vertex blocks are fused into chain regions so a run of
n serial activities is reported as one region, never n.

Transaction candidates are the multi-vertex blocks of that fused sequence
plus every contiguous interval of two or more blocks, which for k blocks in
series yields k*(k+1)/2 candidates in total. Candidates are labelled S1..Sk:
minimal regions first in topological order, then intervals ordered by start
position and length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ContainmentViolation
from .graph import DominatorInfo, FlowDag, dominators


@dataclass(frozen=True)
class Region:
    id: str
    entry: str
    exit: str
    members: frozenset[str]
    composite: bool
    span: tuple[int, int]  # inclusive block-index range in the fused sequence

    @property
    def is_minimal(self) -> bool:
        return self.span[0] == self.span[1]

    def member_labels(self, dag: FlowDag) -> frozenset[str]:
        return frozenset(dag.vertices[v].label for v in self.members)


@dataclass
class RegionForest:
    """Candidate regions plus containment structure.

    ``parent`` maps a region id to the smallest candidate properly containing
    it (fewest spanned blocks, ties broken by earliest start). ``blocks``
    keeps the full fused top-level sequence, including single-vertex blocks
    that are not candidates themselves but still count as interval atoms.
    """

    dag: FlowDag
    regions: list[Region]
    parent: dict[str, str]
    blocks: list[frozenset[str]]
    block_entry: list[str]
    block_exit: list[str]
    roots: list[str] = field(default_factory=list)

    def by_id(self, region_id: str) -> Region:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(region_id)

    def minimal(self) -> list[Region]:
        return [r for r in self.regions if r.is_minimal]

    def children(self, region_id: str) -> list[str]:
        return [r.id for r in self.regions if self.parent.get(r.id) == region_id]


def _path_counts(dag: FlowDag) -> tuple[dict[str, int], dict[str, int]]:
    from_source = {v: 0 for v in dag.vertices}
    from_source[dag.source] = 1
    for v in dag.order:
        for w in dag.succ(v):
            from_source[w] += from_source[v]
    to_sink = {v: 0 for v in dag.vertices}
    to_sink[dag.sink] = 1
    for v in reversed(dag.order):
        for w in dag.succ(v):
            to_sink[v] += to_sink[w]
    return from_source, to_sink


def _cut_edges(dag: FlowDag) -> list[tuple[str, str]]:
    """Edges on every source-to-sink path, in path order.

    An edge (u, v) is on every path iff paths(source->u) * paths(v->sink)
    equals the total path count. Exact integer arithmetic, so no estimates.
    """
    from_source, to_sink = _path_counts(dag)
    total = from_source[dag.sink]
    cuts = []
    for e in dag.edges:
        if from_source[e.source] * to_sink[e.target] == total:
            cuts.append((e.source, e.target))
    pos = {v: i for i, v in enumerate(dag.order)}
    cuts.sort(key=lambda e: pos[e[0]])
    return cuts


def _raw_blocks(dag: FlowDag) -> list[list[str]]:
    """Partition vertices into blocks between consecutive cut edges."""
    cut = set(_cut_edges(dag))
    block_of = {dag.source: 0}
    for v in dag.order:
        for e in dag.out_edges(v):
            idx = block_of[v] + (1 if (e.source, e.target) in cut else 0)
            prev = block_of.get(e.target)
            # well-defined: a vertex cannot sit on both sides of a cut edge
            assert prev is None or prev == idx, (e.target, prev, idx)
            block_of[e.target] = idx
    n_blocks = max(block_of.values()) + 1
    blocks: list[list[str]] = [[] for _ in range(n_blocks)]
    for v in dag.order:
        blocks[block_of[v]].append(v)
    return blocks


def _branchy(dag: FlowDag, members) -> bool:
    return any(
        len(dag.in_edges(v)) > 1 or len(dag.out_edges(v)) > 1 for v in members
    )


def fuse_chains(blocks: list[list[str]]) -> list[list[str]]:
    """Fuse maximal runs of consecutive single-vertex blocks into one chain.

    Multi-vertex blocks pass through untouched; no fused output is a proper
    sub-chain of another.
    """
    fused: list[list[str]] = []
    run: list[str] = []
    for b in blocks:
        if len(b) == 1:
            run.extend(b)
        else:
            if run:
                fused.append(run)
                run = []
            fused.append(list(b))
    if run:
        fused.append(run)
    return fused


def canonical_regions(dag: FlowDag, dom: DominatorInfo) -> list[Region]:
    """The fused top-level decomposition as Region objects, singletons skipped."""
    forest = enumerate_candidates(dag, dom)
    return forest.minimal()


def enumerate_candidates(dag: FlowDag, dom: DominatorInfo | None = None) -> RegionForest:
    dom = dom or dominators(dag)
    fused = fuse_chains(_raw_blocks(dag))
    blocks = [frozenset(b) for b in fused]
    entries = [b[0] for b in fused]
    exits = [b[-1] for b in fused]

    regions: list[Region] = []
    # minimal regions: fused blocks with at least two vertices, topo order
    for i, b in enumerate(fused):
        if len(b) < 2:
            continue
        rid = f"S{len(regions) + 1}"
        regions.append(Region(rid, entries[i], exits[i], blocks[i], _branchy(dag, b), (i, i)))
    # intervals of >=2 consecutive blocks, by start then length
    k = len(fused)
    counter = len(regions)
    for start in range(k):
        for end in range(start + 1, k):
            counter += 1
            members = frozenset().union(*blocks[start:end + 1])
            regions.append(
                Region(f"S{counter}", entries[start], exits[end], members, True, (start, end))
            )

    for r in regions:
        _check_region(dag, dom, r)

    forest = RegionForest(dag, regions, {}, blocks, entries, exits)
    containment(forest)
    return forest


def _check_region(dag: FlowDag, dom: DominatorInfo, r: Region) -> None:
    """Defensive: every emitted region must satisfy the SESE edge conditions."""
    assert dom.dominates(r.entry, r.exit), r
    assert dom.postdominates(r.exit, r.entry), r
    entering = [e for e in dag.edges if e.target in r.members and e.source not in r.members]
    leaving = [e for e in dag.edges if e.source in r.members and e.target not in r.members]
    if r.entry != dag.source:
        assert len(entering) == 1 and entering[0].target == r.entry, r
    else:
        assert not entering, r
    if r.exit != dag.sink:
        assert len(leaving) == 1 and leaving[0].source == r.exit, r
    else:
        assert not leaving, r


def containment(forest: RegionForest) -> dict:
    """Assign parent links and verify the overlap discipline.

    Minimal regions must be pairwise disjoint. Any two candidates must be
    disjoint, nested, or overlap in complete blocks only; anything else is a
    ContainmentViolation. Returns a report dict with any violations listed.
    """
    regions = forest.regions
    violations: list[str] = []

    for i, a in enumerate(regions):
        for b in regions[i + 1:]:
            shared = a.members & b.members
            if not shared:
                continue
            if a.members <= b.members or b.members <= a.members:
                continue
            # overlap is benign iff it covers complete shared blocks
            lo = max(a.span[0], b.span[0])
            hi = min(a.span[1], b.span[1])
            aligned = frozenset().union(*forest.blocks[lo:hi + 1]) if lo <= hi else frozenset()
            if shared != aligned:
                violations.append(f"{a.id} and {b.id} overlap mid-block")

    parent: dict[str, str] = {}
    for r in regions:
        containers = [
            c for c in regions
            if c.id != r.id and c.span[0] <= r.span[0] and c.span[1] >= r.span[1]
            and (c.span[1] - c.span[0]) > (r.span[1] - r.span[0])
        ]
        if containers:
            best = min(containers, key=lambda c: (c.span[1] - c.span[0], c.span[0]))
            parent[r.id] = best.id
    forest.parent = parent
    forest.roots = [r.id for r in regions if r.id not in parent]

    if violations:
        raise ContainmentViolation("candidate regions overlap mid-block", detail=violations)
    return {"violations": violations, "parent": dict(parent), "roots": list(forest.roots)}


def candidate_report(forest: RegionForest) -> dict:
    """JSON-facing summary used by the CLI and the HTTP service."""
    dag = forest.dag
    return {
        "schema": "tabsplus-candidates/1",
        "count": len(forest.regions),
        "minimal": [r.id for r in forest.minimal()],
        "regions": [
            {
                "id": r.id,
                "entry": r.entry,
                "exit": r.exit,
                "entry_label": dag.vertices[r.entry].label,
                "exit_label": dag.vertices[r.exit].label,
                "members": sorted(r.members),
                "member_labels": sorted(dag.vertices[v].label for v in r.members),
                "composite": r.composite,
                "minimal": r.is_minimal,
                "parent": forest.parent.get(r.id),
            }
            for r in forest.regions
        ],
        "roots": forest.roots,
    }
