"""Transaction plans: which candidate regions run transactionally, and how.

A plan picks a subset of the candidate regions, a commit mechanism and an
optional encrypted-cache flag. Selected regions must be pairwise disjoint or
properly nested; nesting induces the coordinator/participant structure used
for two-phase commit. Region methods are partitioned per actor and per
selected region, so the method count is ``len(actors) + len(selection)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import OverlapNotNested, PlanRegionUnknown, SchemaVersionMismatch, UnsupportedMechanism
from .model import BpmnModel
from .sese import RegionForest

PLAN_SCHEMA = "tabsplus-plan/1"

NO_XA = "no-xa"
SC_ALL = "sc-all"
SC_2M = "sc-2m"
SC_2S = "sc-2s"
MECHANISMS = (NO_XA, SC_ALL, SC_2M, SC_2S)

ROLE_INTERPRETER = "actor-interpreter"
ROLE_TXN = "txn"
ROLE_COORDINATOR = "txn-coordinator"
ROLE_PARTICIPANT = "txn-participant"


@dataclass
class TxnPlan:
    mechanism: str
    selection: list[str] = field(default_factory=list)
    crypto: bool = False
    model: str = ""
    nesting: dict[str, str] = field(default_factory=dict)
    participants: dict[str, list[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def children(self, region_id: str) -> list[str]:
        return [r for r in self.selection if self.nesting.get(r) == region_id]

    def roots(self) -> list[str]:
        return [r for r in self.selection if r not in self.nesting]


def empty_plan(model: str = "") -> TxnPlan:
    return TxnPlan(NO_XA, [], False, model)


def validate_selection(forest: RegionForest, selection: list[str]) -> list[str]:
    """Check ids and the overlap discipline; returns the canonical order.

    Selected regions are ordered as the forest enumerates them, duplicates
    collapse. Two selected regions may share vertices only when one contains
    the other, otherwise a region transaction boundary would have to cut
    through a sibling.
    """
    known = [r.id for r in forest.regions]
    for rid in selection:
        if rid not in known:
            raise PlanRegionUnknown(f"unknown region {rid!r}", detail=sorted(set(selection) - set(known)))
    ordered = [rid for rid in known if rid in set(selection)]
    for i, a in enumerate(ordered):
        ra = forest.by_id(a)
        for b in ordered[i + 1:]:
            rb = forest.by_id(b)
            shared = ra.members & rb.members
            if shared and not (ra.members <= rb.members or rb.members <= ra.members):
                raise OverlapNotNested(
                    f"selected regions {a} and {b} overlap without nesting",
                    detail={"a": a, "b": b, "shared": sorted(shared)},
                )
    return ordered


def derive_participants(forest: RegionForest, region_id: str) -> list[str]:
    """Actors owning at least one member vertex, in stable sorted order."""
    dag = forest.dag
    region = forest.by_id(region_id)
    return sorted({dag.vertices[v].actor for v in region.members})


def build_plan(
    forest: RegionForest,
    selection: list[str],
    mechanism: str = SC_ALL,
    crypto: bool = False,
    model: str = "",
) -> TxnPlan:
    if mechanism not in MECHANISMS:
        raise UnsupportedMechanism(f"unknown mechanism {mechanism!r}; pick one of {MECHANISMS}")
    ordered = validate_selection(forest, selection)
    if mechanism == NO_XA and ordered:
        raise UnsupportedMechanism("no-xa runs without region transactions; clear the selection")
    if mechanism != NO_XA and not ordered:
        raise UnsupportedMechanism(f"{mechanism} requires at least one selected region")

    plan = TxnPlan(mechanism, ordered, crypto, model or forest.dag.vertices[forest.dag.source].actor)
    by_id = {rid: forest.by_id(rid) for rid in ordered}
    for rid in ordered:
        # nesting parent: the smallest selected region strictly containing rid
        ups = [
            other for other in ordered
            if other != rid and by_id[rid].members < by_id[other].members
        ]
        if ups:
            plan.nesting[rid] = min(ups, key=lambda o: len(by_id[o].members))
        plan.participants[rid] = derive_participants(forest, rid)

    for child, parent in plan.nesting.items():
        extra = set(plan.participants[child]) - set(plan.participants[parent])
        if extra:  # unreachable for member-derived participants; kept as a tripwire
            plan.warnings.append(
                f"{child} involves actors outside its parent {parent}: {sorted(extra)}"
            )
    return plan


@dataclass(frozen=True)
class MethodSpec:
    name: str
    role: str
    owner: str
    actor: str = ""
    region: str = ""
    parent: str = ""
    participants: tuple[str, ...] = ()


def _method_slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def method_partition(model: BpmnModel, forest: RegionForest, plan: TxnPlan) -> list[MethodSpec]:
    """One interpreter method per actor plus one method per selected region."""
    methods = [
        MethodSpec(f"actor_{_method_slug(a.name)}", ROLE_INTERPRETER, a.id, actor=a.id)
        for a in model.actors
    ]
    for rid in plan.selection:
        region = forest.by_id(rid)
        entry_actor = forest.dag.vertices[region.entry].actor
        has_children = bool(plan.children(rid))
        parent = plan.nesting.get(rid, "")
        if has_children:
            role = ROLE_COORDINATOR
        elif parent:
            role = ROLE_PARTICIPANT
        else:
            role = ROLE_TXN
        methods.append(
            MethodSpec(
                f"txn_{rid}",
                role,
                entry_actor,
                region=rid,
                parent=parent,
                participants=tuple(plan.participants[rid]),
            )
        )
    return methods


# ---------------------------------------------------------------------------
# serialization


def plan_to_dict(plan: TxnPlan) -> dict:
    return {
        "schema": PLAN_SCHEMA,
        "model": plan.model,
        "mechanism": plan.mechanism,
        "crypto": plan.crypto,
        "selection": list(plan.selection),
        "nesting": dict(sorted(plan.nesting.items())),
        "participants": {k: list(v) for k, v in sorted(plan.participants.items())},
        "warnings": list(plan.warnings),
    }


def plan_from_dict(data: dict) -> TxnPlan:
    schema = data.get("schema")
    if schema != PLAN_SCHEMA:
        raise SchemaVersionMismatch(f"expected {PLAN_SCHEMA}, got {schema!r}")
    mechanism = data.get("mechanism", "")
    if mechanism not in MECHANISMS:
        raise UnsupportedMechanism(f"unknown mechanism {mechanism!r}")
    return TxnPlan(
        mechanism,
        list(data.get("selection", [])),
        bool(data.get("crypto", False)),
        data.get("model", ""),
        dict(data.get("nesting", {})),
        {k: list(v) for k, v in data.get("participants", {}).items()},
        list(data.get("warnings", [])),
    )


def restore_plan(forest: RegionForest, data: dict) -> TxnPlan:
    """Deserialize and re-derive against a live forest; input wins on nothing."""
    raw = plan_from_dict(data)
    if raw.mechanism == NO_XA:
        return empty_plan(raw.model)
    plan = build_plan(forest, raw.selection, raw.mechanism, raw.crypto, raw.model)
    return plan
