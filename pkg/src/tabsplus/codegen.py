"""Weave transaction patterns into a synthesized machine model and emit the
deployable contract package.

The package is an interpreter artifact, not chain-native source: it bundles
the machines, the method partition, and per-transaction pattern descriptors
(begin/end, cache redirection, access checks, 2PC roles) that the runtime
monitor executes. Everything in it is derived deterministically from the
model and the plan, so two compilations of the same inputs are byte-equal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .canon import canonical_bytes, canonical_json, digest_of, sha256_hex
from .errors import CorruptPackage, IsolationViolation, SchemaVersionMismatch, UnsupportedMechanism
from .fsm import DeFsmModel, defsm_from_dict, defsm_to_dict, synthesize
from .graph import build_dag
from .ledger import MAIN, SIDE, GasSchedule
from .model import BpmnModel, model_from_dict, model_to_dict, normalize
from .plan import (
    MECHANISMS,
    NO_XA,
    SC_2M,
    SC_2S,
    SC_ALL,
    MethodSpec,
    TxnPlan,
    build_plan,
    method_partition,
    plan_from_dict,
    plan_to_dict,
)
from .sese import RegionForest, enumerate_candidates

PACKAGE_SCHEMA = "tabsplus-package/1"

VOTE_TIMEOUT_STEPS = 1000

CACHE_PREFIX = "cache/"


def _hidden(seed: str, region: str, name: str) -> str:
    return sha256_hex(f"{seed}|{region}|{name}".encode("utf-8"))[:32]


@dataclass
class TxnPatterns:
    """Pattern descriptors woven around one selected region."""

    region: str
    begin: dict
    end: dict
    cache_redirect: dict  # original key template -> hidden cache template
    access_check: list  # actor ids allowed to invoke the method
    two_pc: dict

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "begin": self.begin,
            "end": self.end,
            "cache_redirect": dict(self.cache_redirect),
            "access_check": list(self.access_check),
            "two_pc": self.two_pc,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TxnPatterns":
        return cls(
            region=data["region"],
            begin=dict(data["begin"]),
            end=dict(data["end"]),
            cache_redirect=dict(data["cache_redirect"]),
            access_check=list(data["access_check"]),
            two_pc=dict(data["two_pc"]),
        )


@dataclass
class ContractPackage:
    name: str
    bpmn: BpmnModel
    machines: DeFsmModel
    plan: TxnPlan
    methods: list  # MethodSpec
    method_machines: dict  # method name -> [machine ids]
    patterns: dict  # region id -> TxnPatterns
    deployment: dict  # method name -> chain id
    contracts: dict  # method name -> contract label
    cache_namespace_seed: str
    crypto_cache: bool
    gas_schedule: GasSchedule
    plan_digest: str = ""

    def method(self, name: str) -> MethodSpec:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)

    def method_of_machine(self, machine_id: str) -> str:
        for name, mids in self.method_machines.items():
            if machine_id in mids:
                return name
        raise KeyError(machine_id)

    @property
    def needs_sidechain(self) -> bool:
        return SIDE in self.deployment.values()

    def methods_on(self, chain_id: str) -> list:
        return [name for name, cid in sorted(self.deployment.items()) if cid == chain_id]


def generate(
    model: BpmnModel,
    machines: DeFsmModel,
    forest: RegionForest,
    plan: TxnPlan,
    schedule: GasSchedule | None = None,
) -> ContractPackage:
    if plan.mechanism not in MECHANISMS:
        raise UnsupportedMechanism(f"unknown mechanism {plan.mechanism!r}")
    schedule = schedule or GasSchedule()
    seed = sha256_hex(canonical_bytes({
        "bpmn": model_to_dict(model),
        "plan": plan_to_dict(plan),
    }))

    methods = method_partition(model, forest, plan)
    patterns = {
        rid: _weave_region(model, forest, plan, rid, seed)
        for rid in plan.selection
    }
    deployment, contracts = _place_methods(methods, plan.mechanism)
    method_machines = _assign_machines(model, machines, methods)

    package = ContractPackage(
        name=model.name,
        bpmn=model,
        machines=machines,
        plan=plan,
        methods=methods,
        method_machines=method_machines,
        patterns=patterns,
        deployment=deployment,
        contracts=contracts,
        cache_namespace_seed=seed,
        crypto_cache=plan.crypto,
        gas_schedule=schedule,
        plan_digest=digest_of(plan_to_dict(plan)),
    )
    report = static_isolation_check(package)
    if report:
        first = report[0]
        raise IsolationViolation(
            f"{first['method']}: {first['reason']} ({first['action']})", detail=report
        )
    return package


def _own_vertices(forest: RegionForest, plan: TxnPlan, rid: str) -> list[str]:
    """Region members not already claimed by a selected descendant region."""
    members = set(forest.by_id(rid).members)
    for other in plan.selection:
        if other != rid and forest.by_id(other).members < set(forest.by_id(rid).members):
            members -= set(forest.by_id(other).members)
    dag = forest.dag
    return sorted(members, key=dag.order.index)


def _weave_region(
    model: BpmnModel, forest: RegionForest, plan: TxnPlan, rid: str, seed: str
) -> TxnPatterns:
    redirect: dict[str, str] = {}
    for v in _own_vertices(forest, plan, rid):
        spec = model.node(v).task_spec
        for tmpl, _size in spec.ledger_writes:
            redirect.setdefault(tmpl, _cache_template(seed, rid, tmpl))
        for tmpl in spec.ledger_reads:
            redirect.setdefault(tmpl, _cache_template(seed, rid, tmpl))

    children = plan.children(rid)
    parent = plan.nesting.get(rid, "")
    if children:
        role = "coordinator"
    elif parent:
        role = "participant"
    else:
        role = "plain"

    return TxnPatterns(
        region=rid,
        begin={
            "state_key": f"{CACHE_PREFIX}{_hidden(seed, rid, '~state')}/{{run}}",
            "initial": "Active",
        },
        end={"certify_event": f"certified:{rid}", "ack_required": True},
        cache_redirect=redirect,
        access_check=list(plan.participants[rid]),
        two_pc={
            "role": role,
            "children": list(children),
            "parent": parent,
            "vote_timeout": VOTE_TIMEOUT_STEPS,
            "ack_required": True,
        },
    )


def _cache_template(seed: str, rid: str, tmpl: str) -> str:
    hidden = f"{CACHE_PREFIX}{_hidden(seed, rid, tmpl)}"
    if "{run}" in tmpl:
        hidden += "/{run}"
    return hidden


def _place_methods(methods: list, mechanism: str) -> tuple[dict, dict]:
    deployment: dict[str, str] = {}
    contracts: dict[str, str] = {}
    for m in methods:
        if not m.region:
            deployment[m.name] = MAIN
            contracts[m.name] = "c1"
        elif mechanism == SC_ALL:
            deployment[m.name] = MAIN
            contracts[m.name] = "c1"
        elif mechanism == SC_2M:
            deployment[m.name] = MAIN
            contracts[m.name] = "c2"
        elif mechanism == SC_2S:
            deployment[m.name] = SIDE
            contracts[m.name] = "c2"
        else:  # no-xa never has region methods
            raise UnsupportedMechanism(
                f"mechanism {mechanism!r} cannot deploy region method {m.name}"
            )
    return deployment, contracts


def _assign_machines(model: BpmnModel, machines: DeFsmModel, methods: list) -> dict:
    actor_method = {m.actor: m.name for m in methods if not m.region}
    region_method = {m.region: m.name for m in methods if m.region}
    assignment: dict[str, list[str]] = {m.name: [] for m in methods}
    for fsm in machines.machines:
        if fsm.region:
            name = region_method.get(fsm.region)
            if name is None:
                raise CorruptPackage(
                    f"machine {fsm.id} references unplanned region {fsm.region}"
                )
        else:
            name = actor_method.get(fsm.owner)
            if name is None:
                raise CorruptPackage(f"machine {fsm.id} owned by unknown actor {fsm.owner}")
        assignment[name].append(fsm.id)
    return assignment


# ---------------------------------------------------------------------------
# static isolation check


def static_isolation_check(package: ContractPackage) -> list[dict]:
    """Verify that transaction methods cannot touch anything outside their own
    cache namespace and declared 2PC parties. Returns one entry per violation;
    empty means isolated."""

    report: list[dict] = []
    model = package.bpmn
    plan = package.plan

    txn_methods = [m for m in package.methods if m.region]
    raw_templates = _raw_templates_outside(package)

    namespaces: dict[str, set[str]] = {}
    for m in txn_methods:
        pat = package.patterns.get(m.region)
        if pat is None:
            report.append({
                "method": m.name, "action": "weave", "referent": m.region,
                "reason": "selected region has no woven patterns",
            })
            continue
        namespaces[m.region] = set(pat.cache_redirect.values()) | {pat.begin["state_key"]}

        for v in _machine_vertices(package, m.name):
            spec = model.node(v).task_spec
            for tmpl, _size in spec.ledger_writes:
                if tmpl not in pat.cache_redirect:
                    report.append(_violation(m.name, f"write {tmpl}", tmpl, "unredirected ledger access"))
            for tmpl in spec.ledger_reads:
                if tmpl not in pat.cache_redirect:
                    report.append(_violation(m.name, f"read {tmpl}", tmpl, "unredirected ledger access"))
            for target, evname, _size in spec.emits:
                if target not in pat.access_check:
                    report.append(_violation(
                        m.name, f"emit {evname} -> {target}", target,
                        "event targets a non-participant",
                    ))

        for tmpl, hidden in pat.cache_redirect.items():
            if not hidden.startswith(CACHE_PREFIX):
                report.append(_violation(m.name, f"redirect {tmpl}", hidden, "cache escape"))
            if hidden in raw_templates:
                report.append(_violation(m.name, f"redirect {tmpl}", hidden, "collides with a global ledger key"))

        if sorted(pat.access_check) != list(plan.participants.get(m.region, [])):
            report.append(_violation(
                m.name, "access-check", m.region,
                "allowed actors differ from the region participants",
            ))
        declared = pat.two_pc
        if list(declared.get("children", [])) != list(plan.children(m.region)):
            report.append(_violation(
                m.name, "2pc children", ",".join(declared.get("children", [])),
                "coordinator lists undeclared sub-transactions",
            ))
        if declared.get("parent", "") != plan.nesting.get(m.region, ""):
            report.append(_violation(
                m.name, "2pc parent", declared.get("parent", ""),
                "participant names an undeclared coordinator",
            ))

    for a in namespaces:
        for b in namespaces:
            if a < b and namespaces[a] & namespaces[b]:
                shared = sorted(namespaces[a] & namespaces[b])[0]
                report.append(_violation(
                    f"txn_{a}", f"namespace overlap with txn_{b}", shared,
                    "cache namespaces are not disjoint",
                ))
    return report


def _violation(method: str, action: str, referent: str, reason: str) -> dict:
    return {"method": method, "action": action, "referent": referent, "reason": reason}


def _machine_vertices(package: ContractPackage, method_name: str) -> list[str]:
    verts: list[str] = []
    for mid in package.method_machines.get(method_name, []):
        verts.extend(package.machines.machine(mid).vertices)
    return verts


def _raw_templates_outside(package: ContractPackage) -> set[str]:
    """Key templates accessed by non-transaction methods, i.e. global state."""
    txn_machine_ids = {
        mid
        for m in package.methods if m.region
        for mid in package.method_machines.get(m.name, [])
    }
    raw: set[str] = set()
    for fsm in package.machines.machines:
        if fsm.id in txn_machine_ids:
            continue
        for v in fsm.vertices:
            spec = package.bpmn.node(v).task_spec
            raw.update(t for t, _ in spec.ledger_writes)
            raw.update(spec.ledger_reads)
    return raw


# ---------------------------------------------------------------------------
# one-call pipeline


def compile_package(
    model: BpmnModel,
    selection: list[str] | tuple = (),
    mechanism: str | None = None,
    crypto: bool = False,
    schedule: GasSchedule | None = None,
) -> ContractPackage:
    """Normalize, analyze, plan, synthesize, and weave in one step."""
    model = normalize(model)
    dag = build_dag(model)
    forest = enumerate_candidates(dag)
    mech = mechanism or (SC_ALL if selection else NO_XA)
    plan = build_plan(forest, list(selection), mech, crypto, model.name)
    machines = synthesize(model, dag, forest, plan)
    return generate(model, machines, forest, plan, schedule)


# ---------------------------------------------------------------------------
# serialization


def package_to_dict(package: ContractPackage) -> dict:
    return {
        "schema": PACKAGE_SCHEMA,
        "name": package.name,
        "bpmn": model_to_dict(package.bpmn),
        "machines": defsm_to_dict(package.machines),
        "plan": plan_to_dict(package.plan),
        "plan_digest": package.plan_digest,
        "methods": [
            {
                "name": m.name, "role": m.role, "owner": m.owner, "actor": m.actor,
                "region": m.region, "parent": m.parent,
                "participants": list(m.participants),
            }
            for m in package.methods
        ],
        "method_machines": {k: list(v) for k, v in package.method_machines.items()},
        "patterns": {rid: p.to_dict() for rid, p in package.patterns.items()},
        "deployment": dict(package.deployment),
        "contracts": dict(package.contracts),
        "cache_namespace_seed": package.cache_namespace_seed,
        "crypto_cache": package.crypto_cache,
        "gas_schedule": package.gas_schedule.to_dict(),
    }


def package_from_dict(data: dict) -> ContractPackage:
    if not isinstance(data, dict):
        raise CorruptPackage("package artifact is not an object")
    schema = data.get("schema")
    if schema != PACKAGE_SCHEMA:
        raise SchemaVersionMismatch(f"expected {PACKAGE_SCHEMA!r}, found {schema!r}")
    try:
        package = ContractPackage(
            name=data["name"],
            bpmn=model_from_dict(data["bpmn"]),
            machines=defsm_from_dict(data["machines"]),
            plan=plan_from_dict(data["plan"]),
            methods=[
                MethodSpec(
                    m["name"], m["role"], m["owner"], m.get("actor", ""),
                    m.get("region", ""), m.get("parent", ""),
                    tuple(m.get("participants", [])),
                )
                for m in data["methods"]
            ],
            method_machines={k: list(v) for k, v in data["method_machines"].items()},
            patterns={
                rid: TxnPatterns.from_dict(p) for rid, p in data["patterns"].items()
            },
            deployment=dict(data["deployment"]),
            contracts=dict(data["contracts"]),
            cache_namespace_seed=data["cache_namespace_seed"],
            crypto_cache=bool(data["crypto_cache"]),
            gas_schedule=GasSchedule.from_dict(data["gas_schedule"]),
            plan_digest=data["plan_digest"],
        )
    except SchemaVersionMismatch:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorruptPackage(f"package artifact is malformed: {exc}") from exc
    _check_wiring(package)
    return package


def _check_wiring(package: ContractPackage) -> None:
    method_names = {m.name for m in package.methods}
    if set(package.method_machines) != method_names:
        raise CorruptPackage("method/machine assignment does not cover the method set")
    assigned = [mid for mids in package.method_machines.values() for mid in mids]
    machine_ids = [m.id for m in package.machines.machines]
    if sorted(assigned) != sorted(machine_ids):
        raise CorruptPackage("machine assignment does not match the machine set")
    if set(package.deployment) != method_names or set(package.contracts) != method_names:
        raise CorruptPackage("deployment map does not cover the method set")
    selected = set(package.plan.selection)
    if set(package.patterns) != selected:
        raise CorruptPackage("woven patterns do not match the plan selection")


def serialize(package: ContractPackage) -> bytes:
    return canonical_json(package_to_dict(package)).encode("utf-8") + b"\n"


def deserialize(raw: bytes) -> ContractPackage:
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPackage(f"package bytes are not valid JSON: {exc}") from exc
    return package_from_dict(data)


__all__ = [
    "PACKAGE_SCHEMA", "VOTE_TIMEOUT_STEPS", "CACHE_PREFIX",
    "TxnPatterns", "ContractPackage",
    "generate", "compile_package", "static_isolation_check",
    "package_to_dict", "package_from_dict", "serialize", "deserialize",
]
