"""The monitor: a discrete-event interpreter driving the packaged machines
over the simulated ledger.

One priority queue of (timestamp, seq) events feeds every machine. External
inputs are conformance-checked against the currently enabled transitions,
then queued; internal events (tokens between machines, branch counts,
2PC messages) cascade until the queue drains. Transaction regions run under
the woven patterns: begin opens a hidden on-ledger cache, reads and writes
are redirected into it, end certifies and replays the access log onto the
real keys in one atomic frame.

Firing a vertex is one ledger invocation of its owning method. Tokens that
cross machines are metered as ledger events; tokens that cross chains go
through the relay. All of it is deterministic: same package, same inputs,
same faults -> same block hashes.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from hashlib import sha256

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .canon import canonical_bytes, digest_of, sha256_hex
from .codegen import ContractPackage
from .errors import (
    AccessDenied,
    CryptoIntegrity,
    GuardEval,
    NonConformant,
    UnknownActor,
    UnknownOrigin,
    WrongState,
)
from .fsm import MACHINE_CONTROL, MACHINE_JOIN
from .graph import build_dag, dominators
from .ledger import MAIN, SIDE, Ledger
from .model import FORK, JOIN
from .offchain import OffchainStore
from .plan import SC_2M, SC_2S

RUN_SCHEMA = "tabsplus-run/1"

DRIVABLE = ("Task", "MessageSend", "MessageReceive")

NOT_STARTED = "NotStarted"
ACTIVE = "Active"
PREPARING = "Preparing"
READY = "Ready"
COMMITTED = "Committed"
ABORTED = "Aborted"


@dataclass(frozen=True)
class ExternalInput:
    actor: str  # credential (actor id also accepted)
    origin: str  # BPMN element id
    payload: dict = field(default_factory=dict)
    ts: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExternalInput":
        return cls(
            actor=data.get("actor", ""),
            origin=data.get("origin", ""),
            payload=dict(data.get("payload", {})),
            ts=data.get("ts"),
        )


@dataclass
class FaultPlan:
    """Deterministic fault injection knobs for the test harnesses."""

    fail_at: dict = field(default_factory=dict)  # vertex id -> 1-based occurrence
    no_vote: set = field(default_factory=set)  # region ids voting "no"
    crash_pre_vote: set = field(default_factory=set)  # regions that never vote
    crash_between_phases: set = field(default_factory=set)  # coordinator regions

    def should_fail(self, vertex: str, occurrence: int) -> bool:
        want = self.fail_at.get(vertex)
        return want is not None and occurrence == want


@dataclass
class TxnContext:
    rid: str
    role: str  # plain | coordinator | participant
    parent: str
    children: list
    participants: list
    state: str = NOT_STARTED
    write_values: dict = field(default_factory=dict)  # real key -> bytes
    read_digests: dict = field(default_factory=dict)  # real key -> sha256 hex
    log: list = field(default_factory=list)  # ("r"|"w", real key, size)
    events: list = field(default_factory=list)  # buffered (name, payload bytes)
    cache_keys: list = field(default_factory=list)  # ledger cache keys created
    sealed_copies: dict = field(default_factory=dict)  # cache key -> (ct, tag)
    votes: dict = field(default_factory=dict)
    work_done: bool = False
    vote_deadline: int | None = None
    crashed: bool = False
    voted_up: bool = False

    def transition(self, target: str) -> None:
        allowed = {
            NOT_STARTED: {ACTIVE},
            ACTIVE: {PREPARING, READY, COMMITTED, ABORTED},
            PREPARING: {READY, COMMITTED, ABORTED},
            READY: {COMMITTED, ABORTED},
        }
        if target not in allowed.get(self.state, set()):
            raise WrongState(f"txn {self.rid}: no transition {self.state} -> {target}")
        self.state = target


class _MachineRt:
    def __init__(self, fsm):
        self.fsm = fsm
        self.pos = 0
        self.fire_counts: dict[str, int] = {}
        # join bookkeeping
        self.join_arrived = 0
        self.join_expected: int | None = None
        self.join_fired = False

    @property
    def done(self) -> bool:
        if self.fsm.kind in (MACHINE_CONTROL, MACHINE_JOIN):
            return True  # self-looping; never blocks completion
        return self.pos >= len(self.fsm.vertices)

    def state_id(self) -> str:
        return self.fsm.states[min(self.pos, len(self.fsm.states) - 1)].id


class Monitor:
    def __init__(
        self,
        package: ContractPackage,
        run_id: str = "r1",
        faults: FaultPlan | None = None,
        offchain: OffchainStore | None = None,
        auto_run: bool = True,
        no_ack: bool = False,
        auto_start: bool = True,
    ):
        self.package = package
        self.run_id = run_id
        self.faults = faults or FaultPlan()
        self.offchain = offchain or OffchainStore()
        self.auto_run = auto_run
        self.no_ack = no_ack
        self.ledger = Ledger(package.gas_schedule, with_side=package.needs_sidechain)
        for name, chain_id in package.deployment.items():
            self.ledger.chain(chain_id).deploy([name])

        model = package.bpmn
        self.credentials = {a.credential: a.id for a in model.actors}
        self.actor_ids = {a.id for a in model.actors}
        self._vx = package.machines.vertex_index()
        self.machines = {m.id: _MachineRt(m) for m in package.machines.machines}
        self.in_flows: dict[str, list] = {v: [] for v in self._vx}
        self.out_flows: dict[str, list] = {v: [] for v in self._vx}
        self.flow_by_id = {}
        for flow in list(model.sequence_flows) + list(model.message_flows):
            self.in_flows[flow.target].append(flow)
            self.out_flows[flow.source].append(flow)
            self.flow_by_id[flow.id] = flow
        self.mailbox: dict[str, list] = {}  # flow id -> [payload, ...]
        seq_ids = {f.id for f in model.sequence_flows}
        self._implicit: dict[str, str | None] = {}
        for v, (mid, i) in self._vx.items():
            fsm = self.machines[mid].fsm
            self._implicit[v] = None
            if fsm.kind in (MACHINE_CONTROL, MACHINE_JOIN) or i == 0:
                continue
            prev = fsm.vertices[i - 1]
            for flow in self.in_flows[v]:
                if flow.source == prev and flow.id in seq_ids:
                    self._implicit[v] = flow.id
                    break

        dag = build_dag(model)
        dom = dominators(dag)
        self.join_of_fork = {}
        for m in package.machines.by_kind(MACHINE_CONTROL):
            fork = m.vertices[0]
            down = dom.ipdom.get(fork)
            if down is not None and model.node(down).kind == JOIN:
                self.join_of_fork[fork] = down

        self.txns: dict[str, TxnContext] = {}
        for rid in package.plan.selection:
            pat = package.patterns[rid]
            self.txns[rid] = TxnContext(
                rid=rid,
                role=pat.two_pc["role"],
                parent=pat.two_pc["parent"],
                children=list(pat.two_pc["children"]),
                participants=list(pat.access_check),
            )

        self.clock = 0
        self._seq = 0
        self.queue: list = []
        self.steps: list[dict] = []
        self.phase_gas: dict[str, dict] = {
            rid: {"phase1": 0, "phase2": 0} for rid in self.txns
        }
        self.accepted = 0
        self._started = False
        if auto_start:
            self.start()

    # ------------------------------------------------------------------
    # clock and queue

    def _enqueue(self, kind: str, ts: int | None = None, **data) -> int:
        if ts is None:
            self.clock += 1
            ts = self.clock
        self._seq += 1
        heapq.heappush(self.queue, (ts, self._seq, {"kind": kind, **data}))
        return ts

    # ------------------------------------------------------------------
    # lifecycle

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        roots = [v for v in self._vx if not self.in_flows[v]]
        for v in sorted(roots, key=lambda x: self._vx[x]):
            self._fire(v, {})
        self._drain()

    def submit(self, item: ExternalInput | dict) -> dict:
        inp = item if isinstance(item, ExternalInput) else ExternalInput.from_dict(item)
        self._drain()  # settle internal events so enablement is current
        if inp.origin not in self._vx:
            raise UnknownOrigin(f"origin {inp.origin!r} is not an element of the model")
        actor = self.credentials.get(inp.actor, inp.actor if inp.actor in self.actor_ids else None)
        if actor is None:
            raise UnknownActor(f"credential {inp.actor!r} does not map to a model actor")
        self._check_access(actor, inp.origin)
        node = self.package.bpmn.node(inp.origin)
        if node.kind not in DRIVABLE or not self._enabled(inp.origin):
            raise NonConformant(
                f"{inp.origin!r} is not enabled; expected one of {self.expected_origins()}",
                expected=self.expected_origins(),
            )
        ts = self._enqueue("external", origin=inp.origin, actor=actor,
                           payload=dict(inp.payload), given_ts=inp.ts)
        self.accepted += 1
        if self.auto_run:
            self._drain()
        return {"accepted": True, "origin": inp.origin, "ts": ts}

    def _check_access(self, actor: str, origin: str) -> None:
        mid, _ = self._vx[origin]
        fsm = self.machines[mid].fsm
        owner = self.package.bpmn.node(origin).actor
        if actor != owner:
            raise AccessDenied(
                f"{actor!r} cannot drive {origin!r}; it belongs to {owner!r}"
            )
        if fsm.region:
            allowed = self.package.patterns[fsm.region].access_check
            if actor not in allowed:
                raise AccessDenied(
                    f"{actor!r} is not a participant of transaction {fsm.region}"
                )

    def run_to_quiescence(self) -> dict:
        self._drain()
        while self._resolve_stalls():
            self._drain()
        self.ledger.flush_all()
        return self.report()

    # ------------------------------------------------------------------
    # enablement

    def _needed_flows(self, v: str) -> list[str]:
        """In-flows that need an explicit token; the edge from the previous
        vertex of the same machine is covered by the machine state itself."""
        implicit = self._implicit[v]
        return [f.id for f in self.in_flows[v] if f.id != implicit]

    def _enabled(self, v: str) -> bool:
        mid, i = self._vx[v]
        rt = self.machines[mid]
        fsm = rt.fsm
        if fsm.kind == MACHINE_CONTROL:
            return False  # driven directly on token arrival, never externally
        if fsm.kind == MACHINE_JOIN:
            if rt.join_fired:
                return False
            if fsm.strict:
                return rt.join_arrived >= fsm.inflows
            return rt.join_expected is not None and rt.join_arrived >= rt.join_expected
        if rt.pos != i:
            return False
        if fsm.region:
            state = self.txns[fsm.region].state
            if state in (COMMITTED, ABORTED):
                return False
        return all(self.mailbox.get(fid, []) for fid in self._needed_flows(v))

    def expected_origins(self) -> list[str]:
        out = []
        for rt in self.machines.values():
            fsm = rt.fsm
            if fsm.kind in (MACHINE_CONTROL, MACHINE_JOIN) or rt.done:
                continue
            v = fsm.vertices[rt.pos]
            if self.package.bpmn.node(v).kind in DRIVABLE and self._enabled(v):
                out.append(v)
        return sorted(out)

    # ------------------------------------------------------------------
    # the event loop

    def _drain(self) -> None:
        progress = True
        while progress:
            progress = False
            while self.queue:
                _, _, ev = heapq.heappop(self.queue)
                self._handle(ev)
                progress = True
            if self._auto_sweep():
                progress = True
            if self._resolve_regions():
                progress = True

    def _handle(self, ev: dict) -> None:
        kind = ev["kind"]
        if kind == "external":
            self._fire(ev["origin"], ev["payload"])
        elif kind == "token":
            self.mailbox.setdefault(ev["flow"], []).append(ev["payload"])
            target = ev["target"]
            mid, _ = self._vx[target]
            fsm = self.machines[mid].fsm
            node_kind = self.package.bpmn.node(target).kind
            if fsm.kind == MACHINE_CONTROL:
                self._fire_control(target, ev["payload"])
            elif fsm.kind == MACHINE_JOIN:
                self.machines[mid].join_arrived += 1
                if self._enabled(target):
                    self._fire_join(target, ev["payload"])
            elif node_kind not in DRIVABLE and self._enabled(target):
                self._fire(target, ev["payload"])
        elif kind == "branch-count":
            mid, _ = self._vx[ev["join"]]
            rt = self.machines[mid]
            rt.join_expected = (rt.join_expected or 0) + ev["count"]
        elif kind == "2pc-prepare":
            self._on_prepare(ev["txn"], ev["child"])
        elif kind == "2pc-vote":
            self._on_vote(ev["txn"], ev["child"], ev["vote"])
        elif kind == "2pc-commit":
            self._on_commit_cmd(ev["txn"], ev["child"])
        elif kind == "2pc-ack":
            self._on_ack(ev["txn"], ev["child"])
        elif kind == "2pc-abort":
            self._abort_txn(ev["child"], f"aborted by coordinator {ev['txn']}")
        else:
            raise AssertionError(f"unhandled event kind {kind!r}")

    def _auto_sweep(self) -> bool:
        fired = False
        for rt in list(self.machines.values()):
            fsm = rt.fsm
            if fsm.kind in (MACHINE_CONTROL, MACHINE_JOIN) or rt.done:
                continue
            v = fsm.vertices[rt.pos]
            if self.package.bpmn.node(v).kind in DRIVABLE:
                continue
            if self._enabled(v):
                payload = self._consume_payloads(v)
                self._fire(v, payload)
                fired = True
        return fired

    def _consume_payloads(self, v: str) -> dict:
        merged: dict = {}
        for fid in self._needed_flows(v):
            box = self.mailbox.get(fid, [])
            if box:
                merged.update(box.pop(0))
        return merged

    # ------------------------------------------------------------------
    # firing

    def _fire(self, v: str, payload: dict) -> None:
        mid, i = self._vx[v]
        rt = self.machines[mid]
        fsm = rt.fsm
        node = self.package.bpmn.node(v)
        if node.kind == FORK:
            self._fire_control(v, payload)
            return
        if node.kind == JOIN:
            self._fire_join(v, payload)
            return

        ctx = None
        if fsm.region:
            ctx = self._ensure_begun(fsm.region)
        for fid in self._needed_flows(v):
            box = self.mailbox.get(fid, [])
            if box:
                tok = box.pop(0)
                merged = dict(tok)
                merged.update(payload)
                payload = merged

        method = self.package.method_of_machine(mid)
        chain_id = self.package.deployment[method]
        chain = self.ledger.chain(chain_id)
        self._meter_routing(method, chain_id, v, payload)

        rt.fire_counts[v] = rt.fire_counts.get(v, 0) + 1
        occurrence = rt.fire_counts[v]

        def body(frame):
            if self.faults.should_fail(v, occurrence):
                frame.fail(f"injected fault at {v}")
            self._run_effects(frame, v, ctx, payload, chain_id)

        receipt = chain.invoke(method, node.actor or "system", body)
        self._step("fire", vertex=v, machine=mid, method=method, chain=chain_id,
                   gas=receipt.gas_used, status=receipt.status, error=receipt.error)
        if receipt.status == "reverted":
            if ctx is not None:
                self._abort_txn(fsm.region, f"task failure at {v}: {receipt.error}")
            return

        rt.pos = i + 1
        self._route_out(v, mid, payload)

    def _fire_control(self, v: str, payload: dict) -> None:
        mid, _ = self._vx[v]
        fsm = self.machines[mid].fsm
        for fid in self._needed_flows(v):
            box = self.mailbox.get(fid, [])
            if box:
                box.pop(0)
        ctx = self._ensure_begun(fsm.region) if fsm.region else None
        method = self.package.method_of_machine(mid)
        chain_id = self.package.deployment[method]
        chain = self.ledger.chain(chain_id)

        try:
            targets = self._choose_branches(fsm, payload)
        except GuardEval as exc:
            self._step("guard-error", vertex=v, machine=mid, method=method,
                       chain=chain_id, gas=0, status="error", error=str(exc))
            return
        receipt = chain.invoke(method, self.package.bpmn.node(v).actor or "system",
                               lambda frame: None)
        self._step("fire", vertex=v, machine=mid, method=method, chain=chain_id,
                   gas=receipt.gas_used, status=receipt.status,
                   detail={"branches": [t for _, t in targets]})
        join = self.join_of_fork.get(v)
        ts = None
        if join is not None:
            ts = self._enqueue("branch-count", join=join, count=len(targets))
        for fid, target in targets:
            self._emit_token(v, fid, target, payload, ts=ts)

    def _choose_branches(self, fsm, payload: dict) -> list[tuple[str, str]]:
        chosen: list[tuple[str, str]] = []
        default = None
        for br in fsm.branches:
            flow = self.flow_by_id[br["flow"]]
            if br["default"]:
                default = (br["flow"], br["target"])
                continue
            guard = flow.guard
            if guard is None or guard.evaluate(payload):
                chosen.append((br["flow"], br["target"]))
                if fsm.flavor == "exclusive":
                    return chosen
        if fsm.flavor == "exclusive":
            if default is None:
                raise GuardEval("no branch satisfied and no default flow")
            return [default]
        return chosen

    def _fire_join(self, v: str, payload: dict) -> None:
        mid, _ = self._vx[v]
        rt = self.machines[mid]
        if not self._enabled(v):
            return
        rt.join_fired = True
        for fid in self._needed_flows(v):
            self.mailbox.get(fid, []).clear()
        fsm = rt.fsm
        if fsm.region:
            self._ensure_begun(fsm.region)
        method = self.package.method_of_machine(mid)
        chain_id = self.package.deployment[method]
        receipt = self.ledger.chain(chain_id).invoke(
            method, self.package.bpmn.node(v).actor or "system", lambda frame: None
        )
        self._step("fire", vertex=v, machine=mid, method=method, chain=chain_id,
                   gas=receipt.gas_used, status=receipt.status)
        self._route_out(v, mid, payload)

    def _route_out(self, v: str, mid: str, payload: dict) -> None:
        rt = self.machines[mid]
        for flow in self.out_flows[v]:
            w = flow.target
            wmid, wi = self._vx[w]
            if wmid == mid and rt.fsm.kind not in (MACHINE_CONTROL, MACHINE_JOIN) \
                    and wi == rt.pos and flow.id == self._implicit[w]:
                continue  # machine state advance covers this edge
            self._emit_token(v, flow.id, w, payload)

    def _emit_token(self, source: str, flow_id: str, target: str, payload: dict,
                    ts: int | None = None) -> None:
        src_mid, _ = self._vx[source]
        dst_mid, _ = self._vx[target]
        src_method = self.package.method_of_machine(src_mid)
        dst_method = self.package.method_of_machine(dst_mid)
        src_chain = self.package.deployment[src_method]
        dst_chain = self.package.deployment[dst_method]
        envelope = canonical_bytes({"flow": flow_id, "from": source, "to": target})
        if dst_mid != src_mid:
            # crossing machines costs an on-ledger event on the source chain
            chain = self.ledger.chain(src_chain)
            chain.invoke(src_method, "system",
                         lambda frame: frame.emit(f"token:{flow_id}", envelope))
        if dst_chain != src_chain:
            self.ledger.relay(src_chain, dst_chain, f"token:{flow_id}", len(envelope))
        self._enqueue("token", ts=ts, flow=flow_id, source=source, target=target,
                      payload=dict(payload))

    def _meter_routing(self, method: str, chain_id: str, v: str, payload: dict) -> None:
        """Cross-contract and cross-chain charges for driving this method."""
        mech = self.package.plan.mechanism
        if not self.package.method(method).region:
            return
        node = self.package.bpmn.node(v)
        if node.kind not in DRIVABLE:
            return
        if mech == SC_2M and self.package.contracts[method] != "c1":
            self.ledger.main.charge(f"xcontract:{method}",
                                    self.package.gas_schedule.per_event,
                                    detail={"vertex": v})
        elif mech == SC_2S and chain_id == SIDE:
            envelope = canonical_bytes({"origin": v, "payload": payload})
            shipped = self._shipped_bytes(v)
            self.ledger.relay(MAIN, SIDE, f"invoke:{v}", len(envelope) + shipped)

    def _shipped_bytes(self, v: str) -> int:
        """Bytes of argument data the caller must ship with this invocation:
        declared writes whose content cannot be derived from on-chain reads."""
        spec = self.package.bpmn.node(v).task_spec
        read_keys = set(spec.ledger_reads)
        return sum(size for tmpl, size in spec.ledger_writes if tmpl not in read_keys)

    # ------------------------------------------------------------------
    # effects

    def _expand(self, tmpl: str, rid: str = "") -> str:
        return tmpl.replace("{run}", self.run_id).replace("{txn}", rid)

    def _content(self, tag: str, size: int) -> bytes:
        seed = int.from_bytes(sha256(tag.encode("utf-8")).digest()[:8], "big")
        return random.Random(seed).randbytes(size)

    def _run_effects(self, frame, v: str, ctx: TxnContext | None, payload: dict,
                     chain_id: str) -> None:
        spec = self.package.bpmn.node(v).task_spec
        rid = ctx.rid if ctx is not None else ""
        redirect = self.package.patterns[rid].cache_redirect if ctx is not None else {}
        on_side = chain_id == SIDE
        for tmpl in spec.ledger_reads:
            real = self._expand(tmpl, rid)
            if ctx is not None:
                self._cached_read(frame, ctx, real,
                                  self._expand(redirect[tmpl], rid), on_side)
            else:
                frame.read(real)
        for tmpl, size in spec.ledger_writes:
            real = self._expand(tmpl, rid)
            value = self._content(f"{v}|{tmpl}|{size}", size)
            if ctx is not None:
                self._cached_write(frame, ctx, real, self._expand(redirect[tmpl], rid), value)
            else:
                frame.write(real, value)
        for target, name, size in spec.emits:
            body = self._content(f"{v}|{name}|{size}", size)
            if ctx is not None:
                ctx.events.append((name, body))
            else:
                frame.emit(name, body)
        for idx, size in enumerate(spec.offchain_puts):
            blob = self._content(f"{v}|blob{idx}|{size}", size)
            digest = self.offchain.put(blob)
            key = self._expand(f"blob/{v}/{idx}/{{run}}", rid)
            if ctx is not None:
                cache_key = self._anon_cache_key(ctx, key)
                self._cached_write(frame, ctx, key, cache_key, digest.encode("ascii"))
            else:
                frame.write(key, digest.encode("ascii"))

    def _anon_cache_key(self, ctx: TxnContext, real: str) -> str:
        seed = self.package.cache_namespace_seed
        return "cache/" + sha256_hex(f"{seed}|{ctx.rid}|{real}".encode("utf-8"))[:32]

    # ------------------------------------------------------------------
    # transaction patterns

    def _txn_chain(self, rid: str):
        chain_id = self.package.deployment[f"txn_{rid}"]
        return chain_id, self.ledger.chain(chain_id)

    def _txn_key(self, rid: str) -> bytes:
        material = f"{self.package.cache_namespace_seed}|{rid}|key".encode("utf-8")
        return sha256(material).digest()[:16]

    def _encrypt(self, rid: str, cache_key: str, plaintext: bytes) -> tuple[bytes, bytes]:
        key = self._txn_key(rid)
        nonce = sha256(cache_key.encode("utf-8")).digest()[:16]
        ct = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor().update(plaintext)
        tag = sha256(ct + key).digest()
        return ct, tag

    def _decrypt(self, rid: str, cache_key: str, ct: bytes, tag: bytes) -> bytes:
        key = self._txn_key(rid)
        if sha256(ct + key).digest() != tag:
            raise CryptoIntegrity(f"cache entry {cache_key} failed integrity verification")
        nonce = sha256(cache_key.encode("utf-8")).digest()[:16]
        return Cipher(algorithms.AES(key), modes.CTR(nonce)).decryptor().update(ct)

    def _ensure_begun(self, rid: str) -> TxnContext:
        ctx = self.txns[rid]
        if ctx.state == NOT_STARTED:
            if ctx.parent:
                self._ensure_begun(ctx.parent)
            chain_id, chain = self._txn_chain(rid)
            pat = self.package.patterns[rid]
            state_key = self._expand(pat.begin["state_key"], rid)

            def body(frame):
                frame.write(state_key, ACTIVE.encode("ascii"))

            receipt = chain.invoke(f"txn_{rid}", "system", body)
            ctx.cache_keys.append(state_key)
            ctx.transition(ACTIVE)
            self._step("txn-begin", txn=rid, chain=chain_id, gas=receipt.gas_used,
                       status=receipt.status)
        return ctx

    def _cached_write(self, frame, ctx: TxnContext, real: str, cache_key: str,
                      value: bytes) -> None:
        if ctx.state != ACTIVE:
            raise WrongState(f"txn {ctx.rid} is {ctx.state}; writes need Active")
        stored = value
        if self.package.crypto_cache:
            ct, tag = self._encrypt(ctx.rid, cache_key, value)
            stored = ct
            ctx.sealed_copies[cache_key] = (ct, tag)
            frame.charge_crypto(len(value))
        frame.write(cache_key, stored)
        if cache_key not in ctx.cache_keys:
            ctx.cache_keys.append(cache_key)
        ctx.write_values[real] = value
        ctx.log.append(("w", real, len(value)))

    def _cached_read(self, frame, ctx: TxnContext, real: str, cache_key: str,
                     on_side: bool = False) -> bytes:
        if ctx.state != ACTIVE:
            raise WrongState(f"txn {ctx.rid} is {ctx.state}; reads need Active")
        if real in ctx.write_values or real in ctx.read_digests:
            # already cached by an earlier access of this transaction
            stored = frame.read(cache_key)
            if self.package.crypto_cache:
                _, tag = ctx.sealed_copies[cache_key]
                value = self._decrypt(ctx.rid, cache_key, stored, tag)
                frame.charge_crypto(len(value))
            else:
                value = stored
        else:
            if on_side and not frame.has(real):
                # real keys live on the mainchain; the caller ships the
                # current value across and validation re-checks it later
                value = self.ledger.main.state.get(real)
                if value is None:
                    frame.fail(f"read of missing key {real!r}")
                sched = self.package.gas_schedule
                self.ledger.main.charge(
                    f"read:{real}", len(value) * sched.per_read_byte)
                self.ledger.relay(MAIN, SIDE, f"fetch:{real}", len(value))
            else:
                value = frame.read(real)
            ctx.read_digests[real] = sha256_hex(value)
            stored = value
            if self.package.crypto_cache:
                ct, tag = self._encrypt(ctx.rid, cache_key, value)
                stored = ct
                ctx.sealed_copies[cache_key] = (ct, tag)
                frame.charge_crypto(len(value))
            frame.write(cache_key, stored)
            if cache_key not in ctx.cache_keys:
                ctx.cache_keys.append(cache_key)
        ctx.log.append(("r", real, len(value)))
        return value

    def _region_machines(self, rid: str) -> list[_MachineRt]:
        return [rt for rt in self.machines.values() if rt.fsm.region == rid]

    def _subtree_done(self, rid: str) -> bool:
        ctx = self.txns[rid]
        own = all(rt.done for rt in self._region_machines(rid))
        return own and all(self._subtree_done(c) for c in ctx.children)

    def _resolve_regions(self) -> bool:
        progress = False
        for rid, ctx in self.txns.items():
            if ctx.state != ACTIVE or ctx.work_done:
                continue
            if not all(rt.done for rt in self._region_machines(rid)):
                continue
            if not all(self._subtree_done(c) for c in ctx.children):
                continue
            ctx.work_done = True
            progress = True
            if ctx.role == "plain":
                self._commit_txn(rid)
            elif ctx.role == "coordinator" and not ctx.parent:
                self._start_2pc(rid)
            # participants and intermediate coordinators wait for prepare
        return progress

    # ------------------------------------------------------------------
    # commit / abort

    def _commit_txn(self, rid: str) -> None:
        ctx = self.txns[rid]
        chain_id, chain = self._txn_chain(rid)
        pat = self.package.patterns[rid]
        write_digest = digest_of([[k, sha256_hex(v)] for k, v in sorted(ctx.write_values.items())])
        cert_payload = canonical_bytes({
            "txn": rid, "writes": write_digest, "participants": ctx.participants,
        })

        def certify_and_clean(frame):
            frame.emit(pat.end["certify_event"], cert_payload)
            if self.package.crypto_cache:
                for op, real, size in ctx.log:
                    frame.charge_crypto(size)
            for name, body in ctx.events:
                frame.emit(name, body)
            for key in ctx.cache_keys:
                frame.delete(key)

        def replay(frame):
            for op, real, size in ctx.log:
                if op == "w":
                    frame.write(real, ctx.write_values[real])
                else:
                    frame.read(real)

        if self.package.crypto_cache:
            self._verify_sealed(ctx)

        if chain_id == SIDE:
            r1 = chain.invoke(f"txn_{rid}", "system", certify_and_clean)
            shipped = sum(len(v) for v in ctx.write_values.values())
            note = canonical_bytes({"txn": rid, "writes": write_digest})
            self.ledger.relay(SIDE, MAIN, f"commit:{rid}", shipped + len(note))
            anchor = self._anchor_method(rid)
            r2 = self.ledger.main.invoke(anchor, "system", replay)
            gas = r1.gas_used + r2.gas_used
        else:
            def body(frame):
                certify_and_clean(frame)
                replay(frame)
            receipt = chain.invoke(f"txn_{rid}", "system", body)
            gas = receipt.gas_used

        ctx.transition(COMMITTED)
        self._step("txn-commit", txn=rid, chain=chain_id, gas=gas, status="committed",
                   detail={"writes": write_digest})

    def _verify_sealed(self, ctx: TxnContext) -> None:
        """Before replaying, check the on-ledger cache still matches the
        ciphertexts this transaction wrote."""
        _, chain = self._txn_chain(ctx.rid)
        for cache_key, (ct, tag) in ctx.sealed_copies.items():
            current = chain.state.get(cache_key, b"")
            if current != ct:
                raise CryptoIntegrity(
                    f"cache entry {cache_key} was altered on the ledger")
            self._decrypt(ctx.rid, cache_key, ct, tag)

    def _anchor_method(self, rid: str) -> str:
        """The mainchain method that applies a sidechain commit: the
        interpreter method of the transaction's owning actor."""
        owner = self.package.method(f"txn_{rid}").owner
        for m in self.package.methods:
            if not m.region and m.actor == owner:
                return m.name
        raise AssertionError(f"no mainchain anchor for txn {rid}")

    def _abort_txn(self, rid: str, reason: str) -> None:
        ctx = self.txns[rid]
        if ctx.state in (COMMITTED, ABORTED, NOT_STARTED):
            if ctx.state == NOT_STARTED:
                ctx.state = ABORTED
            return
        chain_id, chain = self._txn_chain(rid)

        def cleanup(frame):
            for key in ctx.cache_keys:
                frame.delete(key)

        receipt = chain.invoke(f"txn_{rid}", "system", cleanup)
        ctx.write_values.clear()
        ctx.events.clear()
        ctx.transition(ABORTED)
        self._step("txn-abort", txn=rid, chain=chain_id, gas=receipt.gas_used,
                   status="aborted", error=reason)
        for child in ctx.children:
            self._abort_txn(child, f"parent {rid} aborted")

    # ------------------------------------------------------------------
    # two-phase commit

    def _2pc_event(self, rid: str, phase: str, child: str, bucket: str) -> None:
        # fixed-width frame: participants are addressed by slot so the frame
        # size does not depend on how long the region names happen to be
        ctx = self.txns[rid]
        slot = f"{ctx.children.index(child):04d}"
        round_id = sha256_hex(f"{self.run_id}|{rid}".encode("utf-8"))[:8]
        payload = canonical_bytes({"phase": phase, "round": round_id, "slot": slot})
        _, chain = self._txn_chain(rid)
        receipt = chain.invoke(
            f"txn_{rid}", "system",
            lambda frame: frame.emit(f"2pc:{phase}:{child}", payload),
        )
        self.phase_gas[rid][bucket] += receipt.gas_used

    def _collect(self, rid: str, bucket: str) -> None:
        _, chain = self._txn_chain(rid)
        receipt = chain.invoke(f"txn_{rid}", "system", lambda frame: None)
        self.phase_gas[rid][bucket] += receipt.gas_used

    def _start_2pc(self, rid: str) -> None:
        ctx = self.txns[rid]
        ctx.transition(PREPARING)
        ctx.votes = {c: "" for c in ctx.children}
        ctx.vote_deadline = self.clock + self.package.patterns[rid].two_pc["vote_timeout"]
        self._step("2pc-prepare", txn=rid, children=list(ctx.children))
        for child in ctx.children:
            self._2pc_event(rid, "prepare", child, "phase1")
            self._enqueue("2pc-prepare", txn=rid, child=child)

    def _on_prepare(self, rid: str, child: str) -> None:
        ctx = self.txns[child]
        if ctx.role == "coordinator":
            # intermediate coordinator: secure its own subtree before voting
            ctx.voted_up = False
            self._start_2pc(child)
            return
        if child in self.faults.crash_pre_vote:
            self._step("2pc-crash", txn=child, status="crashed",
                       error="participant crashed before voting")
            return
        vote = "no" if child in self.faults.no_vote else self._validate(child)
        self._vote_event(child, rid, vote)
        if vote == "yes":
            ctx.transition(READY)
        else:
            self._abort_txn(child, "validation voted no")
        self._enqueue("2pc-vote", txn=rid, child=child, vote=vote)

    def _vote_event(self, child: str, parent: str, vote: str) -> None:
        _, chain = self._txn_chain(child)
        payload = canonical_bytes({"phase": "vote", "txn": parent, "child": child,
                                   "vote": vote})
        chain.invoke(f"txn_{child}", "system",
                     lambda frame: frame.emit(f"2pc:vote:{child}", payload))

    def _validate(self, rid: str) -> str:
        """Optimistic validation: every recorded read must still match the
        committed mainchain state, where real keys live."""
        ctx = self.txns[rid]
        if ctx.state != ACTIVE:
            return "no"
        _, chain = self._txn_chain(rid)
        chain.invoke(f"txn_{rid}", "system", lambda frame: None)
        ok = True
        reread = 0
        for real, digest in sorted(ctx.read_digests.items()):
            current = self.ledger.main.state.get(real, b"")
            reread += len(current)
            if sha256_hex(current) != digest:
                ok = False
        if reread:
            chain.charge(f"validate:{rid}",
                         reread * self.package.gas_schedule.per_read_byte)
        return "yes" if ok else "no"

    def _on_vote(self, rid: str, child: str, vote: str) -> None:
        ctx = self.txns[rid]
        if ctx.state in (ABORTED, COMMITTED):
            return  # round already resolved; late vote
        self._collect(rid, "phase1")
        ctx.votes[child] = vote
        if any(v == "no" for v in ctx.votes.values()):
            self._fail_round(rid, f"child {child} voted no" if vote == "no" else "abort")
            return
        if all(v == "yes" for v in ctx.votes.values()):
            self._enter_phase2(rid)

    def _fail_round(self, rid: str, reason: str) -> None:
        ctx = self.txns[rid]
        self._step("2pc-abort", txn=rid, status="aborted", error=reason)
        for child in ctx.children:
            if self.txns[child].state not in (ABORTED, COMMITTED):
                self._2pc_event(rid, "abort", child, "phase2")
                self._enqueue("2pc-abort", txn=rid, child=child)
        self._abort_txn(rid, reason)
        if ctx.parent and not ctx.voted_up:
            ctx.voted_up = True
            self._vote_event(rid, ctx.parent, "no")
            self._enqueue("2pc-vote", txn=ctx.parent, child=rid, vote="no")

    def _enter_phase2(self, rid: str) -> None:
        ctx = self.txns[rid]
        if ctx.parent and not ctx.voted_up:
            # intermediate coordinator: subtree is ready, vote yes upward
            ctx.transition(READY)
            ctx.voted_up = True
            self._vote_event(rid, ctx.parent, "yes")
            self._enqueue("2pc-vote", txn=ctx.parent, child=rid, vote="yes")
            return
        if rid in self.faults.crash_between_phases:
            ctx.crashed = True
            self._step("2pc-crash", txn=rid, status="crashed",
                       error="coordinator crashed between phases")
            return
        self._do_phase2(rid)

    def _do_phase2(self, rid: str) -> None:
        ctx = self.txns[rid]
        self._step("2pc-commit", txn=rid, children=list(ctx.children))
        self._commit_txn(rid)  # parent commits first
        for child in ctx.children:
            self._2pc_event(rid, "commit", child, "phase2")
            self._enqueue("2pc-commit", txn=rid, child=child)

    def _on_commit_cmd(self, rid: str, child: str) -> None:
        ctx = self.txns[child]
        if ctx.role == "coordinator":
            self._do_phase2(child)
        else:
            self._commit_txn(child)
        if not self.no_ack:
            self._ack_event(child, rid)
            self._enqueue("2pc-ack", txn=rid, child=child)

    def _ack_event(self, child: str, parent: str) -> None:
        _, chain = self._txn_chain(child)
        payload = canonical_bytes({"phase": "ack", "txn": parent, "child": child})
        chain.invoke(f"txn_{child}", "system",
                     lambda frame: frame.emit(f"2pc:ack:{child}", payload))

    def _on_ack(self, rid: str, child: str) -> None:
        self._collect(rid, "phase2")

    def _resolve_stalls(self) -> bool:
        """Vote timeouts, crash recovery, and dead subtrees; runs only at
        quiescence, so a pending vote here is a vote that will never come."""
        progress = False
        for rid, ctx in self.txns.items():
            if ctx.state == ACTIVE:
                dead = [c for c in ctx.children if self.txns[c].state == ABORTED]
                if dead:
                    self._step("txn-stall", txn=rid, status="aborted",
                               error=f"children {dead} aborted before coordination")
                    self._abort_txn(rid, f"children {dead} aborted")
                    progress = True
                    continue
            if ctx.state == PREPARING and not ctx.crashed:
                missing = [c for c, v in ctx.votes.items() if v == ""]
                if missing and all(
                    self.txns[c].state in (ACTIVE, ABORTED) for c in missing
                ):
                    if ctx.vote_deadline is not None and self.clock < ctx.vote_deadline:
                        self.clock = ctx.vote_deadline
                    self._step("vote-timeout", txn=rid, status="timeout",
                               error=f"no vote from {missing}",
                               detail={"code": "VoteTimeout", "children": missing})
                    self._fail_round(rid, f"vote timeout waiting for {missing}")
                    progress = True
            if ctx.crashed and ctx.state == PREPARING:
                self._step("2pc-recover", txn=rid, status="aborted",
                           error="recovery after coordinator crash: abort")
                ctx.crashed = False
                self._fail_round(rid, "coordinator restarted; in-doubt round aborted")
                progress = True
        return progress

    # ------------------------------------------------------------------
    # reporting

    def _step(self, kind: str, **data) -> None:
        self.steps.append({"i": len(self.steps), "kind": kind, **data})

    def gas_by_method(self) -> dict:
        out: dict[str, int] = {}
        for chain in self.ledger.iter_chains():
            for r in chain.receipts:
                out[r.method] = out.get(r.method, 0) + r.gas_used
        return dict(sorted(out.items()))

    def report(self) -> dict:
        price = self.package.gas_schedule.gas_price
        total = self.ledger.total_gas()
        return {
            "schema": RUN_SCHEMA,
            "run": self.run_id,
            "model": self.package.name,
            "mechanism": self.package.plan.mechanism,
            "accepted": self.accepted,
            "steps": list(self.steps),
            "gas": {
                "total": total,
                "price": price,
                "cost": total * price,
                "by_chain": {c.id: c.total_gas for c in self.ledger.iter_chains()},
                "by_method": self.gas_by_method(),
            },
            "blocks": self.ledger.block_hashes(),
            "final_states": {
                mid: rt.state_id() for mid, rt in sorted(self.machines.items())
            },
            "txns": {rid: ctx.state for rid, ctx in sorted(self.txns.items())},
            "phase_gas": {rid: dict(g) for rid, g in sorted(self.phase_gas.items())},
            "expected_next": self.expected_origins(),
            "quiescent": not self.queue,
        }

    # convenience for tests: the committed world state of a chain
    def state_snapshot(self, chain_id: str = MAIN) -> dict:
        return dict(self.ledger.chain(chain_id).state)


def replay_trace(package: ContractPackage, trace: list[dict], run_id: str = "r1",
                 faults: FaultPlan | None = None) -> dict:
    """Run a full trace; raises on the first non-conformant input."""
    monitor = Monitor(package, run_id=run_id, faults=faults)
    for item in trace:
        monitor.submit(item)
    return monitor.run_to_quiescence()


def classify_trace(package: ContractPackage, trace: list[dict], run_id: str = "r1") -> dict:
    """Trace conformance verdict: valid, or invalid with the failing step."""
    monitor = Monitor(package, run_id=run_id)
    for idx, item in enumerate(trace):
        try:
            monitor.submit(item)
        except (NonConformant, UnknownOrigin, UnknownActor, AccessDenied) as exc:
            return {
                "valid": False,
                "failed_at": idx,
                "origin": item.get("origin", ""),
                "error": exc.to_dict(),
            }
    report = monitor.run_to_quiescence()
    return {"valid": True, "steps": len(trace), "report": report}


__all__ = [
    "RUN_SCHEMA", "DRIVABLE",
    "NOT_STARTED", "ACTIVE", "PREPARING", "READY", "COMMITTED", "ABORTED",
    "ExternalInput", "FaultPlan", "TxnContext", "Monitor",
    "replay_trace", "classify_trace",
]
