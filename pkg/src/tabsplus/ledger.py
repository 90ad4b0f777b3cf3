"""Deterministic simulated blockchains with gas metering.

A :class:`Chain` holds a key->bytes world state, an append-only block list,
and an event log. Method bodies run inside an invocation :class:`Frame` that
stages reads, writes, and events; on success the frame commits atomically,
on failure nothing reaches the state. Gas is metered per the
:class:`GasSchedule` and every committed write becomes a block record, so
identical invocation sequences produce identical block hashes.

Blocks cap the total bytes written into them. Write records are never split:
a record that does not fit the open block seals it and starts the next one,
and a single record larger than the cap is rejected outright.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator

from .canon import canonical_json, digest_of, sha256_hex
from .errors import (
    ChainIntegrity,
    EmptyBlock,
    MethodUnknown,
    NoSidechain,
    OutOfBlockSpace,
)

CHAIN_SCHEMA = "tabsplus-chain/1"
MAIN = "main"
SIDE = "side"

GENESIS = "0" * 64


@dataclass(frozen=True)
class GasSchedule:
    """Per-unit gas prices. Defaults are calibrated for the cost benchmarks,
    not copied from any production chain."""

    base_invoke: int = 600
    per_read_byte: int = 8
    per_write_byte: int = 16
    per_event: int = 375
    per_event_byte: int = 1
    per_crypto_byte: int = 13
    per_relay_message: int = 2000
    gas_price: int = 20
    block_size_limit: int = 1_920_000

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"gas schedule field {f.name} must be a non-negative int")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "GasSchedule":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown gas schedule fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EventRecord:
    name: str
    size: int
    digest: str

    def to_dict(self) -> dict:
        return {"name": self.name, "size": self.size, "digest": self.digest}


@dataclass
class Receipt:
    method: str
    caller: str
    status: str  # committed | reverted
    gas_used: int
    reads: list = field(default_factory=list)  # (key, size)
    writes: list = field(default_factory=list)  # (key, size, digest)
    events: list = field(default_factory=list)  # EventRecord
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "caller": self.caller,
            "status": self.status,
            "gas_used": self.gas_used,
            "reads": [[k, n] for k, n in self.reads],
            "writes": [[k, n, d] for k, n, d in self.writes],
            "events": [e.to_dict() for e in self.events],
            "error": self.error,
        }


class _Abort(Exception):
    """Internal: unwinds a frame without touching chain state."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Frame:
    """One native invocation: reads see staged writes, writes stay staged
    until the frame commits."""

    def __init__(self, chain: "Chain", method: str, caller: str):
        self.chain = chain
        self.method = method
        self.caller = caller
        self.gas = chain.schedule.base_invoke
        self._staged: dict[str, bytes] = {}
        self._reads: list[tuple[str, int]] = []
        self._writes: list[tuple[str, bytes]] = []
        self._events: list[tuple[str, bytes]] = []

    def read(self, key: str) -> bytes:
        if key in self._staged:
            value = self._staged[key]
        elif key in self.chain.state:
            value = self.chain.state[key]
        else:
            raise _Abort(f"read of missing key {key!r}")
        self.gas += len(value) * self.chain.schedule.per_read_byte
        self._reads.append((key, len(value)))
        return value

    def has(self, key: str) -> bool:
        return key in self._staged or key in self.chain.state

    def write(self, key: str, value: bytes) -> None:
        if len(value) > self.chain.schedule.block_size_limit:
            raise OutOfBlockSpace(
                f"single write of {len(value)} bytes exceeds the "
                f"{self.chain.schedule.block_size_limit}-byte block limit",
                detail={"key": key, "size": len(value)},
            )
        self.gas += len(value) * self.chain.schedule.per_write_byte
        self._staged[key] = value
        self._writes.append((key, value))

    def delete(self, key: str) -> None:
        # modeled as a zero-byte write; the record keeps the key auditable
        self._staged[key] = b""
        self._writes.append((key, b""))

    def emit(self, name: str, payload: bytes) -> None:
        self.gas += self.chain.schedule.per_event
        self.gas += len(payload) * self.chain.schedule.per_event_byte
        self._events.append((name, payload))

    def charge_crypto(self, nbytes: int) -> None:
        self.gas += nbytes * self.chain.schedule.per_crypto_byte

    def fail(self, reason: str) -> None:
        raise _Abort(reason)


@dataclass
class Block:
    index: int
    parent: str
    records: list
    hash: str = ""

    def body(self) -> dict:
        return {"index": self.index, "parent": self.parent, "records": self.records}

    def seal(self) -> str:
        self.hash = digest_of(self.body())
        return self.hash

    def to_dict(self) -> dict:
        return {**self.body(), "hash": self.hash}


class Chain:
    def __init__(self, chain_id: str = MAIN, schedule: GasSchedule | None = None):
        self.id = chain_id
        self.schedule = schedule or GasSchedule()
        self.state: dict[str, bytes] = {}
        self.blocks: list[Block] = []
        self.events: list[EventRecord] = []
        self.receipts: list[Receipt] = []
        self.deployed: set[str] = set()
        self._open: list = []  # records for the next block
        self._open_bytes = 0

    # -- deployment --------------------------------------------------------

    def deploy(self, methods: list[str]) -> None:
        self.deployed.update(methods)

    # -- invocation --------------------------------------------------------

    def invoke(self, method: str, caller: str, body: Callable[[Frame], None]) -> Receipt:
        if method not in self.deployed:
            raise MethodUnknown(f"method {method!r} is not deployed on chain {self.id!r}")
        frame = Frame(self, method, caller)
        try:
            body(frame)
        except _Abort as exc:
            receipt = Receipt(method, caller, "reverted", frame.gas, error=exc.reason)
            self.receipts.append(receipt)
            return receipt
        return self._commit(frame)

    def _commit(self, frame: Frame) -> Receipt:
        writes = []
        for key, value in frame._writes:
            record = (key, len(value), sha256_hex(value))
            self._pack_write(record)
            writes.append(record)
        for key, value in frame._writes:
            if value == b"":
                self.state.pop(key, None)
            else:
                self.state[key] = value
        events = [EventRecord(n, len(p), sha256_hex(p)) for n, p in frame._events]
        self.events.extend(events)
        receipt = Receipt(
            frame.method, frame.caller, "committed", frame.gas,
            reads=list(frame._reads), writes=writes, events=events,
        )
        self.receipts.append(receipt)
        self._open.append({
            "kind": "invoke",
            "method": frame.method,
            "caller": frame.caller,
            "gas": frame.gas,
            "events": [e.to_dict() for e in events],
        })
        return receipt

    def _pack_write(self, record: tuple[str, int, str]) -> None:
        key, size, digest = record
        if self._open_bytes + size > self.schedule.block_size_limit and self._open:
            self._seal()
        self._open.append({"kind": "write", "key": key, "size": size, "digest": digest})
        self._open_bytes += size

    def charge(self, label: str, gas: int, detail: dict | None = None) -> None:
        """Meter gas for work outside a method frame (relays, protocol overhead)."""
        receipt = Receipt(label, "system", "committed", gas)
        self.receipts.append(receipt)
        self._open.append({"kind": "system", "label": label, "gas": gas, **(detail or {})})

    # -- blocks ------------------------------------------------------------

    def seal_block(self) -> str:
        if not self._open:
            raise EmptyBlock(f"no records pending on chain {self.id!r}")
        return self._seal()

    def flush(self) -> str | None:
        """Seal the open block if it has anything in it."""
        return self._seal() if self._open else None

    def _seal(self) -> str:
        parent = self.blocks[-1].hash if self.blocks else GENESIS
        block = Block(len(self.blocks), parent, self._open)
        block.seal()
        self.blocks.append(block)
        self._open = []
        self._open_bytes = 0
        return block.hash

    # -- accounting --------------------------------------------------------

    @property
    def total_gas(self) -> int:
        return sum(r.gas_used for r in self.receipts)

    @property
    def total_cost(self) -> int:
        return self.total_gas * self.schedule.gas_price

    def block_hashes(self) -> list[str]:
        return [b.hash for b in self.blocks]

    # -- persistence -------------------------------------------------------

    def dump(self, path: str | Path) -> None:
        lines = [canonical_json({
            "schema": CHAIN_SCHEMA,
            "chain": self.id,
            "schedule": self.schedule.to_dict(),
        })]
        lines += [canonical_json(b.to_dict()) for b in self.blocks]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Chain":
        """Restore blocks from a dump, re-verifying the hash chain.

        State is not persisted; it is irrelevant for integrity checking and
        the runtime never resumes from a dump.
        """
        raw = Path(path).read_text(encoding="utf-8").strip()
        if not raw:
            raise ChainIntegrity(f"{path}: empty chain file")
        lines = raw.split("\n")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ChainIntegrity(f"{path}: unreadable header: {exc}") from exc
        if header.get("schema") != CHAIN_SCHEMA:
            raise ChainIntegrity(f"{path}: schema {header.get('schema')!r} != {CHAIN_SCHEMA!r}")
        chain = cls(header["chain"], GasSchedule.from_dict(header["schedule"]))
        parent = GENESIS
        for i, line in enumerate(lines[1:]):
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ChainIntegrity(f"{path}: block {i} unreadable: {exc}") from exc
            block = Block(data.get("index", -1), data.get("parent", ""), data.get("records", []))
            if block.index != i:
                raise ChainIntegrity(f"{path}: block {i} has index {block.index}")
            if block.parent != parent:
                raise ChainIntegrity(f"{path}: block {i} breaks the parent chain")
            if block.seal() != data.get("hash"):
                raise ChainIntegrity(
                    f"{path}: block {i} content does not match its recorded hash"
                )
            chain.blocks.append(block)
            parent = block.hash
        return chain


class Ledger:
    """The chain environment: a mainchain plus an optional sidechain and the
    relay between them."""

    def __init__(self, schedule: GasSchedule | None = None, with_side: bool = False):
        self.schedule = schedule or GasSchedule()
        self.chains: dict[str, Chain] = {MAIN: Chain(MAIN, self.schedule)}
        if with_side:
            self.chains[SIDE] = Chain(SIDE, self.schedule)
        self._relay_seq = 0
        self.relays: list[dict] = []

    @property
    def main(self) -> Chain:
        return self.chains[MAIN]

    @property
    def side(self) -> Chain:
        try:
            return self.chains[SIDE]
        except KeyError:
            raise NoSidechain("no sidechain configured for this deployment") from None

    def chain(self, chain_id: str) -> Chain:
        if chain_id == SIDE and SIDE not in self.chains:
            raise NoSidechain("no sidechain configured for this deployment")
        return self.chains[chain_id]

    def relay(self, src: str, dst: str, kind: str, size: int) -> dict:
        """Ship a message between chains; the sender pays relay gas."""
        source = self.chain(src)
        self.chain(dst)  # existence check
        gas = self.schedule.per_relay_message + size * self.schedule.per_event_byte
        self._relay_seq += 1
        record = {
            "seq": self._relay_seq, "src": src, "dst": dst,
            "kind": kind, "size": size, "gas": gas,
        }
        source.charge(f"relay:{kind}", gas, detail={"dst": dst, "size": size})
        self.relays.append(record)
        return record

    def total_gas(self) -> int:
        return sum(c.total_gas for c in self.chains.values())

    def flush_all(self) -> dict[str, str | None]:
        return {cid: c.flush() for cid, c in self.chains.items()}

    def block_hashes(self) -> dict[str, list[str]]:
        return {cid: c.block_hashes() for cid, c in self.chains.items()}

    def iter_chains(self) -> Iterator[Chain]:
        return iter(self.chains.values())


__all__ = [
    "CHAIN_SCHEMA", "MAIN", "SIDE", "GasSchedule", "EventRecord", "Receipt",
    "Frame", "Block", "Chain", "Ledger",
]
