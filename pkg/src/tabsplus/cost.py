"""Cost benchmarking: how much gas each coordination mechanism burns.

Two synthetic workloads. The first is a two-task pipeline (write an object,
then read and rewrite it) whose payload size is swept; it isolates the
per-byte overhead of running the work through a transactional cache, with
and without a sidechain and with and without an encrypted cache. The second
is a chain of N parallel blocks coordinated as one nested transaction; it
measures how the two commit phases grow with the participant count.

Everything here is a real run of the interpreter over the simulated ledger;
the report numbers are measured, not modeled.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field, replace

from .codegen import compile_package
from .errors import Uncalibratable
from .graph import build_dag
from .ledger import GasSchedule
from .model import (
    END,
    FORK,
    JOIN,
    START,
    TASK,
    Actor,
    BpmnModel,
    Flow,
    FlowNode,
    TaskSpec,
    normalize,
)
from .plan import NO_XA, SC_2M, SC_2S, SC_ALL
from .runtime import Monitor
from .sese import enumerate_candidates

COST_SCHEMA = "tabsplus-cost/1"

MECHANISMS = ("no-xa", "sc-all", "sc-2m", "sc-2s", "sc-2s-crypto")

KB = 1024
DEFAULT_SIZES = (75 * KB, 512 * KB, 1024 * KB, 1875 * KB)
RATIO_SIZE = 512 * KB

DEFAULT_TARGETS = {
    "sc-all/no-xa": 2.0,
    "sc-2s/no-xa": 2.05,
    "sc-2s-crypto/sc-2s": 1.95,
}
CALIBRATION_TOLERANCE = 0.02


def benchmark_model(size: int) -> BpmnModel:
    """Write an object of `size` bytes, then read it back and rewrite it."""
    model = BpmnModel(
        "cost-pipeline",
        actors=[Actor("site", "Site", "cred-site")],
        nodes=[
            FlowNode("start", START, "site", "Start"),
            FlowNode("m1", TASK, "site", "Produce object",
                     task_spec=TaskSpec(ledger_writes=(("obj", size),))),
            FlowNode("m2", TASK, "site", "Inspect and update",
                     task_spec=TaskSpec(ledger_reads=("obj",),
                                        ledger_writes=(("obj", size),))),
            FlowNode("end", END, "site", "End"),
        ],
        sequence_flows=[
            Flow("f1", "start", "m1"),
            Flow("f2", "m1", "m2"),
            Flow("f3", "m2", "end"),
        ],
    )
    return normalize(model)


def twopc_model(n: int) -> BpmnModel:
    """A chain of n parallel two-task blocks, one transaction candidate each,
    under a single enclosing candidate that coordinates them."""
    nodes = [FlowNode("start", START, "site", "Start")]
    flows = []
    prev = "start"
    for i in range(1, n + 1):
        fork, left, right, join = f"fork{i}", f"pa{i}", f"pb{i}", f"join{i}"
        nodes += [
            FlowNode(fork, FORK, "site", f"Split {i}", flavor="inclusive"),
            FlowNode(left, TASK, "site", f"Left {i}",
                     task_spec=TaskSpec(ledger_writes=((f"l{i}", 64),))),
            FlowNode(right, TASK, "site", f"Right {i}",
                     task_spec=TaskSpec(ledger_writes=((f"r{i}", 64),))),
            FlowNode(join, JOIN, "site", f"Merge {i}"),
        ]
        flows += [
            Flow(f"e{i}a", prev, fork),
            Flow(f"e{i}b", fork, left),
            Flow(f"e{i}c", fork, right),
            Flow(f"e{i}d", left, join),
            Flow(f"e{i}e", right, join),
        ]
        prev = join
    nodes.append(FlowNode("end", END, "site", "End"))
    flows.append(Flow("efin", prev, "end"))
    model = BpmnModel(
        f"cost-handoff-{n}",
        actors=[Actor("site", "Site", "cred-site")],
        nodes=nodes,
        sequence_flows=flows,
    )
    return normalize(model)


def _mechanism_args(mechanism: str) -> tuple[str, tuple, bool]:
    if mechanism == "no-xa":
        return NO_XA, (), False
    if mechanism == "sc-all":
        return SC_ALL, ("S1",), False
    if mechanism == "sc-2m":
        return SC_2M, ("S1",), False
    if mechanism == "sc-2s":
        return SC_2S, ("S1",), False
    if mechanism == "sc-2s-crypto":
        return SC_2S, ("S1",), True
    raise ValueError(f"unknown mechanism {mechanism!r}")


def measure(mechanism: str, size: int, schedule: GasSchedule | None = None) -> int:
    """Total gas for one pipeline run under the given mechanism."""
    mech, selection, crypto = _mechanism_args(mechanism)
    model = benchmark_model(size)
    package = compile_package(model, selection=selection, mechanism=mech,
                              crypto=crypto, schedule=schedule)
    monitor = Monitor(package)
    monitor.submit({"actor": "cred-site", "origin": "m1"})
    monitor.submit({"actor": "cred-site", "origin": "m2"})
    report = monitor.run_to_quiescence()
    if report["expected_next"] or any(
        s not in ("Committed",) for s in report["txns"].values()
    ):
        raise AssertionError(f"benchmark run did not complete: {report['txns']}")
    return report["gas"]["total"]


def measure_2pc(n: int, schedule: GasSchedule | None = None) -> dict:
    """Phase gas of one coordination round with n child transactions."""
    model = twopc_model(n)
    forest = enumerate_candidates(build_dag(model))
    children = [r.id for r in forest.regions if len(r.members) == 4]
    body = {v for r in forest.regions if len(r.members) == 4 for v in r.members}
    parent = next(
        r.id for r in forest.regions
        if r.members == body and r.id not in children
    )
    package = compile_package(model, selection=(parent, *children),
                              mechanism=SC_ALL, schedule=schedule)
    monitor = Monitor(package)
    for i in range(1, n + 1):
        monitor.submit({"actor": "cred-site", "origin": f"pa{i}"})
        monitor.submit({"actor": "cred-site", "origin": f"pb{i}"})
    report = monitor.run_to_quiescence()
    for rid, state in report["txns"].items():
        if state != "Committed":
            raise AssertionError(f"coordination round failed: {rid} is {state}")
    phases = report["phase_gas"][parent]
    return {"n": n, "phase1": phases["phase1"], "phase2": phases["phase2"]}


def _fit(xs: list, ys: list) -> dict:
    slope, intercept = statistics.linear_regression(xs, ys)
    r2 = statistics.correlation(xs, ys) ** 2
    return {"slope": slope, "intercept": intercept, "r2": r2}


@dataclass
class CostReport:
    schedule: GasSchedule
    sizes: tuple
    rows: list = field(default_factory=list)  # {mechanism, bytes, gas, currency}
    twopc_rows: list = field(default_factory=list)  # {n, phase1, phase2}

    def gas(self, mechanism: str, size: int) -> int:
        for row in self.rows:
            if row["mechanism"] == mechanism and row["bytes"] == size:
                return row["gas"]
        raise KeyError((mechanism, size))

    def ratios(self) -> dict:
        out: dict = {}
        for name in DEFAULT_TARGETS:
            num, den = name.split("/")
            out[name] = {
                str(size): self.gas(num, size) / self.gas(den, size)
                for size in self.sizes
            }
        return out

    def fits(self) -> dict:
        if len(self.sizes) < 2:
            return {}
        out = {}
        xs = [float(s) for s in self.sizes]
        for mechanism in MECHANISMS:
            ys = [float(self.gas(mechanism, s)) for s in self.sizes]
            out[mechanism] = _fit(xs, ys)
        return out

    def twopc_fits(self) -> dict:
        if len(self.twopc_rows) < 2:
            return {}
        ns = [float(r["n"]) for r in self.twopc_rows]
        out = {
            phase: _fit(ns, [float(r[phase]) for r in self.twopc_rows])
            for phase in ("phase1", "phase2")
        }
        gaps = [
            abs(r["phase2"] - r["phase1"]) / r["phase1"] for r in self.twopc_rows
        ]
        out["phase_gap"] = max(gaps)
        return out

    def to_dict(self) -> dict:
        return {
            "schema": COST_SCHEMA,
            "schedule": self.schedule.to_dict(),
            "sizes": list(self.sizes),
            "rows": [dict(r) for r in self.rows],
            "ratios": self.ratios(),
            "fits": self.fits(),
            "twopc": {
                "rows": [dict(r) for r in self.twopc_rows],
                "fits": self.twopc_fits(),
            },
        }

    def to_text(self) -> str:
        lines = []
        header = f"{'mechanism':<14} {'bytes':>10} {'gas':>14} {'currency':>16}"
        lines.append(header)
        lines.append("-" * len(header))
        for row in self.rows:
            lines.append(
                f"{row['mechanism']:<14} {row['bytes']:>10} "
                f"{row['gas']:>14} {row['currency']:>16}"
            )
        lines.append("")
        lines.append("ratios")
        for name, per_size in self.ratios().items():
            parts = "  ".join(f"{s}B={v:.4f}" for s, v in per_size.items())
            lines.append(f"  {name:<18} {parts}")
        if self.twopc_rows:
            lines.append("")
            lines.append(f"{'children':>8} {'phase1':>12} {'phase2':>12}")
            for row in self.twopc_rows:
                lines.append(
                    f"{row['n']:>8} {row['phase1']:>12} {row['phase2']:>12}"
                )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mechanism", "bytes", "gas", "currency"])
        for row in self.rows:
            writer.writerow([row["mechanism"], row["bytes"], row["gas"],
                             row["currency"]])
        if self.twopc_rows:
            writer.writerow([])
            writer.writerow(["n", "phase1", "phase2"])
            for row in self.twopc_rows:
                writer.writerow([row["n"], row["phase1"], row["phase2"]])
        return buf.getvalue()


def run_benchmark(
    sizes: tuple = DEFAULT_SIZES,
    schedule: GasSchedule | None = None,
    twopc_ns: tuple = (2, 3, 4, 5, 6),
) -> CostReport:
    sched = schedule or GasSchedule()
    report = CostReport(schedule=sched, sizes=tuple(sizes))
    for mechanism in MECHANISMS:
        for size in sizes:
            gas = measure(mechanism, size, sched)
            report.rows.append({
                "mechanism": mechanism,
                "bytes": size,
                "gas": gas,
                "currency": gas * sched.gas_price,
            })
    for n in twopc_ns:
        report.twopc_rows.append(measure_2pc(n, sched))
    return report


def _ratios_at(schedule: GasSchedule, size: int) -> dict:
    gas = {m: measure(m, size, schedule) for m in MECHANISMS}
    return {
        name: gas[name.split("/")[0]] / gas[name.split("/")[1]]
        for name in DEFAULT_TARGETS
    }


def calibrate(
    targets: dict | None = None,
    schedule: GasSchedule | None = None,
    size: int = RATIO_SIZE,
    crypto_grid: range = range(1, 41),
) -> GasSchedule:
    """Find a schedule whose measured cost ratios hit the targets.

    The only free knob is the per-byte price of cache sealing; everything
    else in the schedule is structural. The search is a deterministic sweep,
    checking the given schedule first so an already-calibrated one comes
    back unchanged.
    """
    wanted = dict(DEFAULT_TARGETS)
    wanted.update(targets or {})
    base = schedule or GasSchedule()

    def error(achieved: dict) -> float:
        return max(
            abs(achieved[name] - value) / value for name, value in wanted.items()
        )

    best_sched, best_achieved, best_err = None, None, None
    for candidate in [base] + [
        replace(base, per_crypto_byte=k) for k in crypto_grid
    ]:
        achieved = _ratios_at(candidate, size)
        err = error(achieved)
        if err <= CALIBRATION_TOLERANCE:
            return candidate
        if best_err is None or err < best_err:
            best_sched, best_achieved, best_err = candidate, achieved, err
    raise Uncalibratable(
        f"no schedule within {CALIBRATION_TOLERANCE:.0%} of the targets",
        detail={
            "targets": wanted,
            "best": best_sched.to_dict(),
            "achieved": best_achieved,
            "error": best_err,
        },
    )


__all__ = [
    "COST_SCHEMA", "MECHANISMS", "KB", "DEFAULT_SIZES", "RATIO_SIZE",
    "DEFAULT_TARGETS", "CALIBRATION_TOLERANCE",
    "benchmark_model", "twopc_model", "measure", "measure_2pc",
    "CostReport", "run_benchmark", "calibrate",
]
