"""Command line front end.

Machine-readable results go to stdout or files under the output directory;
progress and diagnostics go to stderr. Exit status is zero exactly when the
command finished without an error. All emitted JSON is canonical (sorted
keys, compact separators), so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .canon import canonical_json, sha256_hex
from .codegen import compile_package, deserialize, serialize
from .cost import DEFAULT_SIZES, CostReport, calibrate, run_benchmark
from .errors import TabsError
from .graph import build_dag
from .ledger import GasSchedule
from .model import normalize, parse_bpmn
from .plan import NO_XA, build_plan, plan_to_dict
from .runtime import classify_trace, replay_trace
from .sese import enumerate_candidates

ANALYSIS_SCHEMA = "tabsplus-analysis/1"
TRACECHECK_SCHEMA = "tabsplus-tracecheck/1"


def _default_out() -> str:
    return os.environ.get("TABSPLUS_OUT", "./out")


def _log(message: str) -> None:
    click.echo(message, err=True)


def _emit(data: dict, out: str | None, filename: str, fmt: str = "json",
          text: str | None = None) -> None:
    """Write the result to stdout and, when an output directory is set,
    to a file inside it."""
    if fmt == "json":
        payload = canonical_json(data) + "\n"
    else:
        payload = text if text is not None else canonical_json(data) + "\n"
    sys.stdout.write(payload)
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / filename).write_text(payload, encoding="utf-8")
        _log(f"wrote {path / filename}")


def _fail(exc: TabsError) -> None:
    sys.stdout.write(canonical_json({"error": exc.to_dict()}) + "\n")
    _log(f"error [{exc.code}]: {exc}")
    sys.exit(1)


def _load_model(path: str):
    xml = Path(path).read_text(encoding="utf-8")
    return normalize(parse_bpmn(xml))


def _load_plan_file(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _load_schedule(path: str | None) -> GasSchedule | None:
    if not path:
        return None
    return GasSchedule.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _resolve_plan(plan_file: str | None, mechanism: str | None,
                  crypto: bool) -> tuple[tuple, str | None, bool]:
    data = _load_plan_file(plan_file)
    selection = tuple(data.get("selection", ()))
    mech = mechanism or data.get("mechanism")
    use_crypto = crypto or bool(data.get("crypto", False))
    return selection, mech, use_crypto


def analysis_dict(model) -> dict:
    """Shared between the CLI and the HTTP service: the decomposition of a
    model into its transaction candidates."""
    dag = build_dag(model)
    forest = enumerate_candidates(dag)
    rank: dict[str, int] = {}
    for v in dag.order:
        preds = [rank[e.source] for e in dag.in_edges(v)]
        rank[v] = max(preds) + 1 if preds else 0
    return {
        "schema": ANALYSIS_SCHEMA,
        "model": model.name,
        "actors": [
            {"id": a.id, "name": a.name, "credential": a.credential}
            for a in model.actors
        ],
        "vertices": [
            {
                "id": v,
                "kind": dag.vertices[v].kind,
                "actor": dag.vertices[v].actor,
                "label": dag.vertices[v].label,
                "rank": rank[v],
            }
            for v in dag.order
        ],
        "edges": [
            {"id": e.flow_id, "source": e.source, "target": e.target, "kind": e.kind}
            for e in dag.edges
        ],
        "candidates": [
            {
                "id": r.id,
                "entry": r.entry,
                "exit": r.exit,
                "members": sorted(r.members),
                "parent": forest.parent.get(r.id, ""),
            }
            for r in forest.regions
        ],
    }


def analysis_text(data: dict) -> str:
    lines = [f"model {data['model']}: {len(data['vertices'])} vertices, "
             f"{len(data['edges'])} edges, {len(data['actors'])} actors"]
    lines.append(f"{len(data['candidates'])} transaction candidates:")
    for c in data["candidates"]:
        parent = f" < {c['parent']}" if c["parent"] else ""
        lines.append(
            f"  {c['id']:<5} [{c['entry']} .. {c['exit']}] "
            f"{len(c['members'])} members{parent}"
        )
    return "\n".join(lines) + "\n"


def analysis_dot(data: dict) -> str:
    """GraphViz dump of the flow DAG; message flows drawn dashed."""
    lines = [f'digraph "{data["model"]}" {{', "  rankdir=TB;"]
    for v in data["vertices"]:
        label = v["label"].replace('"', "'") or v["id"]
        lines.append(f'  "{v["id"]}" [label="{label}"];')
    for e in data["edges"]:
        style = ' [style=dashed]' if e["kind"] == "msg" else ""
        lines.append(f'  "{e["source"]}" -> "{e["target"]}"{style};')
    lines.append("}")
    return "\n".join(lines) + "\n"


@click.group()
def main() -> None:
    """BPMN collaborations to transactional smart-contract packages."""


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
@click.option("--out", default=None, help="Output directory (default $TABSPLUS_OUT or ./out).")
def analyze(model_path: str, fmt: str, out: str | None) -> None:
    """Parse a model and list its transaction candidates."""
    try:
        model = _load_model(model_path)
        data = analysis_dict(model)
    except TabsError as exc:
        _fail(exc)
    out_dir = Path(out if out is not None else _default_out())
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "candidates.json").write_text(canonical_json(data) + "\n",
                                             encoding="utf-8")
    (out_dir / "dag.dot").write_text(analysis_dot(data), encoding="utf-8")
    _log(f"wrote {out_dir / 'candidates.json'} and {out_dir / 'dag.dot'}")
    if fmt == "text":
        sys.stdout.write(analysis_text(data))
    else:
        sys.stdout.write(canonical_json(data) + "\n")


@main.command("plan-validate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--mechanism", type=click.Choice(["sc-all", "sc-2m", "sc-2s"]), default=None)
@click.option("--crypto", is_flag=True, default=False)
def plan_validate(model_path: str, plan_path: str, mechanism: str | None,
                  crypto: bool) -> None:
    """Check a transaction plan against a model."""
    try:
        model = _load_model(model_path)
        selection, mech, use_crypto = _resolve_plan(plan_path, mechanism, crypto)
        forest = enumerate_candidates(build_dag(model))
        plan = build_plan(forest, selection, mechanism=mech or NO_XA,
                          crypto=use_crypto, model=model.name)
    except TabsError as exc:
        _fail(exc)
    sys.stdout.write(canonical_json({"valid": True, "plan": plan_to_dict(plan)}) + "\n")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--plan", "plan_path", default=None, type=click.Path(exists=True))
@click.option("--mechanism", type=click.Choice(["sc-all", "sc-2m", "sc-2s"]), default=None)
@click.option("--crypto", is_flag=True, default=False)
@click.option("--gas-schedule", "schedule_path", default=None, type=click.Path(exists=True))
@click.option("--out", default=None)
def generate(model_path: str, plan_path: str | None, mechanism: str | None,
             crypto: bool, schedule_path: str | None, out: str | None) -> None:
    """Compile a model and plan into a contract package."""
    try:
        model = _load_model(model_path)
        selection, mech, use_crypto = _resolve_plan(plan_path, mechanism, crypto)
        schedule = _load_schedule(schedule_path)
        package = compile_package(model, selection=selection, mechanism=mech,
                                  crypto=use_crypto, schedule=schedule)
        blob = serialize(package)
    except TabsError as exc:
        _fail(exc)
    out_dir = Path(out if out is not None else _default_out())
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "package.json"
    target.write_bytes(blob)
    _log(f"wrote {target}")
    sys.stdout.write(canonical_json({
        "package": str(target),
        "digest": sha256_hex(blob),
        "methods": [m.name for m in package.methods],
        "mechanism": package.plan.mechanism,
    }) + "\n")


def _read_trace(path: Path) -> list[dict]:
    items = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            items.append(json.loads(line))
    return items


@main.command()
@click.option("--package", "package_path", default=None, type=click.Path(exists=True))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True))
@click.option("--plan", "plan_path", default=None, type=click.Path(exists=True))
@click.option("--mechanism", type=click.Choice(["sc-all", "sc-2m", "sc-2s"]), default=None)
@click.option("--crypto", is_flag=True, default=False)
@click.option("--gas-schedule", "schedule_path", default=None, type=click.Path(exists=True))
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=1, help="Run identifier seed.")
@click.option("--out", default=None)
def run(package_path: str | None, model_path: str | None, plan_path: str | None,
        mechanism: str | None, crypto: bool, schedule_path: str | None,
        trace_path: str, seed: int, out: str | None) -> None:
    """Execute a trace against a package on a fresh simulated ledger."""
    try:
        package = _obtain_package(package_path, model_path, plan_path,
                                  mechanism, crypto, schedule_path)
        trace = _read_trace(Path(trace_path))
        report = replay_trace(package, trace, run_id=f"r{seed}")
    except TabsError as exc:
        _fail(exc)
    _emit(report, out if out is not None else _default_out(), "run.json")


def _obtain_package(package_path, model_path, plan_path, mechanism, crypto,
                    schedule_path):
    if package_path:
        return deserialize(Path(package_path).read_bytes())
    if not model_path:
        raise click.UsageError("either --package or --model is required")
    model = _load_model(model_path)
    selection, mech, use_crypto = _resolve_plan(plan_path, mechanism, crypto)
    schedule = _load_schedule(schedule_path)
    return compile_package(model, selection=selection, mechanism=mech,
                           crypto=use_crypto, schedule=schedule)


@main.command("trace-check")
@click.option("--package", "package_path", default=None, type=click.Path(exists=True))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True))
@click.option("--plan", "plan_path", default=None, type=click.Path(exists=True))
@click.option("--mechanism", type=click.Choice(["sc-all", "sc-2m", "sc-2s"]), default=None)
@click.option("--crypto", is_flag=True, default=False)
@click.option("--gas-schedule", "schedule_path", default=None, type=click.Path(exists=True))
@click.option("--seed", type=int, default=1)
@click.option("--out", default=None)
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True))
def trace_check(package_path, model_path, plan_path, mechanism, crypto,
                schedule_path, seed, out, traces) -> None:
    """Classify one or more traces as conformant or not.

    A non-conformant trace is a result, not a failure; only broken inputs
    (unreadable files, malformed JSON) make the command exit non-zero, and
    even those do not stop the rest of the batch.
    """
    try:
        package = _obtain_package(package_path, model_path, plan_path,
                                  mechanism, crypto, schedule_path)
    except TabsError as exc:
        _fail(exc)
    results = []
    errors = 0
    for trace_file in traces:
        entry: dict = {"trace": str(trace_file)}
        try:
            trace = _read_trace(Path(trace_file))
            verdict = classify_trace(package, trace, run_id=f"r{seed}")
            verdict.pop("report", None)  # keep the batch output compact
            entry.update(verdict)
        except (json.JSONDecodeError, OSError) as exc:
            entry.update({"valid": None, "error": str(exc)})
            errors += 1
            _log(f"error reading {trace_file}: {exc}")
        results.append(entry)
    data = {
        "schema": TRACECHECK_SCHEMA,
        "checked": len(results),
        "valid": sum(1 for r in results if r.get("valid") is True),
        "results": results,
    }
    _emit(data, out if out is not None else _default_out(), "trace_check.json")
    if errors:
        sys.exit(1)


@main.command()
@click.option("--sizes", default=None,
              help="Comma separated payload sizes in bytes.")
@click.option("--gas-schedule", "schedule_path", default=None, type=click.Path(exists=True))
@click.option("--calibrate", "do_calibrate", is_flag=True, default=False,
              help="Search for a schedule hitting the standard cost ratios first.")
@click.option("--format", "fmt", type=click.Choice(["json", "text", "csv"]),
              default="json")
@click.option("--out", default=None)
def cost(sizes: str | None, schedule_path: str | None, do_calibrate: bool,
         fmt: str, out: str | None) -> None:
    """Benchmark every mechanism and report gas, ratios, and phase costs."""
    try:
        schedule = _load_schedule(schedule_path)
        if do_calibrate:
            _log("calibrating gas schedule")
            schedule = calibrate(schedule=schedule)
        size_list = (
            tuple(int(s) for s in sizes.split(",")) if sizes else DEFAULT_SIZES
        )
        _log(f"benchmarking {len(size_list)} sizes per mechanism")
        report = run_benchmark(sizes=size_list, schedule=schedule)
    except TabsError as exc:
        _fail(exc)
    text = {"text": report.to_text(), "csv": report.to_csv()}.get(fmt)
    ext = {"json": "json", "text": "txt", "csv": "csv"}[fmt]
    _emit(report.to_dict(), out if out is not None else _default_out(),
          f"cost.{ext}", fmt, text)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8787)
def serve(host: str, port: int) -> None:
    """Start the HTTP session service."""
    import uvicorn

    from .service import app

    _log(f"serving on http://{host}:{port} (interface description at /spec)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
