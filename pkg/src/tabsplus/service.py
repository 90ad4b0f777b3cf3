"""Session-oriented HTTP service around the toolchain.

A session is created by uploading a BPMN collaboration. From there the
client can inspect the flow graph and the transaction candidates, set a
plan, benchmark costs, compile the package, and execute traces. Responses
carry exactly the bytes the command line tool would produce for the same
request, so the two front ends can be diffed against each other.

All sessions live in process memory. Each session has an exclusive lock:
requests against the same session are serialized, requests against
different sessions are independent.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .canon import canonical_json, sha256_hex
from .cli import analysis_dict
from .codegen import ContractPackage, compile_package, serialize
from .cost import DEFAULT_SIZES, run_benchmark
from .errors import TabsError
from .ledger import GasSchedule
from .model import BpmnModel, normalize, parse_bpmn
from .plan import NO_XA, build_plan, plan_to_dict
from .runtime import Monitor
from .sese import enumerate_candidates
from .graph import build_dag

SESSION_SCHEMA = "tabsplus-session/1"
CANDIDATES_SCHEMA = "tabsplus-candidates/1"


@dataclass
class Session:
    id: str
    xml: str
    model: BpmnModel
    analysis: dict
    lock: threading.Lock = field(default_factory=threading.Lock)
    plan_set: bool = False
    plan_data: dict = field(default_factory=dict)
    schedule: GasSchedule | None = None
    package: ContractPackage | None = None
    package_bytes: bytes = b""
    last_report: dict | None = None
    run_count: int = 0


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def put(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)

    def clear(self) -> None:
        with self._lock:
            self._sessions.clear()


store = SessionStore()

app = FastAPI(
    title="tabsplus service",
    description="Compile BPMN collaborations into transactional contract "
                "packages and execute them on a simulated ledger.",
    openapi_url="/spec",
)
# browser studios are served from their own origin during development
app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                   allow_headers=["*"])


def _json_response(data: dict, status: int = 200) -> Response:
    return Response(canonical_json(data) + "\n", status_code=status,
                    media_type="application/json")


def _module_error(exc: TabsError, status: int = 400) -> Response:
    return _json_response({"error": exc.to_dict()}, status)


def _plain_error(code: str, message: str, status: int) -> Response:
    return _json_response({"error": {"code": code, "message": message}}, status)


def _not_found(session_id: str) -> Response:
    return _plain_error("UnknownSession", f"no session {session_id!r}", 404)


def _out_of_order(message: str) -> Response:
    return _plain_error("OutOfOrder", message, 409)


@app.post("/sessions")
async def create_session(request: Request) -> Response:
    xml = (await request.body()).decode("utf-8", errors="replace")
    try:
        model = normalize(parse_bpmn(xml))
        analysis = analysis_dict(model)
    except TabsError as exc:
        return _module_error(exc)
    session = Session(
        id=f"s{sha256_hex(xml.encode('utf-8'))[:12]}",
        xml=xml,
        model=model,
        analysis=analysis,
    )
    store.put(session)
    return _json_response({
        "schema": SESSION_SCHEMA,
        "id": session.id,
        "model": model.name,
        "actors": len(model.actors),
        "vertices": len(model.nodes),
    }, status=201)


@app.get("/sessions/{session_id}/graph")
async def get_graph(session_id: str) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        data = {k: v for k, v in session.analysis.items() if k != "candidates"}
        return _json_response(data)


@app.get("/sessions/{session_id}/candidates")
async def get_candidates(session_id: str) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        return _json_response({
            "schema": CANDIDATES_SCHEMA,
            "model": session.model.name,
            "candidates": session.analysis["candidates"],
        })


@app.put("/sessions/{session_id}/plan")
async def put_plan(session_id: str, request: Request) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        try:
            body = json.loads(await request.body() or b"{}")
        except json.JSONDecodeError as exc:
            return _plain_error("BadRequest", f"plan body is not JSON: {exc}", 400)
        try:
            schedule = (
                GasSchedule.from_dict(body["gas_schedule"])
                if body.get("gas_schedule") else None
            )
            forest = enumerate_candidates(build_dag(session.model))
            plan = build_plan(
                forest,
                list(body.get("selection", ())),
                mechanism=body.get("mechanism") or NO_XA,
                crypto=bool(body.get("crypto", False)),
                model=session.model.name,
            )
        except TabsError as exc:
            return _module_error(exc)
        session.plan_set = True
        session.plan_data = {
            "selection": list(body.get("selection", ())),
            "mechanism": body.get("mechanism"),
            "crypto": bool(body.get("crypto", False)),
        }
        session.schedule = schedule
        session.package = None  # a new plan invalidates earlier artifacts
        session.package_bytes = b""
        session.last_report = None
        return _json_response({"plan": plan_to_dict(plan), "valid": True})


@app.get("/sessions/{session_id}/cost")
async def get_cost(session_id: str, sizes: str | None = None) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        try:
            size_list = (
                tuple(int(s) for s in sizes.split(",")) if sizes else DEFAULT_SIZES
            )
        except ValueError:
            return _plain_error("BadRequest",
                                f"sizes must be comma separated integers: {sizes!r}",
                                400)
        try:
            report = run_benchmark(sizes=size_list, schedule=session.schedule)
        except TabsError as exc:
            return _module_error(exc)
        return _json_response(report.to_dict())


@app.post("/sessions/{session_id}/generate")
async def post_generate(session_id: str) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        if not session.plan_set:
            return _out_of_order("set a plan before generating the package")
        plan = session.plan_data
        try:
            package = compile_package(
                session.model,
                selection=tuple(plan.get("selection", ())),
                mechanism=plan.get("mechanism"),
                crypto=bool(plan.get("crypto", False)),
                schedule=session.schedule,
            )
        except TabsError as exc:
            return _module_error(exc)
        session.package = package
        session.package_bytes = serialize(package)
        return Response(session.package_bytes, media_type="application/json")


@app.post("/sessions/{session_id}/run")
async def post_run(session_id: str, request: Request) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        if session.package is None:
            return _out_of_order("generate the package before running traces")
        try:
            body = json.loads(await request.body() or b"{}")
        except json.JSONDecodeError as exc:
            return _plain_error("BadRequest", f"run body is not JSON: {exc}", 400)
        trace = body.get("trace", [])
        seed = int(body.get("seed", 1))
        try:
            monitor = Monitor(session.package, run_id=f"r{seed}")
            for idx, item in enumerate(trace):
                try:
                    monitor.submit(item)
                except TabsError as exc:
                    # name the rejected position so clients can mark the
                    # exact step without replaying anything themselves
                    detail = exc.detail if isinstance(exc.detail, dict) else {}
                    origin = item.get("origin", "") if isinstance(item, dict) else ""
                    exc.detail = {**detail, "failed_at": idx, "origin": origin}
                    raise
            report = monitor.run_to_quiescence()
        except TabsError as exc:
            return _module_error(exc)
        session.last_report = report
        session.run_count += 1
        return _json_response(report)


@app.get("/sessions/{session_id}/report")
async def get_report(session_id: str) -> Response:
    session = store.get(session_id)
    if session is None:
        return _not_found(session_id)
    with session.lock:
        if session.last_report is None:
            return _out_of_order("no trace has been run in this session yet")
        return _json_response(session.last_report)


__all__ = ["app", "store", "Session", "SessionStore",
           "SESSION_SCHEMA", "CANDIDATES_SCHEMA"]
