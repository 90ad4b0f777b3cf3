/** End-to-end checks against a live service instance.
 *
 *  The suite boots `python3 -m tabsplus.cli serve` on a free port, so the
 *  Python package must be installed (pip install -e . from the repository
 *  root). Each test drives the same view models the page uses.
 */

import { type ChildProcess, spawn } from "node:child_process";
import { type AddressInfo, createServer } from "node:net";
import { setTimeout as sleep } from "node:timers/promises";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, StudioApi } from "../src/api.js";
import { CostPanelModel } from "../src/cost.js";
import { layeredLayout } from "../src/layout.js";
import { PlaybackModel } from "../src/playback.js";
import { SelectionModel } from "../src/selection.js";
import type { CostPayload, TraceItem } from "../src/types.js";
import { fixture, fixtureText } from "./util.js";

const bpmn = fixtureText("supply_chain.bpmn");
const trace = fixture<TraceItem[]>("trace01.json");

let proc: ChildProcess | null = null;
let api: StudioApi;
let session: string;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.once("error", reject);
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as AddressInfo).port;
      srv.close(() => resolve(port));
    });
  });
}

beforeAll(async () => {
  const port = await freePort();
  let log = "";
  proc = spawn(
    "python3",
    ["-m", "tabsplus.cli", "serve", "--host", "127.0.0.1", "--port", String(port)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  proc.stdout?.on("data", (chunk: Buffer) => { log += chunk.toString(); });
  proc.stderr?.on("data", (chunk: Buffer) => { log += chunk.toString(); });

  api = new StudioApi(`http://127.0.0.1:${port}`);
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`service exited with ${proc.exitCode}:\n${log}`);
    }
    try {
      const res = await fetch(`${api.base}/spec`);
      if (res.ok) break;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) throw new Error(`service never came up:\n${log}`);
    await sleep(150);
  }
  session = (await api.createSession(bpmn)).id;
});

afterAll(() => {
  proc?.kill("SIGTERM");
});

describe("studio against the live service", () => {
  it("lists the ten candidates of the example model", async () => {
    const payload = await api.candidates(session);
    const model = new SelectionModel(payload.candidates);
    expect(model.ids()).toHaveLength(10);
    expect(model.rows().map((r) => r.candidate.id)).toHaveLength(10);
    // and the layout covers every vertex those candidates reference
    const graph = await api.graph(session);
    const layout = layeredLayout(graph.vertices, graph.edges);
    for (const c of payload.candidates) {
      for (const member of c.members) expect(layout.nodes.has(member)).toBe(true);
    }
  });

  it("exposes S1/S2 sub-selection when S5 is picked and the server acks it", async () => {
    const payload = await api.candidates(session);
    const model = new SelectionModel(payload.candidates);
    expect(model.subSelection("S5")).toEqual([]);

    model.toggle("S5");
    model.accept(await api.putPlan(session, model.planBody("sc-2m")));
    expect(model.subSelection("S5").sort()).toEqual(["S1", "S2"]);
    expect(model.nesting()).toEqual({});

    model.toggle("S1");
    model.toggle("S2");
    const echo = await api.putPlan(session, model.planBody("sc-2m"));
    model.accept(echo);
    expect(echo.plan.selection).toEqual(["S1", "S2", "S5"]);
    expect(model.nesting()).toEqual({ S1: "S5", S2: "S5" });
  });

  it("rejects an impossible selection and the model surfaces the diagnostic", async () => {
    const payload = await api.candidates(session);
    const model = new SelectionModel(payload.candidates);
    model.toggle("S5");
    model.accept(await api.putPlan(session, model.planBody("sc-2m")));

    const err = await api
      .putPlan(session, { selection: ["S5", "S99"], mechanism: "sc-2m" })
      .then(() => null, (e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    model.reject((err as ApiError).info);
    expect(model.problem?.code).toBe("PlanRegionUnknown");
    expect(model.selection()).toEqual(["S5"]); // rolled back to the ack
  });

  it("renders the cost panel verbatim from the /cost payload", async () => {
    const live = await api.cost(session, [524288, 1048576]);
    // the committed fixture is a byte-for-byte snapshot of this payload
    expect(live).toEqual(fixture<CostPayload>("cost.json"));
    const model = new CostPanelModel(live);
    for (const row of model.grid(true)) {
      for (const cell of row.cells) {
        const source = live.rows.find(
          (r) => r.mechanism === row.mechanism && r.bytes === cell.bytes,
        )!;
        expect(cell.gas).toBe(String(source.gas));
        expect(cell.currency).toBe(String(source.currency));
      }
    }
    for (const ratioRow of model.ratioRows()) {
      for (const v of ratioRow.values) {
        expect(v.value).toBe(String(live.ratios[ratioRow.name][v.bytes]));
      }
    }
  });

  it("plays an accepted run from the report steps", async () => {
    await api.putPlan(session, {
      selection: ["S1", "S2", "S5"],
      mechanism: "sc-2m",
    });
    await api.generate(session);
    const report = await api.run(session, trace, 1);
    expect(report.accepted).toBe(trace.length);
    expect(report.quiescent).toBe(true);
    const model = PlaybackModel.fromReport(report);
    expect(model.length).toBe(report.steps.length);
    model.seek(model.length - 1);
    expect(model.firedVertices().length).toBeGreaterThan(0);
  });

  it("marks the exact step of a rejected trace", async () => {
    const bad = trace.map((t) => ({ ...t }));
    bad[3] = { ...trace[10] }; // out-of-order origin
    const err = await api.run(session, bad, 1).then(() => null, (e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    const info = (err as ApiError).info;
    const model = PlaybackModel.fromRejection(bad, info);
    expect(model.mark?.index).toBe(3);
    expect(model.mark?.origin).toBe(bad[3].origin);
    expect(model.mark?.expected).toEqual(["mfr_place_order"]);
    expect(model.entries[3].status).toBe("rejected");
    expect(model.entries[2].status).toBe("accepted");
    expect(model.entries[4].status).toBe("unreached");
  });
});
