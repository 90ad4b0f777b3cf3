/** Studio wiring.
 *
 *  One session at a time and one in-flight plan mutation: while a PUT /plan
 *  is on the wire further clicks only update local intent, and the latest
 *  intent is pushed once the response lands. The server's echo (or its
 *  rejection) always wins over whatever was clicked.
 */

import { ApiError, StudioApi } from "./api.js";
import { CostPanelModel } from "./cost.js";
import { Layout, layeredLayout } from "./layout.js";
import { PlaybackModel } from "./playback.js";
import {
  el,
  renderCandidates,
  renderCost,
  renderError,
  renderGraph,
  renderPackage,
  renderPlan,
  renderPlayback,
  renderReportSummary,
} from "./render.js";
import { SelectionModel } from "./selection.js";
import type { GraphPayload, PackageInfo, TraceItem } from "./types.js";

interface Studio {
  api: StudioApi;
  session: string;
  graph: GraphPayload;
  layout: Layout;
  selection: SelectionModel;
  cost: CostPanelModel | null;
  playback: PlaybackModel | null;
  hover: string;
  rejectedVertex: string;
  packageFresh: boolean;
  pushing: boolean;
  dirty: boolean;
}

let studio: Studio | null = null;

const $ = (id: string): HTMLElement => document.getElementById(id)!;
const input = (id: string): HTMLInputElement => $(id) as HTMLInputElement;

function mechanism(): string {
  return ($("mechanism") as HTMLSelectElement).value;
}

function repaintGraph(): void {
  if (!studio) return;
  renderGraph($("graph") as unknown as SVGSVGElement, {
    layout: studio.layout,
    graph: studio.graph,
    selection: studio.selection,
    highlight: new Set(studio.playback?.firedVertices() ?? []),
    hover: studio.hover,
    rejectedVertex: studio.rejectedVertex,
  });
}

function repaintCandidates(): void {
  if (!studio) return;
  renderCandidates($("candidates"), studio.selection, onToggle, onHover);
}

function repaintPlan(): void {
  if (!studio) return;
  renderPlan($("plan"), studio.selection);
}

function repaintCost(): void {
  if (!studio || !studio.cost) return;
  renderCost($("cost"), studio.cost, studio.selection.selection().length > 0);
}

function repaintPlayback(): void {
  if (!studio) return;
  renderPlayback($("playback"), studio.playback, (index) => {
    studio?.playback?.seek(index);
    repaintPlayback();
    repaintGraph();
  });
}

async function pushPlan(): Promise<void> {
  if (!studio) return;
  if (studio.pushing) {
    studio.dirty = true;
    return;
  }
  studio.pushing = true;
  try {
    const body = studio.selection.planBody(mechanism(), input("crypto").checked);
    const echo = await studio.api.putPlan(studio.session, body);
    studio.selection.accept(echo);
    studio.packageFresh = false; // server invalidated the old package
    $("package-info").replaceChildren();
  } catch (err) {
    if (err instanceof ApiError) studio.selection.reject(err.info);
    else throw err;
  } finally {
    studio.pushing = false;
  }
  repaintCandidates();
  repaintPlan();
  repaintCost();
  repaintGraph();
  if (studio.dirty) {
    studio.dirty = false;
    await pushPlan();
  }
}

function onToggle(id: string): void {
  if (!studio) return;
  studio.selection.toggle(id);
  repaintCandidates();
  void pushPlan();
}

function onHover(id: string): void {
  if (!studio || studio.hover === id) return;
  studio.hover = id;
  repaintGraph();
}

async function connect(): Promise<void> {
  const status = $("connect-status");
  status.replaceChildren();
  const api = new StudioApi(input("base-url").value.replace(/\/+$/, ""));
  const bpmn = ($("model-xml") as HTMLTextAreaElement).value;
  try {
    const info = await api.createSession(bpmn);
    const [graph, candidates] = await Promise.all([
      api.graph(info.id),
      api.candidates(info.id),
    ]);
    studio = {
      api,
      session: info.id,
      graph,
      layout: layeredLayout(graph.vertices, graph.edges),
      selection: new SelectionModel(candidates.candidates),
      cost: null,
      playback: null,
      hover: "",
      rejectedVertex: "",
      packageFresh: false,
      pushing: false,
      dirty: false,
    };
    status.append(
      el("p", {}, `session ${info.id}: ${info.model}, ` +
        `${String(info.vertices)} vertices, ${String(info.actors)} actors`),
    );
    repaintGraph();
    repaintCandidates();
    repaintPlan();
    repaintPlayback();
    void refreshCost();
  } catch (err) {
    if (err instanceof ApiError) status.append(renderError(err.info));
    else status.append(el("p", { class: "error" }, String(err)));
  }
}

async function refreshCost(): Promise<void> {
  if (!studio) return;
  try {
    const payload = await studio.api.cost(studio.session);
    studio.cost = new CostPanelModel(payload);
    repaintCost();
  } catch (err) {
    if (err instanceof ApiError) $("cost").replaceChildren(renderError(err.info));
    else throw err;
  }
}

function parseTrace(text: string): TraceItem[] {
  const trimmed = text.trim();
  if (!trimmed) return [];
  try {
    const parsed: unknown = JSON.parse(trimmed);
    if (Array.isArray(parsed)) return parsed as TraceItem[];
  } catch {
    // fall through to line-by-line
  }
  return trimmed
    .split("\n")
    .filter((line) => line.trim())
    .map((line) => JSON.parse(line) as TraceItem);
}

async function runTrace(): Promise<void> {
  if (!studio) return;
  const status = $("run-status");
  status.replaceChildren();
  let trace: TraceItem[];
  try {
    trace = parseTrace(($("trace-json") as HTMLTextAreaElement).value);
  } catch (err) {
    status.append(el("p", { class: "error" }, `trace is not JSON: ${String(err)}`));
    return;
  }
  try {
    if (!studio.selection.acked) await pushPlan();
    if (!studio.packageFresh) {
      const bytes = await studio.api.generate(studio.session);
      renderPackage($("package-info"), JSON.parse(bytes) as PackageInfo);
      studio.packageFresh = true;
    }
    const seed = Number(input("seed").value) || 1;
    const report = await studio.api.run(studio.session, trace, seed);
    studio.playback = PlaybackModel.fromReport(report);
    studio.playback.seek(report.steps.length - 1);
    studio.rejectedVertex = "";
    renderReportSummary(status, report);
  } catch (err) {
    if (!(err instanceof ApiError)) throw err;
    studio.playback = PlaybackModel.fromRejection(trace, err.info);
    studio.rejectedVertex = studio.playback.mark?.origin ?? "";
    status.append(renderError(err.info));
  }
  repaintPlayback();
  repaintGraph();
}

async function loadExample(): Promise<void> {
  // the repository copy used by the tests doubles as the demo model
  const res = await fetch("test/fixtures/supply_chain.bpmn");
  ($("model-xml") as HTMLTextAreaElement).value = await res.text();
}

function wire(): void {
  $("connect").addEventListener("click", () => void connect());
  $("load-example").addEventListener("click", () => void loadExample());
  $("run").addEventListener("click", () => void runTrace());
  ($("mechanism") as HTMLSelectElement).addEventListener("change", () => void pushPlan());
  input("crypto").addEventListener("change", () => void pushPlan());
  $("step-back").addEventListener("click", () => {
    studio?.playback?.back();
    repaintPlayback();
    repaintGraph();
  });
  $("step-fwd").addEventListener("click", () => {
    studio?.playback?.advance();
    repaintPlayback();
    repaintGraph();
  });
  $("step-end").addEventListener("click", () => {
    studio?.playback?.seek((studio.playback?.length ?? 0) - 1);
    repaintPlayback();
    repaintGraph();
  });
}

wire();
