/** DOM and SVG rendering. Everything here is rebuild-on-change: panels are
 *  small enough that diffing would buy nothing. */

import { CostPanelModel } from "./cost.js";
import { Layout, NODE_H, NODE_W, regionBox } from "./layout.js";
import { PlaybackModel } from "./playback.js";
import { SelectionModel } from "./selection.js";
import type { ErrorInfo, GraphPayload, PackageInfo, PlanInfo, RunReport } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export function el(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function svgEl(tag: string, attrs: Record<string, string>): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

export interface GraphView {
  layout: Layout;
  graph: GraphPayload;
  selection: SelectionModel;
  highlight: Set<string>;
  /** candidate id under the pointer, "" when none */
  hover: string;
  /** vertex the server rejected, "" when there is none */
  rejectedVertex: string;
}

export function renderGraph(svg: SVGSVGElement, view: GraphView): void {
  const { layout, graph, selection } = view;
  svg.replaceChildren();
  svg.setAttribute("viewBox", `0 0 ${layout.width} ${layout.height}`);
  svg.setAttribute("width", String(layout.width));
  svg.setAttribute("height", String(layout.height));

  // selected region overlays first so nodes draw on top of them
  for (const id of selection.selection()) {
    const candidate = selection.byId.get(id);
    if (!candidate) continue;
    const depth = selection.depth(id);
    const box = regionBox(layout, candidate.members, depth);
    const overlay = svgEl("rect", {
      x: String(box.x),
      y: String(box.y),
      width: String(box.width),
      height: String(box.height),
      rx: "10",
      class: "region-box",
    });
    svg.append(overlay);
    const tag = svgEl("text", {
      x: String(box.x + 8),
      y: String(box.y + 14),
      class: "region-tag",
    });
    tag.textContent = id;
    svg.append(tag);
  }

  for (const edge of layout.edges) {
    const [a, b] = edge.points;
    svg.append(
      svgEl("line", {
        x1: String(a.x),
        y1: String(a.y),
        x2: String(b.x),
        y2: String(b.y),
        class: "edge",
      }),
    );
  }

  const hovered = new Set(
    view.hover ? (selection.byId.get(view.hover)?.members ?? []) : [],
  );
  for (const v of graph.vertices) {
    const node = layout.nodes.get(v.id);
    if (!node) continue;
    const classes = ["node", `kind-${v.kind}`];
    if (view.highlight.has(v.id)) classes.push("fired");
    if (hovered.has(v.id)) classes.push("hovered");
    if (view.rejectedVertex === v.id) classes.push("rejected");
    const group = svgEl("g", { class: classes.join(" ") });
    group.append(
      svgEl("rect", {
        x: String(node.x),
        y: String(node.y),
        width: String(NODE_W),
        height: String(NODE_H),
        rx: "6",
      }),
    );
    const label = svgEl("text", {
      x: String(node.x + NODE_W / 2),
      y: String(node.y + 16),
      class: "node-label",
    });
    label.textContent = v.label || v.id;
    const actor = svgEl("text", {
      x: String(node.x + NODE_W / 2),
      y: String(node.y + 31),
      class: "node-actor",
    });
    actor.textContent = v.actor;
    group.append(label, actor);
    svg.append(group);
  }

  // entry and exit dots for every region in play
  const marked = new Set(selection.selection());
  if (view.hover) marked.add(view.hover);
  for (const id of marked) {
    const candidate = selection.byId.get(id);
    if (!candidate) continue;
    const entry = layout.nodes.get(candidate.entry);
    const exit = layout.nodes.get(candidate.exit);
    if (entry) {
      svg.append(svgEl("circle", {
        cx: String(entry.x),
        cy: String(entry.y + NODE_H / 2),
        r: "5",
        class: "entry-dot",
      }));
    }
    if (exit) {
      svg.append(svgEl("circle", {
        cx: String(exit.x + NODE_W),
        cy: String(exit.y + NODE_H / 2),
        r: "5",
        class: "exit-dot",
      }));
    }
  }
}

export function renderCandidates(
  container: HTMLElement,
  model: SelectionModel,
  onToggle: (id: string) => void,
  onHover: (id: string) => void,
): void {
  container.replaceChildren();
  for (const row of model.rows()) {
    const c = row.candidate;
    const checkbox = el("input", {
      type: "checkbox",
      id: `cand-${c.id}`,
    }) as HTMLInputElement;
    checkbox.checked = model.isSelected(c.id);
    checkbox.addEventListener("change", () => onToggle(c.id));
    const label = el(
      "label",
      { for: `cand-${c.id}` },
      el("b", {}, c.id),
      ` ${c.entry} → ${c.exit} (${c.members.length} vertices)`,
    );
    const line = el("div", { class: "candidate" }, checkbox, label);
    line.style.marginLeft = `${row.depth * 18}px`;
    line.addEventListener("mouseenter", () => onHover(c.id));
    line.addEventListener("mouseleave", () => onHover(""));
    container.append(line);

    const subs = model.subSelection(c.id);
    if (subs.length) {
      const chips = el("div", { class: "sub-selection" }, "nested inside: ");
      for (const sub of subs) {
        const chip = el(
          "button",
          { class: model.isSelected(sub) ? "chip on" : "chip", type: "button" },
          sub,
        );
        chip.addEventListener("click", () => onToggle(sub));
        chips.append(chip);
      }
      chips.style.marginLeft = `${row.depth * 18 + 24}px`;
      container.append(chips);
    }
  }
}

export function renderPlan(container: HTMLElement, model: SelectionModel): void {
  container.replaceChildren();
  if (model.problem) {
    container.append(renderError(model.problem));
  }
  const plan: PlanInfo | null = model.acked;
  if (!plan) {
    container.append(el("p", { class: "muted" }, "no plan sent yet"));
    return;
  }
  container.append(
    el(
      "p",
      {},
      `mechanism ${plan.mechanism}, crypto ${plan.crypto}, selection [${plan.selection.join(", ")}]`,
    ),
  );
  const pairs = Object.entries(plan.nesting);
  if (pairs.length) {
    container.append(
      el("p", {}, `nesting: ${pairs.map(([c, p]) => `${c} in ${p}`).join(", ")}`),
    );
  }
  for (const warning of plan.warnings) {
    container.append(el("p", { class: "warning" }, warning));
  }
}

export function renderError(info: ErrorInfo): HTMLElement {
  const block = el(
    "div",
    { class: "error" },
    el("b", {}, info.code),
    ` ${info.message}`,
  );
  if (info.detail !== undefined && info.detail !== null) {
    block.append(el("pre", {}, JSON.stringify(info.detail, null, 1)));
  }
  return block;
}

export function renderCost(
  container: HTMLElement,
  model: CostPanelModel,
  hasSelection: boolean,
): void {
  container.replaceChildren();
  const table = el("table", { class: "cost-grid" });
  const head = el("tr", {}, el("th", {}, "mechanism"));
  for (const bytes of model.sizes()) head.append(el("th", {}, String(bytes)));
  table.append(head);
  for (const row of model.grid(hasSelection)) {
    const tr = el("tr", {}, el("td", {}, row.mechanism));
    for (const cell of row.cells) {
      const bar = el("div", { class: "bar" });
      bar.style.width = `${Math.round(cell.fraction * 120)}px`;
      tr.append(el("td", {}, el("span", { class: "num" }, cell.gas), bar));
    }
    table.append(tr);
  }
  container.append(el("h3", {}, "gas by payload size"), table);

  const ratios = el("table", { class: "cost-grid" });
  for (const row of model.ratioRows()) {
    const tr = el("tr", {}, el("td", {}, row.name));
    for (const v of row.values) {
      tr.append(el("td", {}, el("span", { class: "num" }, v.value)));
    }
    ratios.append(tr);
  }
  container.append(el("h3", {}, "ratios"), ratios);

  const fits = el("table", { class: "cost-grid" });
  fits.append(
    el("tr", {}, el("th", {}, "mechanism"), el("th", {}, "slope"),
      el("th", {}, "intercept"), el("th", {}, "r2")),
  );
  for (const row of model.fitRows()) {
    fits.append(
      el("tr", {}, el("td", {}, row.mechanism), el("td", {}, row.slope),
        el("td", {}, row.intercept), el("td", {}, row.r2)),
    );
  }
  container.append(el("h3", {}, "linear fits"), fits);

  const twopc = el("table", { class: "cost-grid" });
  twopc.append(
    el("tr", {}, el("th", {}, "participants"), el("th", {}, "phase 1"),
      el("th", {}, "phase 2")),
  );
  for (const row of model.twopcRows()) {
    twopc.append(
      el("tr", {}, el("td", {}, row.n), el("td", {}, row.phase1),
        el("td", {}, row.phase2)),
    );
  }
  container.append(
    el("h3", {}, "two-phase commit"),
    twopc,
    el("p", { class: "muted" }, `phase gap ${model.phaseGap()}`),
  );
}

export function renderPlayback(
  container: HTMLElement,
  model: PlaybackModel | null,
  onSeek: (index: number) => void,
): void {
  container.replaceChildren();
  if (!model) {
    container.append(el("p", { class: "muted" }, "run a trace to see its steps"));
    return;
  }
  if (model.mark) {
    container.append(
      el(
        "div",
        { class: "error" },
        el("b", {}, `rejected at step ${model.mark.index}`),
        ` origin ${model.mark.origin}; expected one of [${model.mark.expected.join(", ")}]`,
      ),
    );
  }
  const list = el("ol", { class: "steps", start: "0" });
  for (const entry of model.entries) {
    const item = el("li", { class: `step ${entry.status}` }, entry.label);
    if (entry.index === model.cursor) item.classList.add("cursor");
    item.addEventListener("click", () => onSeek(entry.index));
    list.append(item);
  }
  container.append(list);
}

export function renderPackage(container: HTMLElement, info: PackageInfo): void {
  container.replaceChildren(
    el(
      "p",
      {},
      `package ${info.name}: ${String(info.methods.length)} methods — ` +
        info.methods.map((m) => m.name).join(", "),
    ),
  );
}

export function renderReportSummary(container: HTMLElement, report: RunReport): void {
  container.replaceChildren();
  container.append(
    el(
      "p",
      {},
      `run ${report.run}: accepted ${String(report.accepted)} events, ` +
        `quiescent ${String(report.quiescent)}`,
    ),
  );
  const txns = Object.entries(report.txns);
  if (txns.length) {
    container.append(
      el("p", {}, txns.map(([id, state]) => `${id}: ${state}`).join(", ")),
    );
  }
  for (const [chain, hashes] of Object.entries(report.blocks)) {
    container.append(
      el("p", { class: "mono" }, `${chain} blocks: ${hashes.join(", ")}`),
    );
  }
}
