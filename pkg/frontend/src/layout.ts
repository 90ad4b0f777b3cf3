/** Layered graph layout driven by the server's topological ranks.
 *
 *  The server already assigns every vertex a rank (its longest-path layer),
 *  so the client never re-derives graph structure: ranks become columns, and
 *  a single barycenter sweep orders the rows inside each column to keep
 *  edges short. The result is deterministic for a given payload.
 */

import type { EdgeInfo, VertexInfo } from "./types.js";

export const NODE_W = 132;
export const NODE_H = 40;

export interface LayoutNode {
  id: string;
  x: number;
  y: number;
  layer: number;
  row: number;
}

export interface Point {
  x: number;
  y: number;
}

export interface LayoutEdge {
  id: string;
  source: string;
  target: string;
  points: [Point, Point];
}

export interface Layout {
  nodes: Map<string, LayoutNode>;
  edges: LayoutEdge[];
  width: number;
  height: number;
}

export interface LayoutOptions {
  colGap?: number;
  rowGap?: number;
  margin?: number;
}

export function layeredLayout(
  vertices: VertexInfo[],
  edges: EdgeInfo[],
  opts: LayoutOptions = {},
): Layout {
  const colGap = opts.colGap ?? NODE_W + 56;
  const rowGap = opts.rowGap ?? NODE_H + 26;
  const margin = opts.margin ?? 24;

  const layers = new Map<number, string[]>();
  for (const v of vertices) {
    const bucket = layers.get(v.rank);
    if (bucket) bucket.push(v.id);
    else layers.set(v.rank, [v.id]);
  }

  const preds = new Map<string, string[]>();
  for (const e of edges) {
    const bucket = preds.get(e.target);
    if (bucket) bucket.push(e.source);
    else preds.set(e.target, [e.source]);
  }

  // one left-to-right sweep: order each column by the mean row of the
  // already-placed predecessors, falling back to payload order
  const row = new Map<string, number>();
  const ranks = [...layers.keys()].sort((a, b) => a - b);
  for (const rank of ranks) {
    const ids = layers.get(rank)!;
    const keyed = ids.map((id, i) => {
      const sources = (preds.get(id) ?? []).filter((s) => row.has(s));
      const mean = sources.length
        ? sources.reduce((acc, s) => acc + row.get(s)!, 0) / sources.length
        : i;
      return { id, mean, i };
    });
    keyed.sort((a, b) => a.mean - b.mean || a.i - b.i);
    keyed.forEach((k, slot) => row.set(k.id, slot));
  }

  const nodes = new Map<string, LayoutNode>();
  let maxLayer = 0;
  let maxRow = 0;
  for (const v of vertices) {
    const r = row.get(v.id) ?? 0;
    nodes.set(v.id, {
      id: v.id,
      x: margin + v.rank * colGap,
      y: margin + r * rowGap,
      layer: v.rank,
      row: r,
    });
    if (v.rank > maxLayer) maxLayer = v.rank;
    if (r > maxRow) maxRow = r;
  }

  const routed: LayoutEdge[] = edges.map((e) => {
    const a = nodes.get(e.source)!;
    const b = nodes.get(e.target)!;
    return {
      id: e.id,
      source: e.source,
      target: e.target,
      points: [
        { x: a.x + NODE_W, y: a.y + NODE_H / 2 },
        { x: b.x, y: b.y + NODE_H / 2 },
      ],
    };
  });

  return {
    nodes,
    edges: routed,
    width: margin * 2 + maxLayer * colGap + NODE_W,
    height: margin * 2 + maxRow * rowGap + NODE_H,
  };
}

export interface Box {
  x: number;
  y: number;
  width: number;
  height: number;
}

/** Bounding box around a candidate's members. Padding shrinks with nesting
 *  depth so a child region draws strictly inside its parent. */
export function regionBox(layout: Layout, members: string[], depth = 0): Box {
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const id of members) {
    const n = layout.nodes.get(id);
    if (!n) continue;
    if (n.x < minX) minX = n.x;
    if (n.y < minY) minY = n.y;
    if (n.x + NODE_W > maxX) maxX = n.x + NODE_W;
    if (n.y + NODE_H > maxY) maxY = n.y + NODE_H;
  }
  if (minX === Infinity) return { x: 0, y: 0, width: 0, height: 0 };
  const pad = Math.max(4, 16 - depth * 4);
  return {
    x: minX - pad,
    y: minY - pad,
    width: maxX - minX + 2 * pad,
    height: maxY - minY + 2 * pad,
  };
}
