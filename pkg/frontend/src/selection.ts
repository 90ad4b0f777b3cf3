/** Selection state for transaction candidates.
 *
 *  The model records which regions the user has clicked and what the server
 *  last said about them; it never validates combinations itself. Every change
 *  is pushed through PUT /plan, and the acknowledged plan (or the rejection
 *  that came back) is exactly what the view shows.
 */

import type { Candidate, ErrorInfo, PlanEcho, PlanInfo, PlanRequest } from "./types.js";

export interface CandidateRow {
  candidate: Candidate;
  depth: number;
  children: string[];
}

export class SelectionModel {
  readonly byId = new Map<string, Candidate>();
  private readonly childrenOf = new Map<string, string[]>();
  private selected = new Set<string>();

  /** last plan the server acknowledged, null before the first PUT */
  acked: PlanInfo | null = null;
  /** last rejection, cleared by the next successful PUT */
  problem: ErrorInfo | null = null;

  constructor(candidates: Candidate[]) {
    for (const c of candidates) {
      this.byId.set(c.id, c);
      const bucket = this.childrenOf.get(c.parent);
      if (bucket) bucket.push(c.id);
      else this.childrenOf.set(c.parent, [c.id]);
    }
  }

  ids(): string[] {
    return [...this.byId.keys()];
  }

  roots(): string[] {
    return this.childrenOf.get("") ?? [];
  }

  children(id: string): string[] {
    return this.childrenOf.get(id) ?? [];
  }

  depth(id: string): number {
    let d = 0;
    let cur = this.byId.get(id);
    while (cur && cur.parent) {
      d += 1;
      cur = this.byId.get(cur.parent);
    }
    return d;
  }

  isSelected(id: string): boolean {
    return this.selected.has(id);
  }

  /** Direct children offered for nested selection once a region is picked. */
  subSelection(id: string): string[] {
    return this.isSelected(id) ? this.children(id) : [];
  }

  /** Flip one region and return the new desired selection. Nothing cascades:
   *  what a child means without its parent is the server's call, not ours. */
  toggle(id: string): string[] {
    if (this.selected.has(id)) this.selected.delete(id);
    else if (this.byId.has(id)) this.selected.add(id);
    return this.selection();
  }

  selection(): string[] {
    return [...this.selected].sort();
  }

  planBody(mechanism: string, crypto = false): PlanRequest {
    return { selection: this.selection(), mechanism, crypto };
  }

  accept(echo: PlanEcho): void {
    this.acked = echo.plan;
    this.problem = null;
    // the echo is the authoritative selection from here on
    this.selected = new Set(echo.plan.selection);
  }

  reject(error: ErrorInfo): void {
    this.problem = error;
    this.selected = new Set(this.acked ? this.acked.selection : []);
  }

  /** child -> parent pairs from the acknowledged plan. */
  nesting(): Record<string, string> {
    return this.acked ? this.acked.nesting : {};
  }

  /** Candidates in depth-first forest order, for rendering as a tree. */
  rows(): CandidateRow[] {
    const out: CandidateRow[] = [];
    const visit = (id: string, depth: number) => {
      const candidate = this.byId.get(id)!;
      out.push({ candidate, depth, children: this.children(id) });
      for (const child of this.children(id)) visit(child, depth + 1);
    };
    for (const root of this.roots()) visit(root, 0);
    return out;
  }
}
