/** Cost panel model: a read-only view over the /cost payload.
 *
 *  Every figure the panel displays is String() of a number that exists in
 *  the response; nothing is summed, scaled or re-fitted here. The only
 *  client-side arithmetic is bar sizing, which is presentation.
 */

import type { CostPayload, CostRow } from "./types.js";

export interface GridRow {
  mechanism: string;
  cells: { bytes: number; gas: string; currency: string; fraction: number }[];
}

export interface RatioRow {
  name: string;
  values: { bytes: string; value: string }[];
}

export interface FitRow {
  mechanism: string;
  slope: string;
  intercept: string;
  r2: string;
}

export interface TwopcTextRow {
  n: string;
  phase1: string;
  phase2: string;
}

export class CostPanelModel {
  constructor(readonly payload: CostPayload) {}

  sizes(): number[] {
    return this.payload.sizes;
  }

  /** Mechanisms in payload row order, deduplicated. */
  mechanisms(): string[] {
    const seen = new Set<string>();
    const out: string[] = [];
    for (const row of this.payload.rows) {
      if (!seen.has(row.mechanism)) {
        seen.add(row.mechanism);
        out.push(row.mechanism);
      }
    }
    return out;
  }

  /** Without any selected regions only the baseline applies. */
  visibleMechanisms(hasSelection: boolean): string[] {
    const all = this.mechanisms();
    return hasSelection ? all : all.filter((m) => m === "no-xa");
  }

  cell(mechanism: string, bytes: number): CostRow | null {
    for (const row of this.payload.rows) {
      if (row.mechanism === mechanism && row.bytes === bytes) return row;
    }
    return null;
  }

  private maxGas(): number {
    let max = 0;
    for (const row of this.payload.rows) if (row.gas > max) max = row.gas;
    return max;
  }

  grid(hasSelection: boolean): GridRow[] {
    const max = this.maxGas();
    return this.visibleMechanisms(hasSelection).map((mechanism) => ({
      mechanism,
      cells: this.sizes().map((bytes) => {
        const row = this.cell(mechanism, bytes);
        return {
          bytes,
          gas: row ? String(row.gas) : "",
          currency: row ? String(row.currency) : "",
          fraction: row && max ? row.gas / max : 0,
        };
      }),
    }));
  }

  ratioRows(): RatioRow[] {
    return Object.entries(this.payload.ratios).map(([name, bySize]) => ({
      name,
      values: Object.entries(bySize).map(([bytes, value]) => ({
        bytes,
        value: String(value),
      })),
    }));
  }

  fitRows(): FitRow[] {
    return Object.entries(this.payload.fits).map(([mechanism, fit]) => ({
      mechanism,
      slope: String(fit.slope),
      intercept: String(fit.intercept),
      r2: String(fit.r2),
    }));
  }

  twopcRows(): TwopcTextRow[] {
    return this.payload.twopc.rows.map((row) => ({
      n: String(row.n),
      phase1: String(row.phase1),
      phase2: String(row.phase2),
    }));
  }

  phaseGap(): string {
    return String(this.payload.twopc.fits.phase_gap);
  }
}
