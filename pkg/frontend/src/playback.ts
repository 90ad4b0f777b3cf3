/** Trace playback.
 *
 *  An accepted run is replayed from the report's step log; a rejected run
 *  never produced steps, so its playback is the submitted trace with the
 *  failure position the server named pinned as a marker. Either way the
 *  cursor only walks a list the server already wrote.
 */

import type { ErrorInfo, RunReport, StepRow, TraceItem } from "./types.js";
import { rejectionDetail } from "./types.js";

export type EntryStatus = "done" | "accepted" | "rejected" | "unreached";

export interface PlaybackEntry {
  index: number;
  kind: string;
  label: string;
  /** vertex fired at this entry, "" when the step is not a firing */
  vertex: string;
  origin: string;
  status: EntryStatus;
}

export interface RejectionMark {
  index: number;
  origin: string;
  expected: string[];
  message: string;
}

function stepLabel(step: StepRow): string {
  switch (step.kind) {
    case "fire":
      return `fire ${step.vertex} via ${step.method} (gas ${step.gas})`;
    case "txn-begin":
      return `begin ${step.txn}`;
    case "txn-commit":
      return `commit ${step.txn} (gas ${step.gas})`;
    case "txn-abort":
      return `abort ${step.txn}`;
    case "2pc-prepare":
      return `prepare ${step.txn} -> [${(step.children ?? []).join(", ")}]`;
    case "2pc-commit":
      return `phase two ${step.txn} -> [${(step.children ?? []).join(", ")}]`;
    default:
      return `${step.kind} ${step.txn ?? step.vertex ?? ""}`.trim();
  }
}

export class PlaybackModel {
  cursor = -1;

  private constructor(
    readonly entries: PlaybackEntry[],
    readonly mark: RejectionMark | null,
    readonly report: RunReport | null,
  ) {}

  static fromReport(report: RunReport): PlaybackModel {
    const entries = report.steps.map((step, index) => ({
      index,
      kind: step.kind,
      label: stepLabel(step),
      vertex: step.kind === "fire" ? (step.vertex ?? "") : "",
      origin: "",
      status: "done" as EntryStatus,
    }));
    return new PlaybackModel(entries, null, report);
  }

  static fromRejection(trace: TraceItem[], error: ErrorInfo): PlaybackModel {
    const detail = rejectionDetail(error);
    const at = detail ? detail.failed_at : 0;
    const entries = trace.map((item, index) => ({
      index,
      kind: "submit",
      label: `${item.origin} by ${item.actor}`,
      vertex: item.origin,
      origin: item.origin,
      status: (index < at
        ? "accepted"
        : index === at
          ? "rejected"
          : "unreached") as EntryStatus,
    }));
    const mark: RejectionMark = {
      index: at,
      origin: detail ? detail.origin : "",
      expected: detail ? detail.expected : [],
      message: error.message,
    };
    const model = new PlaybackModel(entries, mark, null);
    model.cursor = at; // land on the rejected step immediately
    return model;
  }

  get length(): number {
    return this.entries.length;
  }

  current(): PlaybackEntry | null {
    return this.entries[this.cursor] ?? null;
  }

  seek(index: number): void {
    this.cursor = Math.max(-1, Math.min(index, this.entries.length - 1));
  }

  advance(): void {
    this.seek(this.cursor + 1);
  }

  back(): void {
    this.seek(this.cursor - 1);
  }

  atEnd(): boolean {
    return this.cursor >= this.entries.length - 1;
  }

  /** Vertices fired up to and including the cursor, for graph highlighting.
   *  A rejected step never fired, so it is excluded; the mark covers it. */
  firedVertices(): string[] {
    const out: string[] = [];
    for (let i = 0; i <= this.cursor && i < this.entries.length; i += 1) {
      const entry = this.entries[i];
      if (entry.vertex && (entry.status === "done" || entry.status === "accepted")) {
        out.push(entry.vertex);
      }
    }
    return out;
  }
}
