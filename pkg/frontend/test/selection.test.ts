import { beforeEach, describe, expect, it } from "vitest";

import { SelectionModel } from "../src/selection.js";
import type { CandidatesPayload, ErrorBody, PlanEcho } from "../src/types.js";
import { fixture } from "./util.js";

const payload = fixture<CandidatesPayload>("candidates.json");
const nestedEcho = fixture<PlanEcho>("plan-nested.json");
const s5Echo = fixture<PlanEcho>("plan-s5.json");
const planError = fixture<ErrorBody>("plan-error.json");

describe("SelectionModel", () => {
  let model: SelectionModel;

  beforeEach(() => {
    model = new SelectionModel(payload.candidates);
  });

  it("lists every candidate the server sent", () => {
    expect(model.ids()).toHaveLength(10);
    expect(new Set(model.ids())).toEqual(
      new Set(payload.candidates.map((c) => c.id)),
    );
  });

  it("renders the forest as one depth-first tree", () => {
    const rows = model.rows();
    expect(rows).toHaveLength(10);
    expect(rows[0].candidate.id).toBe("S7");
    expect(rows[0].depth).toBe(0);
    const depthOf = new Map(rows.map((r) => [r.candidate.id, r.depth]));
    for (const c of payload.candidates) {
      if (c.parent) expect(depthOf.get(c.id)).toBe(depthOf.get(c.parent)! + 1);
      else expect(depthOf.get(c.id)).toBe(0);
    }
  });

  it("offers sub-selection only while the region is selected", () => {
    expect(model.subSelection("S5")).toEqual([]);
    model.toggle("S5");
    expect(model.subSelection("S5").sort()).toEqual(["S1", "S2"]);
    model.toggle("S5");
    expect(model.subSelection("S5")).toEqual([]);
  });

  it("collects intent without cascading", () => {
    model.toggle("S5");
    model.toggle("S1");
    model.toggle("S2");
    expect(model.selection()).toEqual(["S1", "S2", "S5"]);
    // dropping the parent leaves the children: their meaning is for the
    // server to decide on the next PUT
    model.toggle("S5");
    expect(model.selection()).toEqual(["S1", "S2"]);
  });

  it("builds the plan body from the current intent", () => {
    model.toggle("S5");
    expect(model.planBody("sc-2m")).toEqual({
      selection: ["S5"],
      mechanism: "sc-2m",
      crypto: false,
    });
  });

  it("adopts the acknowledged plan as the selection", () => {
    model.toggle("S5");
    model.accept(nestedEcho);
    expect(model.selection()).toEqual(nestedEcho.plan.selection);
    expect(model.nesting()).toEqual({ S1: "S5", S2: "S5" });
    expect(model.problem).toBeNull();
  });

  it("rolls intent back to the last ack on rejection", () => {
    model.toggle("S5");
    model.accept(s5Echo);
    model.toggle("S3");
    model.reject(planError.error);
    expect(model.selection()).toEqual(s5Echo.plan.selection);
    expect(model.problem?.code).toBe("PlanRegionUnknown");
    expect(model.problem?.detail).toEqual(["S99"]);
  });

  it("clears the recorded problem on the next ack", () => {
    model.reject(planError.error);
    expect(model.problem).not.toBeNull();
    model.accept(s5Echo);
    expect(model.problem).toBeNull();
  });
});
