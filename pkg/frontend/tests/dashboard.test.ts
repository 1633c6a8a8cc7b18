import { describe, expect, it } from "vitest";

import { Report } from "../src/api.js";
import { buildSeries, chartSvg, polylinePoints } from "../src/dashboard.js";

const report: Report = {
  session_id: "s",
  rows: [
    { checkpoint: 2, labeled_pairs: 160, labeled_percent: 10.0, cmc: [0.7, 0.8], map: 0.75, excluded_probes: 0 },
    { checkpoint: 1, labeled_pairs: 100, labeled_percent: 6.2, cmc: [0.5, 0.6], map: 0.55, excluded_probes: 0 },
  ],
};

describe("dashboard series", () => {
  it("orders rows by checkpoint", () => {
    const s = buildSeries(report);
    expect(s.batches).toEqual([1, 2]);
    expect(s.cmc1).toEqual([0.5, 0.7]);
    expect(s.effortPercent).toEqual([6.2, 10.0]);
  });

  it("single checkpoint gives a single-point series", () => {
    const s = buildSeries({ session_id: "s", rows: [report.rows[1]] });
    expect(s.batches).toEqual([1]);
    expect(s.cmc1).toEqual([0.5]);
    const pts = polylinePoints(s.cmc1, 100, 50, 1.0);
    expect(pts.split(" ")).toHaveLength(1);
  });

  it("cmc10 is null when the curve is shorter than 10 ranks", () => {
    const s = buildSeries(report);
    expect(s.cmc10).toEqual([null, null]);
  });

  it("does not mutate its input and survives a JSON round trip", () => {
    const copy = JSON.parse(JSON.stringify(report)) as Report;
    const a = buildSeries(copy);
    expect(copy).toEqual(report);
    const b = buildSeries(JSON.parse(JSON.stringify(copy)) as Report);
    expect(a).toEqual(b);
  });

  it("maps values into the padded viewport", () => {
    const pts = polylinePoints([0.0, 1.0], 100, 50, 1.0, 5);
    const [p0, p1] = pts.split(" ").map((p) => p.split(",").map(Number));
    expect(p0[0]).toBeCloseTo(5);
    expect(p0[1]).toBeCloseTo(45); // zero sits at the bottom of the viewport
    expect(p1[0]).toBeCloseTo(95);
    expect(p1[1]).toBeCloseTo(5); // max sits at the top
  });

  it("renders one polyline per series plus markers", () => {
    const svg = chartSvg(buildSeries(report));
    expect(svg).toContain("class=\"line cmc1\"");
    expect(svg).toContain("class=\"line effort\"");
    expect((svg.match(/<circle/g) ?? []).length).toBe(4); // 2 points x 2 series
  });
});
