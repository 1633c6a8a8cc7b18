// Progress dashboard: labeling effort and CMC per checkpoint, as plain data
// plus SVG polyline geometry (no chart library).

import { Report } from "./api.js";

export interface DashboardSeries {
  batches: number[];
  effortPercent: number[];
  cmc1: number[];
  cmc10: (number | null)[];
  map: number[];
}

export function buildSeries(report: Report): DashboardSeries {
  const rows = [...report.rows].sort((a, b) => a.checkpoint - b.checkpoint);
  return {
    batches: rows.map((r) => r.checkpoint),
    effortPercent: rows.map((r) => r.labeled_percent),
    cmc1: rows.map((r) => r.cmc[0] ?? 0),
    cmc10: rows.map((r) => (r.cmc.length >= 10 ? r.cmc[9] : null)),
    map: rows.map((r) => r.map),
  };
}

/** Map a series onto `width x height` SVG coordinates (y grows downward). */
export function polylinePoints(
  values: number[],
  width: number,
  height: number,
  yMax: number,
  pad = 4,
): string {
  if (values.length === 0) return "";
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const step = values.length > 1 ? innerW / (values.length - 1) : 0;
  return values
    .map((v, i) => {
      const x = pad + (values.length > 1 ? i * step : innerW / 2);
      const y = pad + innerH * (1 - Math.min(v, yMax) / yMax);
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    })
    .join(" ");
}

export function chartSvg(series: DashboardSeries, width = 360, height = 120): string {
  const cmcPts = polylinePoints(series.cmc1, width, height, 1.0);
  const effortPts = polylinePoints(series.effortPercent, width, height, 100.0);
  const cmc10Vals = series.cmc10.filter((v): v is number => v !== null);
  const cmc10Pts = cmc10Vals.length === series.cmc10.length
    ? polylinePoints(cmc10Vals, width, height, 1.0)
    : "";
  const dots = (pts: string, cls: string) =>
    pts
      .split(" ")
      .filter(Boolean)
      .map((p) => {
        const [x, y] = p.split(",");
        return `<circle cx="${x}" cy="${y}" r="2.5" class="${cls}"/>`;
      })
      .join("");
  return (
    `<svg viewBox="0 0 ${width} ${height}">` +
    `<polyline points="${effortPts}" class="line effort"/>` +
    dots(effortPts, "dot effort") +
    (cmc10Pts ? `<polyline points="${cmc10Pts}" class="line cmc10"/>` + dots(cmc10Pts, "dot cmc10") : "") +
    `<polyline points="${cmcPts}" class="line cmc1"/>` +
    dots(cmcPts, "dot cmc1") +
    `</svg>`
  );
}
