// Feature-bar fallback: render a d-dimensional vector as a strip of bars so
// image-free (synthetic) datasets stay annotatable.

export interface Bar {
  x: number;
  y: number;
  width: number;
  height: number;
  positive: boolean;
}

export function featureBars(values: number[], width: number, height: number, gap = 1): Bar[] {
  if (values.length === 0) return [];
  const peak = Math.max(...values.map((v) => Math.abs(v)));
  const scale = peak > 0 ? (height / 2) / peak : 0;
  const barWidth = Math.max((width - gap * (values.length - 1)) / values.length, 0.5);
  const mid = height / 2;
  return values.map((v, i) => {
    const h = Math.abs(v) * scale;
    return {
      x: i * (barWidth + gap),
      y: v >= 0 ? mid - h : mid,
      width: barWidth,
      height: h,
      positive: v >= 0,
    };
  });
}

export function barsToSvg(values: number[], width: number, height: number): string {
  const bars = featureBars(values, width, height);
  const rects = bars
    .map(
      (b) =>
        `<rect x="${b.x.toFixed(2)}" y="${b.y.toFixed(2)}" width="${b.width.toFixed(2)}" ` +
        `height="${Math.max(b.height, 0.5).toFixed(2)}" class="${b.positive ? "pos" : "neg"}"/>`,
    )
    .join("");
  return (
    `<svg viewBox="0 0 ${width} ${height}" preserveAspectRatio="none">` +
    `<line x1="0" y1="${height / 2}" x2="${width}" y2="${height / 2}" class="axis"/>` +
    rects +
    `</svg>`
  );
}
