import { FigureError } from "./csv.js";

export type AxisScale = "log" | "linear";

export interface Axis {
  scale: AxisScale;
  label: string;
}

export interface Series {
  label: string;
  points: Array<[number, number]>;
  color: string;
  /** Dashed stroke — used for every reference overlay. */
  dashed?: boolean;
  /** Connect the points; otherwise markers only. */
  line?: boolean;
  /** Draw circular markers at the points. */
  markers?: boolean;
}

export interface Chart {
  title: string;
  subtitle?: string;
  x: Axis;
  y: Axis;
  series: Series[];
}

const WIDTH = 760;
const HEIGHT = 500;
const MARGIN = { left: 86, right: 24, top: 64, bottom: 58 };
const PLOT_W = WIDTH - MARGIN.left - MARGIN.right;
const PLOT_H = HEIGHT - MARGIN.top - MARGIN.bottom;

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Compact tick/legend number: plain within a readable range, otherwise
 * exponent notation; trailing zeros trimmed. */
export function formatNumber(x: number): string {
  if (x === 0) return "0";
  const magnitude = Math.abs(x);
  const text = magnitude >= 1e-3 && magnitude < 1e5
    ? x.toPrecision(4)
    : x.toExponential(2);
  return text
    .replace(/(\.\d*?)0+(?=e|$)/, "$1")
    .replace(/\.(?=e|$)/, "");
}

interface Mapper {
  (value: number): number;
  ticks: number[];
}

function linearTicks(lo: number, hi: number): number[] {
  const range = hi - lo;
  const raw = range / 5;
  const base = Math.pow(10, Math.floor(Math.log10(raw)));
  const step = [1, 2, 5, 10]
    .map((m) => m * base)
    .reduce((a, b) =>
      Math.abs(range / b - 5) < Math.abs(range / a - 5) ? b : a);
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / step) * step; t <= hi + 1e-12 * range;
       t += step) {
    ticks.push(Math.abs(t) < 1e-12 * range ? 0 : t);
  }
  return ticks;
}

function logTicks(lo: number, hi: number): number[] {
  const first = Math.ceil(Math.log10(lo) - 1e-9);
  const last = Math.floor(Math.log10(hi) + 1e-9);
  const decades: number[] = [];
  for (let e = first; e <= last; e += 1) decades.push(Math.pow(10, e));
  if (decades.length >= 2) return decades;
  // Less than one decade of span: fall back to 1-2-5 mantissa ticks.
  const ticks: number[] = [];
  for (let e = Math.floor(Math.log10(lo)); e <= last + 1; e += 1) {
    for (const m of [1, 2, 5]) {
      const t = m * Math.pow(10, e);
      if (t >= lo * 0.999 && t <= hi * 1.001) ticks.push(t);
    }
  }
  return ticks.length >= 2 ? ticks : [lo, hi];
}

function makeMapper(scale: AxisScale, values: number[], pixelLo: number,
                    pixelHi: number, axisName: string): Mapper {
  const usable = scale === "log"
    ? values.filter((v) => v > 0 && Number.isFinite(v))
    : values.filter((v) => Number.isFinite(v));
  if (usable.length === 0) {
    throw new FigureError(
      `no plottable values on the ${axisName} axis` +
      (scale === "log" ? " (log scale needs positive data)" : ""),
    );
  }
  let lo = Math.min(...usable);
  let hi = Math.max(...usable);
  if (lo === hi) {
    lo = scale === "log" ? lo / 2 : lo - 1;
    hi = scale === "log" ? hi * 2 : hi + 1;
  } else if (scale === "log") {
    const pad = Math.pow(hi / lo, 0.06);
    lo /= pad;
    hi *= pad;
  } else {
    const pad = (hi - lo) * 0.06;
    lo -= pad;
    hi += pad;
  }
  const fwd = scale === "log" ? Math.log10 : (v: number) => v;
  const a = fwd(lo);
  const b = fwd(hi);
  const mapper = ((value: number) =>
    pixelLo + ((fwd(value) - a) / (b - a)) * (pixelHi - pixelLo)) as Mapper;
  mapper.ticks = scale === "log" ? logTicks(lo, hi) : linearTicks(lo, hi);
  return mapper;
}

/** Assemble a complete standalone SVG document for the chart. */
export function renderSvg(chart: Chart): string {
  const xs = chart.series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = chart.series.flatMap((s) => s.points.map((p) => p[1]));
  const mapX = makeMapper(chart.x.scale, xs, MARGIN.left,
                          MARGIN.left + PLOT_W, "x");
  const mapY = makeMapper(chart.y.scale, ys, MARGIN.top + PLOT_H,
                          MARGIN.top, "y");

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" ` +
    `height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
    `font-family="Menlo, Consolas, monospace" font-size="13">`,
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`,
    `<text x="${WIDTH / 2}" y="26" text-anchor="middle" ` +
    `font-size="17" fill="#1a1a1a">${escapeXml(chart.title)}</text>`,
  );
  if (chart.subtitle) {
    parts.push(
      `<text x="${WIDTH / 2}" y="46" text-anchor="middle" ` +
      `fill="#555">${escapeXml(chart.subtitle)}</text>`,
    );
  }

  for (const t of mapX.ticks) {
    const px = mapX(t);
    parts.push(
      `<line x1="${px.toFixed(1)}" y1="${MARGIN.top}" ` +
      `x2="${px.toFixed(1)}" y2="${MARGIN.top + PLOT_H}" ` +
      `stroke="#e3e3e3"/>`,
      `<text x="${px.toFixed(1)}" y="${MARGIN.top + PLOT_H + 20}" ` +
      `text-anchor="middle" fill="#444">${formatNumber(t)}</text>`,
    );
  }
  for (const t of mapY.ticks) {
    const py = mapY(t);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${py.toFixed(1)}" ` +
      `x2="${MARGIN.left + PLOT_W}" y2="${py.toFixed(1)}" ` +
      `stroke="#e3e3e3"/>`,
      `<text x="${MARGIN.left - 8}" y="${(py + 4).toFixed(1)}" ` +
      `text-anchor="end" fill="#444">${formatNumber(t)}</text>`,
    );
  }
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${PLOT_W}" ` +
    `height="${PLOT_H}" fill="none" stroke="#666"/>`,
    `<text x="${MARGIN.left + PLOT_W / 2}" y="${HEIGHT - 14}" ` +
    `text-anchor="middle" fill="#1a1a1a">` +
    `${escapeXml(chart.x.label)}</text>`,
    `<text x="20" y="${MARGIN.top + PLOT_H / 2}" text-anchor="middle" ` +
    `transform="rotate(-90 20 ${MARGIN.top + PLOT_H / 2})" ` +
    `fill="#1a1a1a">${escapeXml(chart.y.label)}</text>`,
  );

  for (const series of chart.series) {
    const visible = series.points.filter(([px, py]) =>
      Number.isFinite(px) && Number.isFinite(py) &&
      (chart.x.scale !== "log" || px > 0) &&
      (chart.y.scale !== "log" || py > 0));
    const mapped = visible.map(([px, py]) =>
      [mapX(px), mapY(py)] as [number, number]);
    if (series.line !== false && mapped.length >= 2) {
      const path = mapped
        .map(([px, py]) => `${px.toFixed(1)},${py.toFixed(1)}`)
        .join(" ");
      parts.push(
        `<polyline points="${path}" fill="none" ` +
        `stroke="${series.color}" stroke-width="1.8"` +
        (series.dashed ? ` stroke-dasharray="7 5"` : "") + `/>`,
      );
    }
    if (series.markers) {
      for (const [px, py] of mapped) {
        parts.push(
          `<circle cx="${px.toFixed(1)}" cy="${py.toFixed(1)}" r="3.4" ` +
          `fill="${series.color}"/>`,
        );
      }
    }
  }

  chart.series.forEach((series, i) => {
    const ly = MARGIN.top + 16 + 19 * i;
    const lx = MARGIN.left + 14;
    parts.push(
      `<line x1="${lx}" y1="${ly - 4}" x2="${lx + 26}" y2="${ly - 4}" ` +
      `stroke="${series.color}" stroke-width="2"` +
      (series.dashed ? ` stroke-dasharray="7 5"` : "") + `/>`,
      `<text x="${lx + 32}" y="${ly}" fill="#333">` +
      `${escapeXml(series.label)}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n") + "\n";
}
