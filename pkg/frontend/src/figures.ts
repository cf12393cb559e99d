import { basename, dirname, resolve } from "node:path";
import {
  FigureError, Table, columns, numberAt, readCsv, readJson,
} from "./csv.js";
import { AxisScale, Chart, Series, formatNumber, renderSvg } from "./svg.js";

export const FIGURE_KINDS = [
  "scaling-fit",
  "remainder-decay",
  "breakdown-ratio",
  "conservation-drift",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  inputs: {
    /** Data table for the figure's points. */
    csv: string;
    /** The run's JSON summary — the only source of reference slopes. */
    summary: string;
    /** Optional config echo (tolerance overlays for drift figures). */
    config?: string;
  };
  /** Axis scale overrides; each kind carries sensible defaults. */
  axes?: { x?: AxisScale; y?: AxisScale };
  /** Dotted path into the summary JSON for the reference slope. The
   * value is always read from the file at render time. */
  reference?: { source: string };
  title?: string;
  /** Output path, relative to the spec file; defaults to the spec's
   * basename with an .svg extension. */
  output?: string;
}

const DEFAULT_REFERENCE: Record<FigureKind, string | null> = {
  "scaling-fit": "predicted_slope",
  "remainder-decay": "lambda_fit",
  "breakdown-ratio": "fits.ratio-sigma.slope",
  "conservation-drift": null,
};

const DEFAULT_AXES: Record<FigureKind, { x: AxisScale; y: AxisScale }> = {
  "scaling-fit": { x: "log", y: "log" },
  "remainder-decay": { x: "linear", y: "log" },
  "breakdown-ratio": { x: "log", y: "log" },
  "conservation-drift": { x: "linear", y: "log" },
};

const POINT_COLORS = ["#1f5fa8", "#b3501a", "#2c7a4b", "#7a2c6e"];
const FIT_COLOR = "#444444";
const REFERENCE_COLOR = "#c02020";

/** Load and validate a figure spec file. */
export function loadSpec(path: string): { spec: FigureSpec; dir: string } {
  const doc = readJson(path);
  if (doc === null || typeof doc !== "object" || Array.isArray(doc)) {
    throw new FigureError(`figure spec must be a JSON object: ${path}`);
  }
  const spec = doc as Partial<FigureSpec>;
  if (!spec.kind || !(FIGURE_KINDS as readonly string[]).includes(spec.kind)) {
    throw new FigureError(
      `figure kind must be one of ${FIGURE_KINDS.join(", ")}, got ` +
      `${JSON.stringify(spec.kind)} in ${path}`,
    );
  }
  if (!spec.inputs || typeof spec.inputs.csv !== "string" ||
      typeof spec.inputs.summary !== "string") {
    throw new FigureError(
      `figure spec needs inputs.csv and inputs.summary paths: ${path}`,
    );
  }
  return { spec: spec as FigureSpec, dir: dirname(resolve(path)) };
}

interface Loaded {
  table: Table;
  summary: unknown;
  summaryPath: string;
  config: unknown | null;
  configPath: string | null;
}

function loadInputs(spec: FigureSpec, dir: string): Loaded {
  const csvPath = resolve(dir, spec.inputs.csv);
  const summaryPath = resolve(dir, spec.inputs.summary);
  const configPath = spec.inputs.config
    ? resolve(dir, spec.inputs.config) : null;
  return {
    table: readCsv(csvPath),
    summary: readJson(summaryPath),
    summaryPath,
    config: configPath ? readJson(configPath) : null,
    configPath,
  };
}

function referenceSlope(spec: FigureSpec, loaded: Loaded): number | null {
  const source = spec.reference?.source ?? DEFAULT_REFERENCE[spec.kind];
  if (source === null) return null;
  return numberAt(loaded.summary, source, loaded.summaryPath);
}

/** Straight power-law guide through an anchor point on log-log axes. */
function powerGuide(anchor: [number, number], slope: number,
                    xRange: [number, number]): Array<[number, number]> {
  const [x0, y0] = anchor;
  return xRange.map((x) => [x, y0 * Math.pow(x / x0, slope)]);
}

function buildScalingFit(spec: FigureSpec, loaded: Loaded): Chart {
  const summary = loaded.summary as Record<string, unknown>;
  const mode = summary["mode"] === "eps" ? "eps" : "sigma";
  const [eps, sigma, value] = columns(loaded.table,
                                      ["eps", "sigma", "value"]) as
    [number[], number[], number[]];
  const xData = mode === "eps" ? eps : sigma;
  const points = xData.map((x, i) =>
    [x, value[i] as number] as [number, number]);

  const slope = numberAt(loaded.summary, "fit.slope", loaded.summaryPath);
  const intercept = numberAt(loaded.summary, "fit.intercept",
                             loaded.summaryPath);
  const xLo = Math.min(...xData);
  const xHi = Math.max(...xData);
  const fitted: Array<[number, number]> = [xLo, xHi].map((x) =>
    [x, Math.exp(intercept + slope * Math.log(x))]);

  const series: Series[] = [
    { label: "measured", points, color: POINT_COLORS[0] as string,
      line: false, markers: true },
    { label: `fitted slope ${formatNumber(slope)}`, points: fitted,
      color: FIT_COLOR },
  ];
  const ref = referenceSlope(spec, loaded);
  if (ref !== null) {
    series.push({
      label: `reference slope ${formatNumber(ref)}`,
      points: powerGuide(points[0] as [number, number], ref, [xLo, xHi]),
      color: REFERENCE_COLOR, dashed: true,
    });
  }
  return {
    title: spec.title ?? "free-energy scaling fit",
    subtitle: `${mode}-power fit over ${points.length} schedule points`,
    x: { scale: "log", label: mode === "eps" ? "amplitude" : "dilation" },
    y: { scale: "log", label: "free-energy integral" },
    series,
  };
}

function buildRemainderDecay(spec: FigureSpec, loaded: Loaded): Chart {
  const [eps, order, remainder] = columns(loaded.table,
                                          ["eps", "N", "R"]) as
    [number[], number[], number[]];
  const groups = new Map<number, Array<[number, number]>>();
  eps.forEach((e, i) => {
    if (!groups.has(e)) groups.set(e, []);
    groups.get(e)!.push([order[i] as number, remainder[i] as number]);
  });

  const series: Series[] = [];
  let colorAt = 0;
  for (const [e, pts] of groups) {
    series.push({
      label: `remainder at eps=${formatNumber(e)}`, points: pts,
      color: POINT_COLORS[colorAt % POINT_COLORS.length] as string,
      markers: true,
    });
    colorAt += 1;
  }

  const ref = referenceSlope(spec, loaded);
  if (ref !== null && groups.size > 0) {
    const [e, pts] = groups.entries().next().value as
      [number, Array<[number, number]>];
    const rate = e * ref;
    const [n0, r0] = pts[0] as [number, number];
    const maxN = Math.max(...pts.map((p) => p[0]));
    const guide: Array<[number, number]> = [];
    for (let n = n0; n <= maxN; n += 1) {
      guide.push([n, r0 * Math.pow(rate, n - n0)]);
    }
    series.push({
      label: `reference decay (eps*rate = ${formatNumber(rate)})`,
      points: guide, color: REFERENCE_COLOR, dashed: true,
    });
  }
  return {
    title: spec.title ?? "series remainder decay",
    subtitle: "measured remainders against the fitted geometric rate",
    x: { scale: spec.axes?.x ?? "linear", label: "truncation order" },
    y: { scale: spec.axes?.y ?? "log", label: "remainder" },
    series,
  };
}

function buildBreakdownRatio(spec: FigureSpec, loaded: Loaded): Chart {
  const [sigma, ratio] = columns(loaded.table, ["sigma", "ratio"]) as
    [number[], number[]];
  const points = sigma.map((s, i) =>
    [s, ratio[i] as number] as [number, number]);
  const series: Series[] = [
    { label: "measured ratio", points, color: POINT_COLORS[0] as string,
      markers: true },
  ];
  const ref = referenceSlope(spec, loaded);
  if (ref !== null) {
    series.push({
      label: `reference slope ${formatNumber(ref)}`,
      points: powerGuide(points[0] as [number, number], ref,
                         [Math.min(...sigma), Math.max(...sigma)]),
      color: REFERENCE_COLOR, dashed: true,
    });
  }
  return {
    title: spec.title ?? "breakdown ratio growth",
    subtitle: `${points.length} schedule points`,
    x: { scale: spec.axes?.x ?? "log", label: "dilation" },
    y: { scale: spec.axes?.y ?? "log", label: "lower-bound ratio" },
    series,
  };
}

function buildConservationDrift(spec: FigureSpec, loaded: Loaded): Chart {
  const [time, mass, energy] = columns(loaded.table,
                                       ["time", "mass", "energy"]) as
    [number[], number[], number[]];
  const drift = (values: number[]): Array<[number, number]> => {
    const start = values[0] as number;
    const out: Array<[number, number]> = [];
    values.forEach((v, i) => {
      const rel = Math.abs(v - start) / Math.abs(start);
      if (rel > 0) out.push([time[i] as number, rel]);
    });
    return out;
  };
  const series: Series[] = [
    { label: "mass drift", points: drift(mass),
      color: POINT_COLORS[0] as string, markers: true },
    { label: "energy drift", points: drift(energy),
      color: POINT_COLORS[1] as string, markers: true },
  ];
  if (loaded.config !== null && loaded.configPath !== null) {
    const tLo = Math.min(...time);
    const tHi = Math.max(...time);
    for (const [key, label] of [["tol_mass", "mass tolerance"],
                                ["tol_energy", "energy tolerance"]] as
         Array<[string, string]>) {
      const tol = numberAt(loaded.config, key, loaded.configPath);
      series.push({
        label: `${label} ${formatNumber(tol)}`,
        points: [[tLo, tol], [tHi, tol]],
        color: REFERENCE_COLOR, dashed: true,
      });
    }
  }
  return {
    title: spec.title ?? "conservation drift",
    subtitle: "relative drift of the conserved functionals",
    x: { scale: spec.axes?.x ?? "linear", label: "time" },
    y: { scale: spec.axes?.y ?? "log", label: "relative drift" },
    series,
  };
}

const BUILDERS: Record<FigureKind,
                       (spec: FigureSpec, loaded: Loaded) => Chart> = {
  "scaling-fit": buildScalingFit,
  "remainder-decay": buildRemainderDecay,
  "breakdown-ratio": buildBreakdownRatio,
  "conservation-drift": buildConservationDrift,
};

/** Render one figure spec to an SVG document string. */
export function renderFigure(spec: FigureSpec, dir: string): string {
  const loaded = loadInputs(spec, dir);
  const chart = BUILDERS[spec.kind](spec, loaded);
  if (spec.axes?.x) chart.x.scale = spec.axes.x;
  if (spec.axes?.y) chart.y.scale = spec.axes.y;
  return renderSvg(chart);
}

/** The output path a spec renders to (never an input path). */
export function outputPath(spec: FigureSpec, specPath: string,
                           outDir: string | null): string {
  const dir = dirname(resolve(specPath));
  let out = spec.output
    ? resolve(dir, spec.output)
    : resolve(dir, basename(specPath).replace(/\.json$/, "") + ".svg");
  if (outDir !== null) {
    out = resolve(outDir, basename(out));
  }
  for (const input of [spec.inputs.csv, spec.inputs.summary,
                       spec.inputs.config]) {
    if (input && resolve(dir, input) === out) {
      throw new FigureError(
        `output ${out} would overwrite an input file`,
      );
    }
  }
  return out;
}
