import { readFileSync } from "node:fs";

/** Raised for any malformed or unusable figure input. */
export class FigureError extends Error {}

export interface Table {
  path: string;
  header: string[];
  rows: string[][];
}

/** Read a comma-separated table written by the simulation CLI.
 *
 * The emitters never quote cells, so a plain split is exact. A file with
 * no data rows is rejected by name, matching the renderer's contract.
 */
export function readCsv(path: string): Table {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch {
    throw new FigureError(`input file not found: ${path}`);
  }
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length <= 1) {
    throw new FigureError(`empty CSV: ${path}`);
  }
  const header = (lines[0] as string).split(",");
  const rows = lines.slice(1).map((line) => line.split(","));
  return { path, header, rows };
}

/** Extract named numeric columns, reporting every missing name at once. */
export function columns(table: Table, names: string[]): number[][] {
  const missing = names.filter((name) => !table.header.includes(name));
  if (missing.length > 0) {
    throw new FigureError(
      `missing column(s) ${missing.join(", ")} in ${table.path}`,
    );
  }
  return names.map((name) => {
    const at = table.header.indexOf(name);
    return table.rows.map((row) => Number(row[at] ?? NaN));
  });
}

/** Parse a JSON artifact (summary or config echo) emitted by a run. */
export function readJson(path: string): unknown {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch {
    throw new FigureError(`input file not found: ${path}`);
  }
  try {
    return JSON.parse(text);
  } catch {
    throw new FigureError(`not valid JSON: ${path}`);
  }
}

/** Follow a dotted path ("fits.ratio-sigma.slope") into a parsed JSON
 * document; the value must be a finite number. */
export function numberAt(doc: unknown, dotted: string, file: string): number {
  let node: unknown = doc;
  for (const key of dotted.split(".")) {
    if (node === null || typeof node !== "object" ||
        !(key in (node as Record<string, unknown>))) {
      throw new FigureError(
        `reference path ${dotted} not found in ${file}`,
      );
    }
    node = (node as Record<string, unknown>)[key];
  }
  if (typeof node !== "number" || !Number.isFinite(node)) {
    throw new FigureError(
      `reference path ${dotted} in ${file} is not a finite number`,
    );
  }
  return node;
}
