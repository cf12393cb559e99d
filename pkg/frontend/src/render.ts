#!/usr/bin/env node
/** Batch figure renderer: `render --spec <file> [--spec <file> ...]
 *  [--out <dir>]`. Each spec file produces one SVG; paths inside a
 *  spec resolve against the spec's own directory. Rendering reads the
 *  run artifacts and never modifies them. */
import { writeFileSync } from "node:fs";
import { FigureError } from "./csv.js";
import { loadSpec, outputPath, renderFigure } from "./figures.js";

const USAGE =
  "usage: render --spec <figure.json> [--spec <figure.json> ...] " +
  "[--out <dir>]";

export function main(argv: string[]): number {
  const specPaths: string[] = [];
  let outDir: string | null = null;
  for (let i = 0; i < argv.length; i += 1) {
    const arg = argv[i];
    if (arg === "--spec") {
      const value = argv[i + 1];
      if (value === undefined) {
        process.stderr.write("--spec needs a file argument\n");
        return 1;
      }
      specPaths.push(value);
      i += 1;
    } else if (arg === "--out") {
      const value = argv[i + 1];
      if (value === undefined) {
        process.stderr.write("--out needs a directory argument\n");
        return 1;
      }
      outDir = value;
      i += 1;
    } else if (arg === "--help" || arg === "-h") {
      process.stdout.write(USAGE + "\n");
      return 0;
    } else {
      process.stderr.write(`unknown argument: ${arg}\n${USAGE}\n`);
      return 1;
    }
  }
  if (specPaths.length === 0) {
    process.stderr.write(USAGE + "\n");
    return 1;
  }
  for (const specPath of specPaths) {
    try {
      const { spec, dir } = loadSpec(specPath);
      const svg = renderFigure(spec, dir);
      const out = outputPath(spec, specPath, outDir);
      writeFileSync(out, svg, "utf8");
      process.stdout.write(`wrote ${out}\n`);
    } catch (err) {
      const message = err instanceof FigureError
        ? err.message : String(err);
      process.stderr.write(`error: ${message}\n`);
      return 1;
    }
  }
  return 0;
}

process.exitCode = main(process.argv.slice(2));
