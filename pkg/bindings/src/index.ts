/**
 * Thin bindings to the `scpc` command-line tool.
 *
 * Every function marshals plain arrays into a temporary CSV, invokes the CLI,
 * and returns the parsed JSON payload untouched. No numerical work happens on
 * this side, so binding output is field-for-field identical to what the CLI
 * prints for the same inputs and seed.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Command used to reach the CLI; override via the SCPC_CLI env variable. */
const CLI = process.env.SCPC_CLI ?? "scpc";
const DEFAULT_SEED = 20210201;

export class ScpcBindingError extends Error {
  constructor(
    message: string,
    readonly exitCode: number | null = null,
    readonly stderr = "",
  ) {
    super(message);
    this.name = "ScpcBindingError";
  }
}

export interface ScpcIntervalRecord {
  mean: number;
  sigma_hat: number;
  q: number;
  cv: number;
  ci: [number, number];
  c0: number;
  rho0: number;
  alpha: number;
  se: number;
  diagnostics: Record<string, unknown>;
}

export interface RegressionScoresRecord {
  beta_hat: number;
  x_tilde_var: number;
  scores: number[];
  interval: ScpcIntervalRecord;
}

export interface CalibrateRecord {
  c0: number;
  rho_curve: Array<{ c: number; rho_bar: number }>;
}

export interface RobustnessRecord {
  q: number;
  cv: number;
  c0: number;
  rho0: number;
  rho_lower: number;
  rho_upper: number;
  worst_margin: number;
  worst_theta: Record<string, unknown>;
  thetas: Array<Record<string, unknown>>;
}

export interface ScpcOptions {
  rho0?: number;
  alpha?: number;
  family?: string;
  q?: number;
  qMax?: number;
  seed?: number;
}

export interface CertifyOptions {
  alpha?: number;
  families?: string[];
  qMax?: number;
  gridPoints?: number;
  seed?: number;
}

interface CliRun {
  payload: Record<string, any>;
}

function checkCoords(coords: number[][], n?: number): number {
  if (!Array.isArray(coords) || coords.length < 2 || !Array.isArray(coords[0])) {
    throw new ScpcBindingError(
      `coords must be an array of [n][d] rows with n >= 2, got length ${coords?.length}`,
    );
  }
  const d = coords[0].length;
  if (d < 1) {
    throw new ScpcBindingError("coords rows must have at least one column");
  }
  for (const row of coords) {
    if (row.length !== d) {
      throw new ScpcBindingError(
        `coords rows must all have ${d} columns (expected shape [n][${d}])`,
      );
    }
  }
  if (n !== undefined && coords.length !== n) {
    throw new ScpcBindingError(
      `coords has ${coords.length} rows but the outcome has ${n} (expected shape [${n}][${d}])`,
    );
  }
  return d;
}

function writeCsv(dir: string, columns: Record<string, number[]>): string {
  const names = Object.keys(columns);
  const n = columns[names[0]].length;
  for (const name of names) {
    if (columns[name].length !== n) {
      throw new ScpcBindingError(`column ${name} has length ${columns[name].length}, expected ${n}`);
    }
  }
  const lines = [names.join(",")];
  for (let i = 0; i < n; i++) {
    lines.push(names.map((name) => String(columns[name][i])).join(","));
  }
  const path = join(dir, "data.csv");
  writeFileSync(path, lines.join("\n") + "\n", "utf-8");
  return path;
}

function runCli(args: string[]): CliRun {
  let stdout: string;
  try {
    stdout = execFileSync(CLI, args, { encoding: "utf-8", maxBuffer: 64 * 1024 * 1024 });
  } catch (err: any) {
    if (err.code === "ENOENT") {
      throw new ScpcBindingError(
        `could not find the '${CLI}' executable; install the Python package or set SCPC_CLI`,
      );
    }
    const stderr = err.stderr?.toString() ?? "";
    throw new ScpcBindingError(
      `scpc exited with code ${err.status}: ${stderr.trim()}`,
      err.status ?? null,
      stderr,
    );
  }
  return { payload: JSON.parse(stdout) };
}

function coordColumns(coords: number[][]): Record<string, number[]> {
  const d = coords[0].length;
  const out: Record<string, number[]> = {};
  for (let j = 0; j < d; j++) {
    out[`s${j + 1}`] = coords.map((row) => row[j]);
  }
  return out;
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "scpc-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function commonFlags(opts: ScpcOptions | CertifyOptions): string[] {
  const flags: string[] = [];
  if ("rho0" in opts && opts.rho0 !== undefined) flags.push("--rho0", String(opts.rho0));
  if (opts.alpha !== undefined) flags.push("--alpha", String(opts.alpha));
  if ("family" in opts && opts.family !== undefined) flags.push("--family", opts.family);
  if (opts.qMax !== undefined) flags.push("--q-max", String(opts.qMax));
  flags.push("--seed", String(opts.seed ?? DEFAULT_SEED));
  return flags;
}

/** Confidence interval for the mean of spatially indexed outcomes. */
export function scpcInterval(
  y: number[],
  coords: number[][],
  options: ScpcOptions = {},
): ScpcIntervalRecord {
  const d = checkCoords(coords, y.length);
  return withTempDir((dir) => {
    const csv = writeCsv(dir, { ...coordColumns(coords), y });
    const args = [
      "estimate",
      "--data", csv,
      "--y-col", "y",
      "--coord-cols", Array.from({ length: d }, (_, j) => `s${j + 1}`).join(","),
      ...commonFlags(options),
    ];
    if (options.q !== undefined) args.push("--q", String(options.q));
    const { payload } = runCli(args);
    return payload.result as ScpcIntervalRecord;
  });
}

/** Persistence parameter matching a target average pairwise correlation. */
export function calibrateC0(
  coords: number[][],
  rho0: number,
  family = "exponential",
  seed: number = DEFAULT_SEED,
): CalibrateRecord {
  const d = checkCoords(coords);
  return withTempDir((dir) => {
    const csv = writeCsv(dir, coordColumns(coords));
    const { payload } = runCli([
      "calibrate",
      "--data", csv,
      "--coord-cols", Array.from({ length: d }, (_, j) => `s${j + 1}`).join(","),
      "--rho0", String(rho0),
      "--family", family,
      "--seed", String(seed),
    ]);
    return payload.result as CalibrateRecord;
  });
}

/**
 * Score transformation for slope inference in a linear regression, plus the
 * confidence interval for the slope computed from those scores.
 */
export function regressionScores(
  w: number[],
  x: number[],
  coords: number[][],
  controls: number[][] = [],
  options: ScpcOptions = {},
): RegressionScoresRecord {
  const d = checkCoords(coords, w.length);
  if (x.length !== w.length) {
    throw new ScpcBindingError(`x has length ${x.length}, expected ${w.length}`);
  }
  return withTempDir((dir) => {
    const columns: Record<string, number[]> = { ...coordColumns(coords), y: w, x };
    const names: string[] = [];
    controls.forEach((col, j) => {
      if (col.length !== w.length) {
        throw new ScpcBindingError(`control ${j + 1} has length ${col.length}, expected ${w.length}`);
      }
      const name = `z${j + 1}`;
      columns[name] = col;
      names.push(name);
    });
    const csv = writeCsv(dir, columns);
    const args = [
      "estimate",
      "--data", csv,
      "--y-col", "y",
      "--coord-cols", Array.from({ length: d }, (_, j) => `s${j + 1}`).join(","),
      "--x-col", "x",
      ...commonFlags(options),
    ];
    if (names.length) args.push("--controls", names.join(","));
    const { payload } = runCli(args);
    return {
      beta_hat: payload.regression.beta_hat,
      x_tilde_var: payload.regression.x_tilde_var,
      scores: payload.regression.scores,
      interval: payload.result as ScpcIntervalRecord,
    };
  });
}

/** Matern-family robustness certificate for a design. */
export function maternRobustRange(
  coords: number[][],
  rho0: number,
  options: CertifyOptions = {},
): RobustnessRecord {
  const d = checkCoords(coords);
  return withTempDir((dir) => {
    const csv = writeCsv(dir, coordColumns(coords));
    const args = [
      "certify",
      "--data", csv,
      "--coord-cols", Array.from({ length: d }, (_, j) => `s${j + 1}`).join(","),
      "--rho0", String(rho0),
      ...commonFlags(options),
    ];
    if (options.families) args.push("--families", options.families.join(","));
    if (options.gridPoints !== undefined) args.push("--grid-points", String(options.gridPoints));
    const { payload } = runCli(args);
    return payload.result as RobustnessRecord;
  });
}
