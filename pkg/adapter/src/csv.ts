/** CSV loading: numeric feature matrix plus a raw target column. */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export interface CsvTable {
  featureNames: string[];
  rows: number[][];
  /** Target values as parsed (numbers, or strings for labeled classes). */
  rawTargets: (number | string)[];
}

export function loadCsv(path: string, targetColumn: string): CsvTable {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch (err) {
    throw new Error(`cannot read dataset ${path}: ${err instanceof Error ? err.message : String(err)}`);
  }
  const parsed = Papa.parse<Record<string, unknown>>(text, {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`CSV parse error in ${path} (row ${e.row}): ${e.message}`);
  }
  const records = parsed.data;
  if (records.length === 0) {
    throw new Error(`dataset ${path} has no data rows`);
  }
  const columns = parsed.meta.fields ?? [];
  if (!columns.includes(targetColumn)) {
    throw new Error(
      `target column '${targetColumn}' not in ${path} (columns: ${columns.join(", ")})`);
  }
  const featureNames = columns.filter((c) => c !== targetColumn);
  if (featureNames.length === 0) {
    throw new Error(`dataset ${path} has no feature columns besides the target`);
  }

  const rows: number[][] = [];
  const rawTargets: (number | string)[] = [];
  records.forEach((rec, i) => {
    const row = featureNames.map((c) => {
      const v = rec[c];
      if (typeof v !== "number" || !Number.isFinite(v)) {
        throw new Error(
          `row ${i + 1}, column '${c}': expected a finite number, got ${JSON.stringify(v)}`);
      }
      return v;
    });
    const t = rec[targetColumn];
    if (t === null || t === undefined || (typeof t === "number" && !Number.isFinite(t))) {
      throw new Error(`row ${i + 1}: target '${targetColumn}' is missing or non-finite`);
    }
    rows.push(row);
    rawTargets.push(t as number | string);
  });
  return { featureNames, rows, rawTargets };
}

export interface EncodedTargets {
  /** Numeric training targets (0/1 for classification). */
  values: number[];
  /** For classification: the label mapped to 1, for reporting. */
  positiveLabel?: string;
}

/** Regression targets must be numeric; classification targets are mapped to
 * 0/1 (numeric targets must already be 0/1; string labels must form exactly
 * two classes, the lexicographically larger one counted as positive). */
export function encodeTargets(
  task: "regression" | "classification-probability",
  raw: (number | string)[],
): EncodedTargets {
  if (task === "regression") {
    const values = raw.map((t, i) => {
      if (typeof t !== "number") {
        throw new Error(`row ${i + 1}: regression target must be numeric, got ${JSON.stringify(t)}`);
      }
      return t;
    });
    return { values };
  }
  const labels = [...new Set(raw.map((t) => String(t)))].sort();
  if (labels.length !== 2) {
    throw new Error(
      `classification-probability needs exactly 2 classes, found ${labels.length}: ${labels.join(", ")}`);
  }
  if (raw.every((t) => typeof t === "number")) {
    if (!(labels[0] === "0" && labels[1] === "1")) {
      throw new Error(`numeric classification targets must be 0/1, found: ${labels.join(", ")}`);
    }
  }
  const positive = labels[1];
  return {
    values: raw.map((t) => (String(t) === positive ? 1 : 0)),
    positiveLabel: positive,
  };
}
