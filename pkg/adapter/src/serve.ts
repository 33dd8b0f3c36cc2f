/** Configuration → trained model, ready for the stdio protocol loop. */

import { basename } from "node:path";
import { encodeTargets, loadCsv } from "./csv.js";
import { trainExtraTrees, trainKernelLogistic } from "./models.js";
import type { PredictModel } from "./protocol.js";
import { Rng } from "./rng.js";

export type Task = "regression" | "classification-probability";
export type ModelKind = "extra-trees" | "kernel-logistic";

export interface AdapterConfig {
  dataset: string;
  targetColumn: string;
  task: Task;
  modelKind: ModelKind;
  /** Fraction of rows used for training, after a seeded shuffle. */
  trainFraction: number;
  seed: number;
}

/** Loads the CSV, trains once, and returns the protocol-facing model.
 * Throws on any setup problem so the caller can exit nonzero before the
 * handshake. */
export function buildModel(cfg: AdapterConfig): PredictModel {
  if (!(cfg.trainFraction > 0 && cfg.trainFraction <= 1)) {
    throw new Error(`train fraction must be in (0, 1], got ${cfg.trainFraction}`);
  }
  if (!Number.isInteger(cfg.seed) || cfg.seed < 0) {
    throw new Error(`seed must be a non-negative integer, got ${cfg.seed}`);
  }
  if (cfg.modelKind === "kernel-logistic" && cfg.task !== "classification-probability") {
    throw new Error("kernel-logistic is a classifier; use task classification-probability");
  }

  const table = loadCsv(cfg.dataset, cfg.targetColumn);
  const { values } = encodeTargets(cfg.task, table.rawTargets);

  const n = table.rows.length;
  const order = new Rng(cfg.seed).shuffle(Array.from({ length: n }, (_, i) => i));
  const nTrain = Math.max(2, Math.round(cfg.trainFraction * n));
  if (nTrain > n) {
    throw new Error(`dataset has only ${n} rows; need at least 2 to train`);
  }
  const trainIdx = order.slice(0, nTrain);
  const X = trainIdx.map((i) => table.rows[i]);
  const y = trainIdx.map((i) => values[i]);

  const trained =
    cfg.modelKind === "extra-trees"
      ? trainExtraTrees(X, y, cfg.seed)
      : trainKernelLogistic(X, y);

  const d = table.featureNames.length;
  const name = `${cfg.modelKind}:${basename(cfg.dataset)}`;
  return {
    d,
    name,
    predict: (x) => trained.predict(x),
  };
}
