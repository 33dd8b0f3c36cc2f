import type { PredictModel } from "./protocol.js";

/** Identity test model: y = x[0]. Used by the engine's integration tests. */
export function echoModel(d: number): PredictModel {
  if (!Number.isInteger(d) || d < 1) {
    throw new Error(`echo model needs a positive integer dimension, got ${d}`);
  }
  return {
    d,
    name: "echo",
    predict: (x) => x[0],
  };
}
