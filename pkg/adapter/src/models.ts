/** CSV-trainable models behind the single-scalar predict contract:
 * an extremely randomized tree ensemble (regression, or class-fraction
 * probabilities), and an RBF-kernel logistic classifier (probabilities).
 */

import { Rng } from "./rng.js";

export interface Trained {
  predict(x: number[]): number;
}

// ---------------------------------------------------------------------------
// Extremely randomized tree ensemble
// ---------------------------------------------------------------------------

interface TreeNode {
  feature: number;
  threshold: number;
  left: TreeNode | number; // number = leaf value
  right: TreeNode | number;
}

export interface ExtraTreesOptions {
  nTrees?: number;
  minSamplesSplit?: number;
}

/** Ensemble of fully grown trees; each split draws one uniform random
 * threshold per candidate feature and keeps the best variance reduction.
 * Trained on 0/1 targets the averaged leaves are class fractions in [0,1]. */
export function trainExtraTrees(
  X: number[][],
  y: number[],
  seed: number,
  opts: ExtraTreesOptions = {},
): Trained {
  const n = X.length;
  if (n === 0 || n !== y.length) {
    throw new Error(`bad training shapes: ${n} rows vs ${y.length} targets`);
  }
  const d = X[0].length;
  const nTrees = opts.nTrees ?? 100;
  const minSplit = Math.max(2, opts.minSamplesSplit ?? 2);
  const rng = new Rng(seed);

  function leaf(idx: number[]): number {
    let s = 0;
    for (const i of idx) s += y[i];
    return s / idx.length;
  }

  function sumSq(idx: number[]): { sum: number; sq: number } {
    let sum = 0;
    let sq = 0;
    for (const i of idx) {
      sum += y[i];
      sq += y[i] * y[i];
    }
    return { sum, sq };
  }

  function build(idx: number[]): TreeNode | number {
    if (idx.length < minSplit) return leaf(idx);
    const { sum, sq } = sumSq(idx);
    const total = sq - (sum * sum) / idx.length;
    if (total <= 1e-12) return leaf(idx); // pure node

    let best: { f: number; t: number; score: number } | null = null;
    for (let f = 0; f < d; f++) {
      let lo = Infinity;
      let hi = -Infinity;
      for (const i of idx) {
        const v = X[i][f];
        if (v < lo) lo = v;
        if (v > hi) hi = v;
      }
      if (hi <= lo) continue; // constant feature in this node
      const t = rng.uniform(lo, hi);
      let lSum = 0;
      let lSq = 0;
      let lN = 0;
      for (const i of idx) {
        if (X[i][f] <= t) {
          lSum += y[i];
          lSq += y[i] * y[i];
          lN++;
        }
      }
      const rN = idx.length - lN;
      if (lN === 0 || rN === 0) continue;
      const rSum = sum - lSum;
      const rSq = sq - lSq;
      const impurity =
        lSq - (lSum * lSum) / lN + (rSq - (rSum * rSum) / rN);
      const score = total - impurity;
      if (best === null || score > best.score) best = { f, t, score };
    }
    if (best === null) return leaf(idx); // all features constant
    const leftIdx = idx.filter((i) => X[i][best!.f] <= best!.t);
    const rightIdx = idx.filter((i) => X[i][best!.f] > best!.t);
    return {
      feature: best.f,
      threshold: best.t,
      left: build(leftIdx),
      right: build(rightIdx),
    };
  }

  const all = Array.from({ length: n }, (_, i) => i);
  const trees = Array.from({ length: nTrees }, () => build(all));

  function walk(node: TreeNode | number, x: number[]): number {
    while (typeof node !== "number") {
      node = x[node.feature] <= node.threshold ? node.left : node.right;
    }
    return node;
  }

  return {
    predict(x: number[]): number {
      if (x.length !== d) {
        throw new Error(`expected ${d} features, got ${x.length}`);
      }
      let s = 0;
      for (const t of trees) s += walk(t, x);
      return s / trees.length;
    },
  };
}

// ---------------------------------------------------------------------------
// RBF-kernel logistic classifier
// ---------------------------------------------------------------------------

export interface KernelLogisticOptions {
  /** Ridge penalty on the kernel expansion coefficients. */
  ridge?: number;
  newtonIters?: number;
}

function sigmoid(z: number): number {
  return z >= 0 ? 1 / (1 + Math.exp(-z)) : Math.exp(z) / (1 + Math.exp(z));
}

/** Solve the symmetric positive-definite system A w = b in place (Cholesky). */
function solveSpd(A: number[][], b: number[]): number[] {
  const n = b.length;
  const L = A.map((row) => row.slice());
  for (let j = 0; j < n; j++) {
    let diag = L[j][j];
    for (let k = 0; k < j; k++) diag -= L[j][k] * L[j][k];
    if (diag <= 0) throw new Error("matrix is not positive definite");
    const root = Math.sqrt(diag);
    L[j][j] = root;
    for (let i = j + 1; i < n; i++) {
      let v = L[i][j];
      for (let k = 0; k < j; k++) v -= L[i][k] * L[j][k];
      L[i][j] = v / root;
    }
  }
  const z = new Array<number>(n);
  for (let i = 0; i < n; i++) {
    let v = b[i];
    for (let k = 0; k < i; k++) v -= L[i][k] * z[k];
    z[i] = v / L[i][i];
  }
  const w = new Array<number>(n);
  for (let i = n - 1; i >= 0; i--) {
    let v = z[i];
    for (let k = i + 1; k < n; k++) v -= L[k][i] * w[k];
    w[i] = v / L[i][i];
  }
  return w;
}

/** Kernel logistic regression on standardized features with an RBF Gram
 * matrix (gamma = 1 / (d * mean feature variance), the usual "scale"
 * heuristic); fitted by ridge-penalized Newton steps. Outputs are genuine
 * class-1 probabilities. */
export function trainKernelLogistic(
  X: number[][],
  y01: number[],
  opts: KernelLogisticOptions = {},
): Trained {
  const n = X.length;
  if (n === 0 || n !== y01.length) {
    throw new Error(`bad training shapes: ${n} rows vs ${y01.length} targets`);
  }
  if (!y01.every((v) => v === 0 || v === 1)) {
    throw new Error("classifier targets must be 0/1");
  }
  const d = X[0].length;
  const ridge = opts.ridge ?? 1e-2;
  const iters = opts.newtonIters ?? 25;

  // Standardize columns so the kernel width heuristic is meaningful.
  const mean = new Array<number>(d).fill(0);
  const scale = new Array<number>(d).fill(0);
  for (let f = 0; f < d; f++) {
    let s = 0;
    for (const row of X) s += row[f];
    mean[f] = s / n;
    let v = 0;
    for (const row of X) v += (row[f] - mean[f]) ** 2;
    scale[f] = Math.sqrt(v / n) || 1;
  }
  const Z = X.map((row) => row.map((v, f) => (v - mean[f]) / scale[f]));
  let varSum = 0;
  for (let f = 0; f < d; f++) {
    let v = 0;
    for (const z of Z) v += z[f] * z[f];
    varSum += v / n;
  }
  const gamma = 1 / Math.max(varSum, 1e-12);

  function rbf(a: number[], b: number[]): number {
    let s = 0;
    for (let f = 0; f < d; f++) {
      const diff = a[f] - b[f];
      s += diff * diff;
    }
    return Math.exp(-gamma * s);
  }

  const K: number[][] = Z.map((a) => Z.map((b) => rbf(a, b)));

  // Newton/IRLS on f = K a + b0: at each step solve
  // (W K + ridge I) a + W 1 b0 = W f + (y - p) restricted to (a, b0).
  let alpha = new Array<number>(n).fill(0);
  let b0 = 0;
  for (let it = 0; it < iters; it++) {
    const f = K.map((row, i) => {
      let s = b0;
      for (let j = 0; j < n; j++) s += row[j] * alpha[j];
      return s;
    });
    const p = f.map(sigmoid);
    const w = p.map((pi) => Math.max(pi * (1 - pi), 1e-6));
    const t = f.map((fi, i) => fi + (y01[i] - p[i]) / w[i]); // working response

    // Augmented system over [alpha; b0] for min_a,b sum w (t - K a - b)^2 / 2
    // + ridge/2 a' K a  =>  normal equations with the Gram as regularizer.
    const A: number[][] = [];
    for (let i = 0; i <= n; i++) A.push(new Array<number>(n + 1).fill(0));
    const rhs = new Array<number>(n + 1).fill(0);
    // Block: K' W K + ridge K   | K' W 1
    //        1' W K             | 1' W 1
    for (let i = 0; i < n; i++) {
      for (let j = i; j < n; j++) {
        let s = 0;
        for (let k = 0; k < n; k++) s += K[k][i] * w[k] * K[k][j];
        s += ridge * K[i][j];
        A[i][j] = s;
        A[j][i] = s;
      }
      let s1 = 0;
      let sr = 0;
      for (let k = 0; k < n; k++) {
        s1 += K[k][i] * w[k];
        sr += K[k][i] * w[k] * t[k];
      }
      A[i][n] = s1;
      A[n][i] = s1;
      rhs[i] = sr;
    }
    let sw = 0;
    let swt = 0;
    for (let k = 0; k < n; k++) {
      sw += w[k];
      swt += w[k] * t[k];
    }
    A[n][n] = sw;
    rhs[n] = swt;
    // Tiny jitter keeps the bordered system factorizable when K is singular.
    for (let i = 0; i <= n; i++) A[i][i] += 1e-10;

    const sol = solveSpd(A, rhs);
    const newAlpha = sol.slice(0, n);
    const newB0 = sol[n];
    let delta = Math.abs(newB0 - b0);
    for (let i = 0; i < n; i++) {
      delta = Math.max(delta, Math.abs(newAlpha[i] - alpha[i]));
    }
    alpha = newAlpha;
    b0 = newB0;
    if (delta < 1e-10) break;
  }

  return {
    predict(x: number[]): number {
      if (x.length !== d) {
        throw new Error(`expected ${d} features, got ${x.length}`);
      }
      const z = x.map((v, f) => (v - mean[f]) / scale[f]);
      let s = b0;
      for (let j = 0; j < n; j++) s += alpha[j] * rbf(z, Z[j]);
      return sigmoid(s);
    },
  };
}
