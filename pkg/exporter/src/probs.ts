/**
 * Probability handling: decide whether model outputs are already
 * probabilities, and apply a numerically stable softmax when they are not.
 * Outputs that already validate as probabilities are written untouched;
 * nothing is ever renormalized beyond that one softmax.
 */

// same row-sum tolerance the pool loader enforces
export const ROW_SUM_TOLERANCE = 1e-4;

export function isProbabilityMatrix(
  rows: Float32Array,
  nSamples: number,
  nClasses: number,
): boolean {
  for (let r = 0; r < nSamples; r++) {
    let sum = 0;
    for (let c = 0; c < nClasses; c++) {
      const v = rows[r * nClasses + c];
      if (!(v >= 0 && v <= 1)) return false; // catches NaN too
      sum += v;
    }
    if (Math.abs(sum - 1) > ROW_SUM_TOLERANCE) return false;
  }
  return true;
}

export function softmaxRows(
  rows: Float32Array,
  nSamples: number,
  nClasses: number,
): Float32Array {
  const out = new Float32Array(nSamples * nClasses);
  for (let r = 0; r < nSamples; r++) {
    const base = r * nClasses;
    let max = -Infinity;
    for (let c = 0; c < nClasses; c++) if (rows[base + c] > max) max = rows[base + c];
    let sum = 0;
    const exps = new Float64Array(nClasses);
    for (let c = 0; c < nClasses; c++) {
      const e = Math.exp(rows[base + c] - max);
      exps[c] = e;
      sum += e;
    }
    for (let c = 0; c < nClasses; c++) out[base + c] = exps[c] / sum;
  }
  return out;
}
