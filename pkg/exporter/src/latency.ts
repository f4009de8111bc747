/**
 * Latency micro-benchmark: run a batch callback a few times untimed to warm
 * caches and JIT, then time the remaining repetitions and report the median.
 * The raw timings are kept so callers can dump them for audit.
 */

import { performance } from 'perf_hooks';

export const MIN_WARMUPS = 2;
export const MIN_REPS = 5;

export interface LatencyMeasurement {
  perBatchSeconds: number;
  rawSeconds: number[];
}

export function median(values: number[]): number {
  if (values.length === 0) throw new Error('median of empty list');
  const sorted = [...values].sort((a, b) => a - b);
  const mid = Math.floor(sorted.length / 2);
  return sorted.length % 2 === 1 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
}

export async function measureLatency(
  runBatch: () => unknown | Promise<unknown>,
  warmups: number,
  reps: number,
): Promise<LatencyMeasurement> {
  if (warmups < MIN_WARMUPS) {
    throw new Error(`need at least ${MIN_WARMUPS} warmup batches, got ${warmups}`);
  }
  if (reps < MIN_REPS) {
    throw new Error(`need at least ${MIN_REPS} timed batches, got ${reps}`);
  }
  for (let i = 0; i < warmups; i++) await runBatch();
  const rawSeconds: number[] = [];
  for (let i = 0; i < reps; i++) {
    const start = performance.now();
    await runBatch();
    rawSeconds.push((performance.now() - start) / 1000);
  }
  return { perBatchSeconds: median(rawSeconds), rawSeconds };
}
