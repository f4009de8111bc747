/**
 * Stratified half-split over label vectors.
 *
 * Matches the pool tool's rule: every class present in the labels is
 * shuffled with a seeded generator and divided as evenly as possible, the
 * first half receiving the extra sample of an odd class. Output index lists
 * are ascending. A class with fewer than two samples is an error.
 */

export class SplitError extends Error {}

// mulberry32: tiny seeded PRNG, plenty for shuffling index lists
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function shuffleInPlace(arr: number[], rand: () => number): void {
  for (let i = arr.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [arr[i], arr[j]] = [arr[j], arr[i]];
  }
}

export interface HalfSplit {
  first: number[];
  second: number[];
}

export function stratifiedHalfSplit(labels: ArrayLike<number>, seed: number): HalfSplit {
  const byClass = new Map<number, number[]>();
  for (let i = 0; i < labels.length; i++) {
    const cls = labels[i];
    const bucket = byClass.get(cls);
    if (bucket) bucket.push(i);
    else byClass.set(cls, [i]);
  }
  const rand = mulberry32(seed);
  const first: number[] = [];
  const second: number[] = [];
  const classes = [...byClass.keys()].sort((a, b) => a - b);
  for (const cls of classes) {
    const idx = byClass.get(cls)!;
    if (idx.length < 2) {
      throw new SplitError(
        `class ${cls} has ${idx.length} sample(s); stratified split needs at least 2`,
      );
    }
    shuffleInPlace(idx, rand);
    const take = Math.ceil(idx.length / 2);
    first.push(...idx.slice(0, take));
    second.push(...idx.slice(take));
  }
  first.sort((a, b) => a - b);
  second.sort((a, b) => a - b);
  return { first, second };
}
