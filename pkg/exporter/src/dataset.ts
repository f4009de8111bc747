/**
 * Labeled dataset loading. The on-disk format is one JSON file:
 *
 *   {"name": "toy", "features": [[...], ...], "labels": [0, 2, ...]}
 *
 * Features are one nested number array per sample (any rank: vectors,
 * images, ...); labels are non-negative class indices. "name" is optional
 * and defaults to the file stem.
 */

import * as fs from 'fs';
import * as path from 'path';

export class DatasetError extends Error {}

export interface Dataset {
  name: string;
  features: unknown[];
  labels: Uint32Array;
}

export function loadDataset(filePath: string): Dataset {
  if (!fs.existsSync(filePath)) {
    throw new DatasetError(`dataset file not found: ${filePath}`);
  }
  let parsed: any;
  try {
    parsed = JSON.parse(fs.readFileSync(filePath, 'utf8'));
  } catch (err) {
    throw new DatasetError(`${filePath}: invalid JSON (${(err as Error).message})`);
  }
  const { features, labels } = parsed ?? {};
  if (!Array.isArray(features) || !Array.isArray(labels)) {
    throw new DatasetError(`${filePath}: expected "features" and "labels" arrays`);
  }
  if (features.length !== labels.length) {
    throw new DatasetError(
      `${filePath}: ${features.length} feature rows but ${labels.length} labels`,
    );
  }
  if (labels.length === 0) throw new DatasetError(`${filePath}: empty dataset`);
  const out = new Uint32Array(labels.length);
  for (let i = 0; i < labels.length; i++) {
    const v = labels[i];
    if (!Number.isInteger(v) || v < 0) {
      throw new DatasetError(`${filePath}: label at index ${i} is not a non-negative integer`);
    }
    out[i] = v;
  }
  const name =
    typeof parsed.name === 'string' && parsed.name !== ''
      ? parsed.name
      : path.basename(filePath).replace(/\.[^.]*$/, '');
  return { name, features, labels: out };
}
