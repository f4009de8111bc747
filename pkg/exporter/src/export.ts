/**
 * Export pipeline: run trained models over one labeled dataset and write a
 * pool directory (pool.json manifest, one .eprd prediction matrix per model
 * per split, shared .elbl label files) ready for the ensemble optimizer.
 *
 * The dataset is divided into validation/test halves with the stratified
 * split rule, each model is run over both halves in batches, softmax is
 * applied only when the outputs are not already probabilities, and per-batch
 * latency is either benchmarked (median of timed runs after warmups) or
 * written as a flagged placeholder. Models are processed sequentially;
 * batching within a model is the framework's business.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

import { writeLabelFile, writePredictionFile } from './binio';
import { Dataset, loadDataset } from './dataset';
import { measureLatency, MIN_REPS, MIN_WARMUPS } from './latency';
import { loadModelFromDir } from './modelio';
import { isProbabilityMatrix, softmaxRows } from './probs';
import { stratifiedHalfSplit } from './split';

export const EXPORTER_VERSION = '0.1.0';
export const DEFAULT_BATCH_SIZE = 128;
export const PLACEHOLDER_LATENCY_S = 1.0;

export class ExportError extends Error {}

export interface ExportJob {
  modelDirs: string[];
  dataPath: string;
  outDir: string;
  batchSize?: number;
  platforms?: string[];
  warmups?: number;
  reps?: number;
  measureLatency?: boolean;
  seed?: number;
  datasetName?: string;
  log?: (line: string) => void;
}

export interface ExportResult {
  manifestPath: string;
  nClasses: number;
  modelIds: string[];
  latencyPlaceholder: boolean;
}

const SPLITS = ['validation', 'test'] as const;
type SplitName = (typeof SPLITS)[number];

function sanitizeId(raw: string): string {
  return raw.replace(/[^A-Za-z0-9._-]+/g, '_');
}

function gather<T>(items: T[], indices: number[]): T[] {
  return indices.map((i) => items[i]);
}

function gatherLabels(labels: Uint32Array, indices: number[]): Uint32Array {
  const out = new Uint32Array(indices.length);
  for (let i = 0; i < indices.length; i++) out[i] = labels[indices[i]];
  return out;
}

interface SplitData {
  features: tf.Tensor;
  labels: Uint32Array;
  n: number;
}

function runModel(
  model: tf.LayersModel,
  id: string,
  features: tf.Tensor,
  batchSize: number,
): { rows: Float32Array; nClasses: number } {
  let out: tf.Tensor | tf.Tensor[];
  try {
    out = model.predict(features, { batchSize });
  } catch (err) {
    throw new ExportError(`model ${id}: prediction failed (${(err as Error).message})`);
  }
  if (Array.isArray(out)) {
    out.forEach((t) => t.dispose());
    throw new ExportError(`model ${id}: multi-output models are not supported`);
  }
  if (out.rank !== 2 || out.shape[0] !== features.shape[0]) {
    const shape = out.shape.join('x');
    out.dispose();
    throw new ExportError(
      `model ${id}: expected output shape [${features.shape[0]}, n_classes], got [${shape}]`,
    );
  }
  const f32 = out.dtype === 'float32' ? out : out.cast('float32');
  const rows = f32.dataSync() as Float32Array;
  const nClasses = out.shape[1]!;
  if (f32 !== out) f32.dispose();
  out.dispose();
  return { rows: new Float32Array(rows), nClasses };
}

export async function exportPool(job: ExportJob): Promise<ExportResult> {
  const log = job.log ?? (() => {});
  const batchSize = job.batchSize ?? DEFAULT_BATCH_SIZE;
  const platforms = job.platforms ?? ['cpu'];
  const warmups = job.warmups ?? MIN_WARMUPS;
  const reps = job.reps ?? MIN_REPS;
  const measure = job.measureLatency ?? true;
  const seed = job.seed ?? 0;

  if (job.modelDirs.length === 0) throw new ExportError('no model directories given');
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new ExportError(`batch size must be a positive integer, got ${batchSize}`);
  }
  if (platforms.length === 0) throw new ExportError('at least one platform is required');
  if (new Set(platforms).size !== platforms.length) {
    throw new ExportError('duplicate platform names');
  }
  if (measure && warmups < MIN_WARMUPS) {
    throw new ExportError(`need at least ${MIN_WARMUPS} warmup batches, got ${warmups}`);
  }
  if (measure && reps < MIN_REPS) {
    throw new ExportError(`need at least ${MIN_REPS} timed batches, got ${reps}`);
  }

  const dataset: Dataset = loadDataset(job.dataPath);
  const datasetName = job.datasetName ?? dataset.name;
  const { first, second } = stratifiedHalfSplit(dataset.labels, seed);
  log(
    `dataset ${datasetName}: ${dataset.labels.length} samples -> ` +
      `${first.length} validation / ${second.length} test`,
  );

  const splits: Record<SplitName, SplitData> = {
    validation: {
      features: tf.tensor(gather(dataset.features, first) as any),
      labels: gatherLabels(dataset.labels, first),
      n: first.length,
    },
    test: {
      features: tf.tensor(gather(dataset.features, second) as any),
      labels: gatherLabels(dataset.labels, second),
      n: second.length,
    },
  };
  // exactly batchSize rows for timing, cycling the validation half if short
  const batchIndices = Array.from({ length: batchSize }, (_, i) => first[i % first.length]);
  const latencyBatch = tf.tensor(gather(dataset.features, batchIndices) as any);

  interface ModelOut {
    id: string;
    dir: string;
    params: number;
    appliedSoftmax: boolean;
    latency: Record<string, number>;
    rows: Record<SplitName, Float32Array>;
  }

  const results: ModelOut[] = [];
  const rawTimings: Record<string, Record<string, number[]>> = {};
  let nClasses = 0;

  try {
    const seen = new Map<string, string>();
    for (const dir of job.modelDirs) {
      const id = sanitizeId(path.basename(path.resolve(dir)));
      const clash = seen.get(id);
      if (clash !== undefined) {
        throw new ExportError(
          `model directories ${clash} and ${dir} both map to id '${id}'; rename one`,
        );
      }
      seen.set(id, dir);

      const model = await loadModelFromDir(dir);
      try {
        const params = model.countParams();
        if (params < 1) throw new ExportError(`model ${id}: no trainable or fixed parameters`);

        const outputs = {} as Record<SplitName, Float32Array>;
        let cols = 0;
        for (const split of SPLITS) {
          const { rows, nClasses: c } = runModel(model, id, splits[split].features, batchSize);
          if (cols === 0) cols = c;
          outputs[split] = rows;
        }
        if (nClasses === 0) {
          if (cols < 2) {
            throw new ExportError(`model ${id}: output has ${cols} column(s), need >= 2 classes`);
          }
          let maxLabel = 0;
          for (const v of dataset.labels) if (v > maxLabel) maxLabel = v;
          if (maxLabel >= cols) {
            throw new ExportError(
              `dataset has labels up to ${maxLabel} but model ${id} outputs ${cols} classes`,
            );
          }
          nClasses = cols;
        } else if (cols !== nClasses) {
          throw new ExportError(
            `model ${id}: output has ${cols} columns, pool has ${nClasses} classes`,
          );
        }

        const alreadyProbs = SPLITS.every((s) =>
          isProbabilityMatrix(outputs[s], splits[s].n, nClasses),
        );
        if (!alreadyProbs) {
          for (const s of SPLITS) outputs[s] = softmaxRows(outputs[s], splits[s].n, nClasses);
        }

        const latency: Record<string, number> = {};
        if (measure) {
          rawTimings[id] = {};
          for (const platform of platforms) {
            const sample = await measureLatency(
              () => {
                const y = model.predict(latencyBatch) as tf.Tensor;
                y.dataSync();
                y.dispose();
              },
              warmups,
              reps,
            );
            latency[platform] = sample.perBatchSeconds;
            rawTimings[id][platform] = sample.rawSeconds;
          }
        } else {
          for (const platform of platforms) latency[platform] = PLACEHOLDER_LATENCY_S;
        }

        results.push({ id, dir, params, appliedSoftmax: !alreadyProbs, latency, rows: outputs });
        log(
          `model ${id}: ${params} params, ${alreadyProbs ? 'probability' : 'logit'} outputs` +
            (measure
              ? `, latency ${platforms.map((p) => `${p}=${latency[p].toExponential(3)}s`).join(' ')}`
              : ', latency placeholder'),
        );
      } finally {
        model.dispose();
      }
    }
  } finally {
    splits.validation.features.dispose();
    splits.test.features.dispose();
    latencyBatch.dispose();
  }

  fs.mkdirSync(job.outDir, { recursive: true });
  const labelFiles: Record<SplitName, string> = {
    validation: 'validation_labels.elbl',
    test: 'test_labels.elbl',
  };
  for (const split of SPLITS) {
    writeLabelFile(path.join(job.outDir, labelFiles[split]), splits[split].labels);
  }

  const entries = results.map((m, i) => {
    const entry: any = { id: m.id, params: m.params, latency: {} };
    for (const platform of platforms) entry.latency[platform] = m.latency[platform];
    for (const split of SPLITS) {
      const probsFile = `${String(i).padStart(3, '0')}_${m.id}_${split}.eprd`;
      writePredictionFile(path.join(job.outDir, probsFile), m.rows[split], splits[split].n, nClasses);
      entry[split] = { probs_file: probsFile, labels_file: labelFiles[split] };
    }
    return entry;
  });

  const manifest = {
    dataset: datasetName,
    n_classes: nClasses,
    platforms: platforms,
    models: entries,
  };
  const manifestPath = path.join(job.outDir, 'pool.json');
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + '\n');

  const exportManifest = {
    tool: 'earn-exporter',
    version: EXPORTER_VERSION,
    created_utc: new Date().toISOString(),
    job: {
      model_dirs: job.modelDirs.map((d) => path.resolve(d)),
      data_path: path.resolve(job.dataPath),
      batch_size: batchSize,
      platforms,
      warmups,
      reps,
      measure_latency: measure,
      seed,
    },
    latency_placeholder: !measure,
    models: results.map((m) => ({
      id: m.id,
      dir: path.resolve(m.dir),
      params: m.params,
      applied_softmax: m.appliedSoftmax,
    })),
  };
  fs.writeFileSync(
    path.join(job.outDir, 'export_manifest.json'),
    JSON.stringify(exportManifest, null, 2) + '\n',
  );
  if (measure) {
    fs.writeFileSync(
      path.join(job.outDir, 'latency_raw.json'),
      JSON.stringify(rawTimings, null, 2) + '\n',
    );
  }
  if (!measure) log('latencies are placeholders (latency measurement is off)');
  log(`wrote ${manifestPath}`);

  return {
    manifestPath,
    nClasses,
    modelIds: results.map((m) => m.id),
    latencyPlaceholder: !measure,
  };
}
