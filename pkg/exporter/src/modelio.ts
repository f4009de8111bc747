/**
 * Load and save TensorFlow.js Layers models from plain directories
 * (model.json plus binary weight shards), using in-memory IO handlers so the
 * pure-JS build works without the native node bindings.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

export class ModelLoadError extends Error {}

function toArrayBuffer(buf: Buffer): ArrayBuffer {
  const out = new ArrayBuffer(buf.byteLength);
  new Uint8Array(out).set(buf);
  return out;
}

export async function loadModelFromDir(dir: string): Promise<tf.LayersModel> {
  const manifestPath = path.join(dir, 'model.json');
  if (!fs.existsSync(manifestPath)) {
    throw new ModelLoadError(`${dir}: no model.json found`);
  }
  let parsed: any;
  try {
    parsed = JSON.parse(fs.readFileSync(manifestPath, 'utf8'));
  } catch (err) {
    throw new ModelLoadError(`${manifestPath}: invalid JSON (${(err as Error).message})`);
  }
  if (!parsed.modelTopology) {
    throw new ModelLoadError(`${manifestPath}: missing modelTopology`);
  }

  const weightSpecs: tf.io.WeightsManifestEntry[] = [];
  const shards: Buffer[] = [];
  for (const group of parsed.weightsManifest ?? []) {
    weightSpecs.push(...group.weights);
    for (const rel of group.paths) {
      const shardPath = path.join(dir, rel);
      if (!fs.existsSync(shardPath)) {
        throw new ModelLoadError(`${dir}: missing weight shard ${rel}`);
      }
      shards.push(fs.readFileSync(shardPath));
    }
  }
  const weightData = toArrayBuffer(Buffer.concat(shards));
  try {
    return await tf.loadLayersModel(
      tf.io.fromMemory({ modelTopology: parsed.modelTopology, weightSpecs, weightData }),
    );
  } catch (err) {
    throw new ModelLoadError(`${dir}: ${(err as Error).message}`);
  }
}

/** Test/demo helper: persist a model in the directory layout loadModelFromDir reads. */
export async function saveModelToDir(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const data = artifacts.weightData!;
      const parts = Array.isArray(data) ? data : [data];
      const weights = Buffer.concat(parts.map((p) => Buffer.from(p)));
      fs.writeFileSync(path.join(dir, 'weights.bin'), weights);
      const manifest = {
        modelTopology: artifacts.modelTopology,
        format: 'layers-model',
        generatedBy: artifacts.generatedBy ?? `TensorFlow.js ${tf.version.tfjs}`,
        convertedBy: null,
        weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
      };
      fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(manifest) + '\n');
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON' as const,
        },
      };
    }),
  );
}
