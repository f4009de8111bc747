/**
 * Binary writers/readers for pool prediction and label files.
 *
 * prediction file (.eprd):  magic EPRD | u32 version=1 | u64 n_samples |
 *                           u32 n_classes | float32 row-major probabilities
 * label file      (.elbl):  magic ELBL | u32 version=1 | u64 n_samples |
 *                           u32 labels
 *
 * All integers and floats are little-endian regardless of host byte order.
 */

import * as fs from 'fs';

export const PREDICTION_MAGIC = 'EPRD';
export const LABEL_MAGIC = 'ELBL';
export const FORMAT_VERSION = 1;

const PRED_HEADER_BYTES = 20; // 4s + u32 + u64 + u32, packed
const LABEL_HEADER_BYTES = 16; // 4s + u32 + u64

export function encodePredictions(
  probs: Float32Array,
  nSamples: number,
  nClasses: number,
): Buffer {
  if (probs.length !== nSamples * nClasses) {
    throw new Error(
      `prediction payload has ${probs.length} values, expected ${nSamples}x${nClasses}`,
    );
  }
  const buf = Buffer.alloc(PRED_HEADER_BYTES + probs.length * 4);
  buf.write(PREDICTION_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeBigUInt64LE(BigInt(nSamples), 8);
  buf.writeUInt32LE(nClasses, 16);
  const view = new DataView(buf.buffer, buf.byteOffset + PRED_HEADER_BYTES);
  for (let i = 0; i < probs.length; i++) view.setFloat32(i * 4, probs[i], true);
  return buf;
}

export function encodeLabels(labels: Uint32Array): Buffer {
  const buf = Buffer.alloc(LABEL_HEADER_BYTES + labels.length * 4);
  buf.write(LABEL_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeBigUInt64LE(BigInt(labels.length), 8);
  const view = new DataView(buf.buffer, buf.byteOffset + LABEL_HEADER_BYTES);
  for (let i = 0; i < labels.length; i++) view.setUint32(i * 4, labels[i], true);
  return buf;
}

export function writePredictionFile(
  path: string,
  probs: Float32Array,
  nSamples: number,
  nClasses: number,
): void {
  fs.writeFileSync(path, encodePredictions(probs, nSamples, nClasses));
}

export function writeLabelFile(path: string, labels: Uint32Array): void {
  fs.writeFileSync(path, encodeLabels(labels));
}

export interface PredictionMatrix {
  probs: Float32Array;
  nSamples: number;
  nClasses: number;
}

export function readPredictionFile(path: string): PredictionMatrix {
  const buf = fs.readFileSync(path);
  if (buf.length < PRED_HEADER_BYTES) throw new Error(`${path}: truncated prediction header`);
  const magic = buf.toString('ascii', 0, 4);
  if (magic !== PREDICTION_MAGIC) {
    throw new Error(`${path}: bad magic ${JSON.stringify(magic)}, expected ${PREDICTION_MAGIC}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const nSamples = Number(buf.readBigUInt64LE(8));
  const nClasses = buf.readUInt32LE(16);
  const expected = nSamples * nClasses * 4;
  if (buf.length - PRED_HEADER_BYTES !== expected) {
    throw new Error(
      `${path}: payload is ${buf.length - PRED_HEADER_BYTES} bytes, header implies ${expected}`,
    );
  }
  const view = new DataView(buf.buffer, buf.byteOffset + PRED_HEADER_BYTES, expected);
  const probs = new Float32Array(nSamples * nClasses);
  for (let i = 0; i < probs.length; i++) probs[i] = view.getFloat32(i * 4, true);
  return { probs, nSamples, nClasses };
}

export function readLabelFile(path: string): Uint32Array {
  const buf = fs.readFileSync(path);
  if (buf.length < LABEL_HEADER_BYTES) throw new Error(`${path}: truncated label header`);
  const magic = buf.toString('ascii', 0, 4);
  if (magic !== LABEL_MAGIC) {
    throw new Error(`${path}: bad magic ${JSON.stringify(magic)}, expected ${LABEL_MAGIC}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const nSamples = Number(buf.readBigUInt64LE(8));
  if (buf.length - LABEL_HEADER_BYTES !== nSamples * 4) {
    throw new Error(
      `${path}: payload is ${buf.length - LABEL_HEADER_BYTES} bytes, header implies ${nSamples * 4}`,
    );
  }
  const view = new DataView(buf.buffer, buf.byteOffset + LABEL_HEADER_BYTES, nSamples * 4);
  const labels = new Uint32Array(nSamples);
  for (let i = 0; i < nSamples; i++) labels[i] = view.getUint32(i * 4, true);
  return labels;
}
