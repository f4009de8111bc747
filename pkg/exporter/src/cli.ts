#!/usr/bin/env node
/**
 * earn-export: run trained TensorFlow.js models over a labeled dataset and
 * write a pool directory the ensemble optimizer can consume directly.
 *
 *   earn-export --models m1/ m2/ --data dataset.json --batch 128 \
 *               --platform cpu --out pool/
 */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { DatasetError } from './dataset';
import { ExportError, exportPool, DEFAULT_BATCH_SIZE } from './export';
import { MIN_REPS, MIN_WARMUPS } from './latency';
import { ModelLoadError } from './modelio';
import { SplitError } from './split';

async function main(): Promise<void> {
  const argv = await yargs(hideBin(process.argv))
    .usage('$0 --models <dir...> --data <file> --out <dir>')
    .option('models', {
      type: 'string',
      array: true,
      demandOption: true,
      describe: 'Model directories (each holding model.json + weight shards)',
    })
    .option('data', {
      type: 'string',
      demandOption: true,
      describe: 'Dataset JSON file with "features" and "labels"',
    })
    .option('out', {
      type: 'string',
      demandOption: true,
      describe: 'Output pool directory',
    })
    .option('batch', {
      type: 'number',
      default: DEFAULT_BATCH_SIZE,
      describe: 'Inference and benchmark batch size',
    })
    .option('platform', {
      type: 'string',
      array: true,
      default: ['cpu'],
      describe: 'Platform names to record latencies under',
    })
    .option('measure-latency', {
      choices: ['on', 'off'] as const,
      default: 'on',
      describe: 'off writes flagged placeholder latencies instead of benchmarking',
    })
    .option('warmup', {
      type: 'number',
      default: MIN_WARMUPS,
      describe: 'Untimed warmup batches per model per platform',
    })
    .option('reps', {
      type: 'number',
      default: MIN_REPS,
      describe: 'Timed batches per model per platform (median is recorded)',
    })
    .option('seed', {
      type: 'number',
      default: 0,
      describe: 'Seed for the stratified validation/test split',
    })
    .option('dataset-name', {
      type: 'string',
      describe: 'Dataset name to record in the manifest',
    })
    .strict()
    .fail((msg, err) => {
      console.error(msg ?? err?.message ?? 'invalid usage');
      process.exit(1);
    })
    .parse();

  try {
    await exportPool({
      modelDirs: argv.models,
      dataPath: argv.data,
      outDir: argv.out,
      batchSize: argv.batch,
      platforms: argv.platform,
      warmups: argv.warmup,
      reps: argv.reps,
      measureLatency: argv['measure-latency'] === 'on',
      seed: argv.seed,
      datasetName: argv['dataset-name'],
      log: (line) => console.log(line),
    });
  } catch (err) {
    if (
      err instanceof ExportError ||
      err instanceof ModelLoadError ||
      err instanceof DatasetError ||
      err instanceof SplitError
    ) {
      console.error(`error: ${err.message}`);
      process.exit(2);
    }
    throw err;
  }
}

main().catch((err) => {
  console.error(err);
  process.exit(3);
});
