/**
 * JSON-lines matrix assembly: header record then one row per
 * (surface, term id) pair. Numbers are serialized with JSON.stringify
 * (shortest round-trip form), which is repeatable for identical inputs.
 */

import { writeFileSync, appendFileSync } from "node:fs";

import { Encoder } from "./encoders.js";
import { VectorCache } from "./cache.js";

export interface MatrixRow {
  surface: string;
  term_id: string;
}

export interface EmbedOptions {
  batchSize: number;
  cache?: VectorCache;
  append?: boolean;
  log?: (message: string) => void;
}

export async function embedRows(
  rows: MatrixRow[],
  encoder: Encoder,
  options: EmbedOptions,
): Promise<string[]> {
  const { batchSize, cache, log } = options;
  const vectors = new Map<string, number[]>();
  const pending: string[] = [];
  const seen = new Set<string>();
  for (const row of rows) {
    if (seen.has(row.surface)) continue;
    seen.add(row.surface);
    const cached = cache?.get(encoder.modelTag, row.surface);
    if (cached) {
      if (cached.length !== encoder.dimension) {
        throw new Error(
          `cache entry for ${JSON.stringify(row.surface)} has dimension ` +
            `${cached.length}, expected ${encoder.dimension}`,
        );
      }
      vectors.set(row.surface, cached);
    } else {
      pending.push(row.surface);
    }
  }

  for (let start = 0; start < pending.length; start += batchSize) {
    const batch = pending.slice(start, start + batchSize);
    const embedded = await encoder.embedBatch(batch);
    batch.forEach((text, i) => {
      vectors.set(text, embedded[i]);
      cache?.put(encoder.modelTag, text, embedded[i]);
    });
    log?.(`embedded ${Math.min(start + batchSize, pending.length)}/${pending.length} texts`);
  }

  return rows.map((row) =>
    JSON.stringify({
      surface: row.surface,
      term_id: row.term_id,
      vector: vectors.get(row.surface),
    }),
  );
}

export async function writeMatrix(
  outputPath: string,
  rows: MatrixRow[],
  encoder: Encoder,
  options: EmbedOptions,
): Promise<number> {
  const lines = await embedRows(rows, encoder, options);
  if (options.append) {
    appendFileSync(outputPath, lines.map((l) => l + "\n").join(""));
  } else {
    const header = JSON.stringify({
      dimension: encoder.dimension,
      model: encoder.modelTag,
    });
    writeFileSync(outputPath, [header, ...lines].map((l) => l + "\n").join(""));
  }
  return rows.length;
}
