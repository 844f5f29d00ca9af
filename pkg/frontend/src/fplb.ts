/**
 * Writer for the backbone import format consumed by the simulator.
 *
 * Binary layout (little-endian): magic "FPLB", u32 version=1, u32 k, c, d,
 * d_img, L, H, S, u64 num_samples; image features (num_samples x d_img f32);
 * labels (num_samples u32); class token embeddings (k x c x d f32); then
 * length-prefixed (u64) parameter blocks in declared order: positional
 * table (S x d), one block per transformer layer, final norm (gamma, beta);
 * then the projection matrix (d x d_img f32) with no prefix. All linear
 * weights use the row-vector convention y = x @ W + b.
 *
 * A sidecar "<path>.manifest.json" lists class names, the total parameter
 * count, the logit scale, the train/test split boundary, and a sha256 per
 * parameter block.
 */

import { createHash } from "node:crypto";
import { writeFileSync } from "node:fs";

export const MAGIC = "FPLB";
export const VERSION = 1;
export const MLP_RATIO = 4;

export interface LayerBlock {
  ln1_g: Float32Array;
  ln1_b: Float32Array;
  wq: Float32Array; // (d, d) row-vector convention
  bq: Float32Array;
  wk: Float32Array;
  bk: Float32Array;
  wv: Float32Array;
  bv: Float32Array;
  wo: Float32Array;
  bo: Float32Array;
  ln2_g: Float32Array;
  ln2_b: Float32Array;
  w1: Float32Array; // (d, 4d)
  b1: Float32Array;
  w2: Float32Array; // (4d, d)
  b2: Float32Array;
}

export const LAYER_FIELDS: (keyof LayerBlock)[] = [
  "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
  "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
];

export interface BackboneExport {
  k: number;
  c: number;
  d: number;
  dImg: number;
  heads: number;
  maxSeq: number;
  features: Float32Array; // (num_samples, d_img), rows unit-norm
  labels: Uint32Array;
  classTokens: Float32Array; // (k, c, d)
  pos: Float32Array; // (S, d)
  layers: LayerBlock[];
  lnfG: Float32Array;
  lnfB: Float32Array;
  proj: Float32Array; // (d, d_img)
  classNames: string[];
  logitScale: number;
  trainCount: number;
  model: string;
  dataset: string;
  notes?: Record<string, unknown>;
}

export function layerParamCount(d: number): number {
  return 12 * d * d + 13 * d;
}

export function parameterCount(e: { maxSeq: number; d: number; dImg: number; k: number; c: number; depth: number }): number {
  return (
    e.maxSeq * e.d +
    e.depth * layerParamCount(e.d) +
    2 * e.d +
    e.d * e.dImg +
    e.k * e.c * e.d
  );
}

function f32buf(a: Float32Array): Buffer {
  return Buffer.from(a.buffer.slice(a.byteOffset, a.byteOffset + a.byteLength));
}

function expectLen(name: string, a: Float32Array, want: number): void {
  if (a.length !== want) {
    throw new Error(`${name}: has ${a.length} values, expected ${want}`);
  }
}

export function writeBackbone(path: string, e: BackboneExport): void {
  const { k, c, d, dImg, heads, maxSeq } = e;
  const depth = e.layers.length;
  const n = e.labels.length;
  if (e.features.length !== n * dImg) throw new Error("features/labels size mismatch");
  if (d % heads !== 0) throw new Error(`width ${d} not divisible by ${heads} heads`);
  expectLen("classTokens", e.classTokens, k * c * d);
  expectLen("pos", e.pos, maxSeq * d);
  expectLen("proj", e.proj, d * dImg);
  if (e.classNames.length !== k) throw new Error("classNames length != k");
  if (e.trainCount < 0 || e.trainCount > n) throw new Error("trainCount out of range");

  const header = Buffer.alloc(44);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(k, 8);
  header.writeUInt32LE(c, 12);
  header.writeUInt32LE(d, 16);
  header.writeUInt32LE(dImg, 20);
  header.writeUInt32LE(depth, 24);
  header.writeUInt32LE(heads, 28);
  header.writeUInt32LE(maxSeq, 32);
  header.writeBigUInt64LE(BigInt(n), 36);

  const shapes: Record<string, number> = {
    ln1_g: d, ln1_b: d, wq: d * d, bq: d, wk: d * d, bk: d, wv: d * d, bv: d,
    wo: d * d, bo: d, ln2_g: d, ln2_b: d,
    w1: d * MLP_RATIO * d, b1: MLP_RATIO * d, w2: MLP_RATIO * d * d, b2: d,
  };
  const blocks: Buffer[] = [f32buf(e.pos)];
  e.layers.forEach((layer, i) => {
    const parts: Buffer[] = [];
    for (const field of LAYER_FIELDS) {
      const arr = layer[field];
      expectLen(`layer ${i}.${field}`, arr, shapes[field]);
      parts.push(f32buf(arr));
    }
    blocks.push(Buffer.concat(parts));
  });
  blocks.push(Buffer.concat([f32buf(e.lnfG), f32buf(e.lnfB)]));

  const labelBuf = Buffer.alloc(4 * n);
  e.labels.forEach((v, i) => labelBuf.writeUInt32LE(v, 4 * i));

  const out: Buffer[] = [header, f32buf(e.features), labelBuf, f32buf(e.classTokens)];
  for (const b of blocks) {
    const len = Buffer.alloc(8);
    len.writeBigUInt64LE(BigInt(b.length));
    out.push(len, b);
  }
  out.push(f32buf(e.proj));
  writeFileSync(path, Buffer.concat(out));

  const manifest = {
    class_names: e.classNames,
    parameter_count: parameterCount({ maxSeq, d, dImg, k, c, depth }),
    logit_scale: e.logitScale,
    train_count: e.trainCount,
    k, c, d, d_img: dImg, depth, heads, max_seq: maxSeq,
    num_samples: n,
    block_checksums: blocks.map((b) => createHash("sha256").update(b).digest("hex")),
    model: e.model,
    dataset: e.dataset,
    split_sizes: { train: e.trainCount, test: n - e.trainCount },
    ...e.notes,
  };
  writeFileSync(`${path}.manifest.json`, JSON.stringify(sortKeysDeep(manifest), null, 2) + "\n");
}

function sortKeysDeep(v: unknown): unknown {
  if (Array.isArray(v)) return v.map(sortKeysDeep);
  if (v && typeof v === "object") {
    return Object.fromEntries(
      Object.keys(v as Record<string, unknown>)
        .sort()
        .map((k) => [k, sortKeysDeep((v as Record<string, unknown>)[k])]),
    );
  }
  return v;
}

export function normalizeRows(features: Float32Array, dim: number): Float32Array {
  const out = new Float32Array(features.length);
  const rows = features.length / dim;
  for (let r = 0; r < rows; r++) {
    let ss = 0;
    for (let j = 0; j < dim; j++) ss += features[r * dim + j] ** 2;
    const inv = 1 / Math.sqrt(ss);
    if (!Number.isFinite(inv)) throw new Error(`feature row ${r} has zero norm`);
    for (let j = 0; j < dim; j++) out[r * dim + j] = Math.fround(features[r * dim + j] * inv);
  }
  return out;
}
