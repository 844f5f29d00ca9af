/**
 * Export pipeline: CLIP-format checkpoint directory + precomputed image
 * features -> backbone import file.
 *
 * The checkpoint directory is the standard layout a pretrained model ships
 * in: config.json (flat text config or a nested text_config) and
 * model.safetensors holding text_model.* tensors. Vision-tower tensors are
 * ignored; image features arrive precomputed in a safetensors file
 * ("features" F32 (N, d_img), "labels" I64 (N,)) together with a dataset
 * manifest naming the classes and the train/test boundary.
 *
 * Checkpoint linear weights act on column vectors (out x in); the simulator
 * uses the row-vector convention, so every weight matrix is transposed on
 * the way out. Class token rows are [pad..., word tokens..., EOT] so pooling
 * the final position always lands on EOT. No start-of-text row is emitted:
 * prompt rows take the leading positions instead (recorded in the manifest).
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

import { BackboneExport, LAYER_FIELDS, LayerBlock, normalizeRows, writeBackbone } from "./fplb.js";
import { SafeTensors } from "./safetensors.js";
import { tokenizeClassName, Vocab } from "./tokenizer.js";

export interface TextConfig {
  hiddenSize: number;
  layers: number;
  heads: number;
  maxPositions: number;
  projectionDim: number;
  eosTokenId: number;
  padTokenId: number;
  logitScaleInit: number;
  modelType: string;
}

export function readTextConfig(modelDir: string): TextConfig {
  const raw = JSON.parse(readFileSync(join(modelDir, "config.json"), "utf8"));
  const text = raw.text_config ?? raw;
  const need = (obj: any, key: string): number => {
    const v = obj[key];
    if (typeof v !== "number") throw new Error(`config.json: missing numeric ${key}`);
    return v;
  };
  return {
    hiddenSize: need(text, "hidden_size"),
    layers: need(text, "num_hidden_layers"),
    heads: need(text, "num_attention_heads"),
    maxPositions: need(text, "max_position_embeddings"),
    projectionDim: raw.projection_dim ?? need(text, "projection_dim"),
    eosTokenId: text.eos_token_id ?? 2,
    padTokenId: text.pad_token_id ?? 0,
    logitScaleInit: raw.logit_scale_init_value ?? text.logit_scale_init_value ?? 0.0,
    modelType: raw.model_type ?? "clip",
  };
}

/** Transpose a (rows, cols) row-major matrix. */
export function transpose(a: Float32Array, rows: number, cols: number): Float32Array {
  const out = new Float32Array(a.length);
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) out[j * rows + i] = a[i * cols + j];
  }
  return out;
}

function linear(st: SafeTensors, name: string, inDim: number, outDim: number): { w: Float32Array; b: Float32Array } {
  const w = st.f32(`${name}.weight`);
  if (w.shape[0] !== outDim || w.shape[1] !== inDim) {
    throw new Error(`${name}.weight has shape ${w.shape}, expected (${outDim}, ${inDim})`);
  }
  const b = st.has(`${name}.bias`)
    ? st.f32(`${name}.bias`).data
    : new Float32Array(outDim);
  return { w: transpose(w.data, outDim, inDim), b };
}

export interface ExportOptions {
  modelDir: string;
  featuresPath: string;
  datasetPath: string;
  outPath: string;
}

export interface DatasetManifest {
  name: string;
  class_names: string[];
  train_count: number;
}

export function runExport(opts: ExportOptions): { k: number; c: number; parameterCount: number } {
  const cfg = readTextConfig(opts.modelDir);
  const st = SafeTensors.fromFile(join(opts.modelDir, "model.safetensors"));
  const dataset: DatasetManifest = JSON.parse(readFileSync(opts.datasetPath, "utf8"));
  const vocab: Vocab = { ids: JSON.parse(readFileSync(join(opts.modelDir, "vocab.json"), "utf8")) };

  const d = cfg.hiddenSize;
  const dImg = cfg.projectionDim;
  const pfx = "text_model.";

  const tokenTable = st.f32(`${pfx}embeddings.token_embedding.weight`);
  const pos = st.f32(`${pfx}embeddings.position_embedding.weight`);
  if (pos.shape[1] !== d) throw new Error("position embedding width mismatch");

  const classNames = dataset.class_names;
  const k = classNames.length;
  if (k < 2) throw new Error("need at least two classes");
  const tokenIds = classNames.map((name) => tokenizeClassName(name, vocab));
  const c = Math.max(...tokenIds.map((t) => t.length)) + 1; // +1 for EOT
  if (c >= cfg.maxPositions) {
    throw new Error(`class token rows (${c}) leave no room for prompts within ${cfg.maxPositions} positions`);
  }

  const vocabSize = tokenTable.shape[0];
  const embRow = (id: number): Float32Array => {
    if (id < 0 || id >= vocabSize) throw new Error(`token id ${id} outside vocabulary`);
    return tokenTable.data.subarray(id * d, (id + 1) * d);
  };
  const classTokens = new Float32Array(k * c * d);
  tokenIds.forEach((ids, cls) => {
    const padded = [
      ...Array(c - 1 - ids.length).fill(cfg.padTokenId),
      ...ids,
      cfg.eosTokenId,
    ];
    padded.forEach((id, pos_) => {
      classTokens.set(embRow(id), cls * c * d + pos_ * d);
    });
  });

  const layers: LayerBlock[] = [];
  for (let i = 0; i < cfg.layers; i++) {
    const lp = `${pfx}encoder.layers.${i}`;
    const q = linear(st, `${lp}.self_attn.q_proj`, d, d);
    const kk = linear(st, `${lp}.self_attn.k_proj`, d, d);
    const v = linear(st, `${lp}.self_attn.v_proj`, d, d);
    const o = linear(st, `${lp}.self_attn.out_proj`, d, d);
    const fc1 = linear(st, `${lp}.mlp.fc1`, d, 4 * d);
    const fc2 = linear(st, `${lp}.mlp.fc2`, 4 * d, d);
    layers.push({
      ln1_g: st.f32(`${lp}.layer_norm1.weight`).data,
      ln1_b: st.f32(`${lp}.layer_norm1.bias`).data,
      wq: q.w, bq: q.b, wk: kk.w, bk: kk.b, wv: v.w, bv: v.b, wo: o.w, bo: o.b,
      ln2_g: st.f32(`${lp}.layer_norm2.weight`).data,
      ln2_b: st.f32(`${lp}.layer_norm2.bias`).data,
      w1: fc1.w, b1: fc1.b, w2: fc2.w, b2: fc2.b,
    });
    for (const f of LAYER_FIELDS) {
      const arr = layers[i][f];
      for (let j = 0; j < arr.length; j++) {
        if (!Number.isFinite(arr[j])) throw new Error(`non-finite value in layer ${i} ${f}`);
      }
    }
  }

  const proj = linear(st, "text_projection", d, dImg);
  const logitScale = st.has("logit_scale")
    ? Math.exp(st.f32("logit_scale").data[0])
    : Math.exp(cfg.logitScaleInit);

  const feat = SafeTensors.fromFile(opts.featuresPath);
  const features = feat.f32("features");
  if (features.shape[1] !== dImg) {
    throw new Error(`features width ${features.shape[1]} != projection dim ${dImg}`);
  }
  const labels = feat.i64("labels").data;
  if (labels.length !== features.shape[0]) throw new Error("features/labels length mismatch");
  for (const l of labels) {
    if (l < 0 || l >= k) throw new Error(`label ${l} out of range for ${k} classes`);
  }

  const exportDoc: BackboneExport = {
    k, c, d, dImg,
    heads: cfg.heads,
    maxSeq: cfg.maxPositions,
    features: normalizeRows(features.data, dImg),
    labels: Uint32Array.from(labels),
    classTokens,
    pos: pos.data,
    layers,
    lnfG: st.f32(`${pfx}final_layer_norm.weight`).data,
    lnfB: st.f32(`${pfx}final_layer_norm.bias`).data,
    proj: proj.w,
    classNames,
    logitScale,
    trainCount: dataset.train_count,
    model: cfg.modelType,
    dataset: dataset.name,
    notes: {
      tokenizer: "whole-word vocab lookup, </w> suffix preferred",
      class_row_layout: "[pad x (c-1-len)][word tokens][eot]",
      sot_included: false,
    },
  };
  writeBackbone(opts.outPath, exportDoc);
  return {
    k, c,
    parameterCount: JSON.parse(readFileSync(`${opts.outPath}.manifest.json`, "utf8")).parameter_count,
  };
}
