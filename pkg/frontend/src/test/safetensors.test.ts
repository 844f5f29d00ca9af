import assert from "node:assert/strict";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { test } from "node:test";

import { SafeTensors, writeSafeTensors } from "../safetensors.js";

test("safetensors round-trip for F32 and I64", () => {
  const dir = mkdtempSync(join(tmpdir(), "st-"));
  const path = join(dir, "t.safetensors");
  const feats = Float32Array.from([1.5, -2, 0.25, 4, 0, 1]);
  const labels = BigInt64Array.from([0n, 1n, 2n]);
  writeSafeTensors(path, {
    feats: { dtype: "F32", shape: [2, 3], data: feats },
    labels: { dtype: "I64", shape: [3], data: labels },
  });

  const st = SafeTensors.fromFile(path);
  assert.deepEqual(st.names().sort(), ["feats", "labels"]);
  const f = st.f32("feats");
  assert.deepEqual(f.shape, [2, 3]);
  assert.deepEqual(Array.from(f.data), Array.from(feats));
  const l = st.i64("labels");
  assert.deepEqual(l.data, [0, 1, 2]);
});

test("safetensors rejects wrong dtype and missing tensors", () => {
  const dir = mkdtempSync(join(tmpdir(), "st-"));
  const path = join(dir, "t.safetensors");
  writeSafeTensors(path, {
    x: { dtype: "F32", shape: [1], data: Float32Array.from([1]) },
  });
  const st = SafeTensors.fromFile(path);
  assert.throws(() => st.i64("x"), /dtype/);
  assert.throws(() => st.f32("nope"), /missing tensor/);
});

test("safetensors rejects truncated files", () => {
  assert.throws(() => new SafeTensors(Buffer.from([1, 2, 3])), /too short/);
});
