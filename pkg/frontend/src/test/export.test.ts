/**
 * End-to-end exporter tests against a locally built CLIP-format fixture
 * checkpoint. The fixture generator and the validation probe are Python
 * (torch builds the checkpoint; the probe loads the export through the
 * simulator's public loader); both run as subprocesses. The whole suite
 * self-skips when that toolchain is unavailable.
 */

import assert from "node:assert/strict";
import { spawnSync } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { runExport } from "../export.js";
import { parameterCount } from "../fplb.js";
import { tokenizeClassName } from "../tokenizer.js";

const here = dirname(fileURLToPath(import.meta.url));
const scripts = join(here, "..", "..", "scripts");

function python(args: string[]): { ok: boolean; stdout: string; stderr: string } {
  const res = spawnSync("python3", args, { encoding: "utf8", timeout: 300_000 });
  return { ok: res.status === 0, stdout: res.stdout ?? "", stderr: res.stderr ?? "" };
}

const probeAvailable = python(["-c", "import torch, transformers, fedprompt"]).ok;

let fixtureDir: string | null = null;
function fixture(): string {
  if (fixtureDir === null) {
    const dir = mkdtempSync(join(tmpdir(), "fplb-fixture-"));
    const gen = python([join(scripts, "make_fixture.py"), "--out", dir]);
    assert.ok(gen.ok, `fixture generation failed:\n${gen.stderr}`);
    fixtureDir = dir;
  }
  return fixtureDir;
}

test("tokenizer resolves end-of-word forms and rejects unknown words", () => {
  const vocab = { ids: { "dog</w>": 7, cat: 9 } };
  assert.deepEqual(tokenizeClassName("Dog", vocab), [7]);
  assert.deepEqual(tokenizeClassName("cat", vocab), [9]);
  assert.throws(() => tokenizeClassName("zebra", vocab), /not in checkpoint vocabulary/);
  assert.throws(() => tokenizeClassName("  ", vocab), /empty class name/);
});

test("export round-trips through the simulator loader and beats chance", { skip: !probeAvailable }, () => {
  const dir = fixture();
  const out = join(dir, "exported.bin");
  const res = runExport({
    modelDir: join(dir, "model"),
    featuresPath: join(dir, "features.safetensors"),
    datasetPath: join(dir, "dataset.json"),
    outPath: out,
  });
  assert.equal(res.k, 12);
  assert.ok(existsSync(out));
  assert.ok(existsSync(`${out}.manifest.json`));

  const manifest = JSON.parse(readFileSync(`${out}.manifest.json`, "utf8"));
  assert.equal(manifest.parameter_count, parameterCount({
    maxSeq: manifest.max_seq, d: manifest.d, dImg: manifest.d_img,
    k: manifest.k, c: manifest.c, depth: manifest.depth,
  }));

  const probe = python([
    join(scripts, "probe.py"),
    "--backbone", out,
    "--reference", join(dir, "features.safetensors"),
  ]);
  assert.ok(probe.ok, `probe failed (loader rejected the export?):\n${probe.stderr}`);
  const report = JSON.parse(probe.stdout);
  assert.equal(report.k, 12);
  assert.ok(report.probe_samples >= 100, `only ${report.probe_samples} probe samples`);
  // acceptance bar: at least 5x the 1/k chance rate on a >=10-class probe
  assert.ok(
    report.zero_prompt_accuracy >= 5 * report.chance,
    `accuracy ${report.zero_prompt_accuracy} below 5x chance ${5 * report.chance}`,
  );
  // exported text side reproduces the reference encoder's class embeddings
  assert.ok(
    report.min_reference_cosine > 0.999,
    `exported weights diverge from reference embeddings (min cos ${report.min_reference_cosine})`,
  );
  assert.ok(Math.abs(report.logit_scale - Math.exp(3.0)) < 1e-3);
});

test("re-export of identical inputs is byte-stable", { skip: !probeAvailable }, () => {
  const dir = fixture();
  const a = join(dir, "a.bin");
  const b = join(dir, "b.bin");
  for (const out of [a, b]) {
    runExport({
      modelDir: join(dir, "model"),
      featuresPath: join(dir, "features.safetensors"),
      datasetPath: join(dir, "dataset.json"),
      outPath: out,
    });
  }
  assert.deepEqual(readFileSync(a), readFileSync(b));
  const ma = JSON.parse(readFileSync(`${a}.manifest.json`, "utf8"));
  const mb = JSON.parse(readFileSync(`${b}.manifest.json`, "utf8"));
  assert.deepEqual(ma.block_checksums, mb.block_checksums);
});

test("export rejects feature width mismatch before writing", { skip: !probeAvailable }, () => {
  const dir = fixture();
  const badOut = join(dir, "bad.bin");
  assert.throws(
    () => runExport({
      modelDir: join(dir, "model"),
      featuresPath: join(dir, "dataset.json"),
      datasetPath: join(dir, "dataset.json"),
      outPath: badOut,
    }),
  );
  assert.ok(!existsSync(badOut));
});
