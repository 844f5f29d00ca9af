#!/usr/bin/env node
/** Command-line wrapper: fplb-export --model <dir> --features <file> --dataset <json> --out <path> */

import { parseArgs } from "node:util";

import { runExport } from "./export.js";

export function main(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      model: { type: "string" },
      features: { type: "string" },
      dataset: { type: "string" },
      out: { type: "string" },
    },
  });
  for (const key of ["model", "features", "dataset", "out"] as const) {
    if (!values[key]) {
      console.error(`usage: fplb-export --model <dir> --features <safetensors> --dataset <json> --out <path>`);
      return 2;
    }
  }
  try {
    const res = runExport({
      modelDir: values.model!,
      featuresPath: values.features!,
      datasetPath: values.dataset!,
      outPath: values.out!,
    });
    console.log(
      `wrote ${values.out} (${res.k} classes, ${res.c} token rows/class, ` +
      `${res.parameterCount} parameters)`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
