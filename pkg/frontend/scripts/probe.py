#!/usr/bin/env python3
"""Probe an exported backbone file through the simulator's own loader.

Loads the file (full format validation), computes zero-prompt class weights
with the simulator's text encoder, classifies up to 100 held-out feature
rows, and optionally compares the weights against reference text embeddings
stored alongside the features. Emits one JSON object on stdout.
"""

import argparse
import json
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--backbone", required=True)
    ap.add_argument("--reference", help="safetensors file with a text_embeds tensor")
    ap.add_argument("--samples", type=int, default=100)
    args = ap.parse_args()

    from fedprompt import load_backbone
    from fedprompt.backbone import encode_classes

    bb = load_backbone(args.backbone)
    weights, _ = encode_classes(bb, None)

    te = bb.test_slice()
    feats = bb.image.features[te][: args.samples]
    labels = bb.image.labels[te][: args.samples]
    preds = (feats @ weights.T).argmax(axis=1)
    out = {
        "k": bb.num_classes,
        "c": bb.classes.tokens_per_class,
        "parameter_count": bb.parameter_count(),
        "logit_scale": bb.logit_scale,
        "probe_samples": int(len(labels)),
        "zero_prompt_accuracy": float((preds == labels).mean()),
        "chance": 1.0 / bb.num_classes,
    }

    if args.reference:
        from safetensors.numpy import load_file

        ref = load_file(args.reference)["text_embeds"]
        cos = (weights * ref).sum(axis=1) / (
            np.linalg.norm(weights, axis=1) * np.linalg.norm(ref, axis=1)
        )
        out["min_reference_cosine"] = float(cos.min())

    json.dump(out, sys.stdout)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
