#!/usr/bin/env python3
"""Build a desk-scale CLIP-format checkpoint plus an aligned feature set.

Produces the exact directory layout a pretrained vision-language checkpoint
ships in (config.json + model.safetensors + vocab.json), a precomputed
image-feature file, and a dataset manifest. Image features are drawn around
the checkpoint's own projected text embeddings, standing in for the aligned
image tower that a really pretrained model would provide, so a zero-prompt
classifier built from the exported text side is genuinely predictive.

Requires torch + transformers (the reference implementation of the text
encoder family being exported).
"""

import argparse
import json
from pathlib import Path

import numpy as np
import torch
from safetensors.numpy import save_file
from transformers import CLIPTextConfig, CLIPTextModelWithProjection

CLASS_NAMES = [
    "apple", "bird", "car", "dog", "fish", "house",
    "lamp", "moon", "river", "tree", "cloud", "stone",
]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--noise", type=float, default=0.15)
    ap.add_argument("--train-per-class", type=int, default=12)
    ap.add_argument("--test-per-class", type=int, default=9)
    args = ap.parse_args()

    out = Path(args.out)
    model_dir = out / "model"
    model_dir.mkdir(parents=True, exist_ok=True)

    words = CLASS_NAMES
    # pad=0, sot=1, words 2..; eot is the highest id so every pooling
    # convention (explicit eos match or argmax legacy) lands on it
    vocab = {"<pad>": 0, "<sot>": 1}
    for i, w in enumerate(words):
        vocab[f"{w}</w>"] = 2 + i
    eot_id = 2 + len(words)
    vocab["<eot>"] = eot_id

    torch.manual_seed(args.seed)
    cfg = CLIPTextConfig(
        vocab_size=eot_id + 1,
        hidden_size=args.hidden,
        intermediate_size=4 * args.hidden,
        num_hidden_layers=args.layers,
        num_attention_heads=args.heads,
        max_position_embeddings=16,
        hidden_act="quick_gelu",
        projection_dim=args.hidden,
        eos_token_id=eot_id,
        bos_token_id=1,
        pad_token_id=0,
    )
    model = CLIPTextModelWithProjection(cfg).eval()

    input_ids = torch.tensor([[2 + i, eot_id] for i in range(len(words))])
    with torch.no_grad():
        text_embeds = model(input_ids=input_ids).text_embeds.numpy()
    text_embeds = text_embeds / np.linalg.norm(text_embeds, axis=1, keepdims=True)

    model.save_pretrained(model_dir, safe_serialization=True)
    cfg_doc = json.loads((model_dir / "config.json").read_text())
    cfg_doc["logit_scale_init_value"] = 3.0
    (model_dir / "config.json").write_text(json.dumps(cfg_doc, indent=2, sort_keys=True) + "\n")
    (model_dir / "vocab.json").write_text(json.dumps(vocab, indent=2, sort_keys=True) + "\n")

    rng = np.random.default_rng(args.seed)
    k, d_img = text_embeds.shape

    def draw(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        feats = np.empty((k * per_class, d_img), dtype=np.float32)
        labels = np.empty(k * per_class, dtype=np.int64)
        for i in range(k):
            block = text_embeds[i] + args.noise * rng.standard_normal((per_class, d_img))
            feats[i * per_class:(i + 1) * per_class] = block
            labels[i * per_class:(i + 1) * per_class] = i
        return feats, labels

    train_f, train_y = draw(args.train_per_class)
    test_f, test_y = draw(args.test_per_class)
    save_file(
        {
            "features": np.concatenate([train_f, test_f]).astype(np.float32),
            "labels": np.concatenate([train_y, test_y]),
            "text_embeds": text_embeds.astype(np.float32),
        },
        str(out / "features.safetensors"),
    )
    (out / "dataset.json").write_text(json.dumps({
        "name": "synthwords12",
        "class_names": words,
        "train_count": int(k * args.train_per_class),
    }, indent=2, sort_keys=True) + "\n")
    print(f"fixture written to {out} ({k} classes, hidden={args.hidden}, layers={args.layers})")


if __name__ == "__main__":
    main()
