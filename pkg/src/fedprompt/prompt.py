"""The trainable prompt block and its training objective.

A single prompt matrix P (p rows of width d) is shared across all classes
and prepended to every class token sequence. The forward pass scores a batch
of image features against the encoded class weights by cosine similarity,
softmax-normalized; the loss is mean cross-entropy and its gradient reaches
P only — no other parameter anywhere receives a gradient on this path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedprompt import _kernels as K
from fedprompt.backbone import Backbone, encode_backward, encode_classes
from fedprompt.errors import DataError, FormatError, ShapeError
from fedprompt.layers import _mm_nt, _mm_tn
from fedprompt.tensor import F32, Tensor
from fedprompt.utils import TAG_PROMPT_INIT, rng_for

CHECKPOINT_MAGIC = b"FPLP"
CHECKPOINT_VERSION = 1


@dataclass
class PromptVectors:
    """p learnable d-wide rows; the only federated payload under prompt training."""

    table: np.ndarray  # (p, d) float32

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[0] < 1:
            raise ShapeError("prompt table must be (p >= 1, d)")
        if not np.isfinite(self.table).all():
            raise DataError("prompt table contains non-finite entries")
        self.table = np.ascontiguousarray(self.table, dtype=F32)

    @property
    def length(self) -> int:
        return self.table.shape[0]

    @property
    def width(self) -> int:
        return self.table.shape[1]

    @property
    def size(self) -> int:
        return self.table.size

    def copy(self) -> "PromptVectors":
        return PromptVectors(self.table.copy())


def init_prompt(p: int, d: int, seed: int) -> PromptVectors:
    """Seeded N(0, 0.02) initialization; keeps early logits small."""
    rng = rng_for(seed, TAG_PROMPT_INIT)
    return PromptVectors(rng.normal(0.0, 0.02, size=(p, d)).astype(F32))


def resolve_tau(backbone: Backbone, tau: float | None) -> float:
    """Explicit temperature wins; otherwise the backbone's exported logit scale."""
    if tau is not None:
        if tau <= 0:
            raise DataError("temperature must be positive")
        return float(tau)
    return 1.0 / float(backbone.logit_scale)


def class_weights(backbone: Backbone, prompt: PromptVectors | None):
    """Unit-norm class weight matrix (k, d_img) for the current prompt."""
    table = None if prompt is None else prompt.table
    w, cache = encode_classes(backbone, table)
    return w, cache


def predict(
    prompt: PromptVectors | None,
    x_feat: np.ndarray,
    backbone: Backbone,
    tau: float | None = None,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Row-wise class probabilities: softmax over cosine(g(x), w_j) / tau.

    ``weights`` short-circuits the text encoder when the class weights for
    this prompt were already computed for the batch."""
    x = np.ascontiguousarray(x_feat, dtype=F32)
    if x.ndim != 2 or x.shape[1] != backbone.d_img:
        raise ShapeError(f"feature batch must be (n, {backbone.d_img})")
    w = class_weights(backbone, prompt)[0] if weights is None else weights
    t = resolve_tau(backbone, tau)
    logits = _mm_nt(x, w) * F32(1.0 / t)
    return K.softmax_rows(logits)


def loss_and_grad(
    prompt: PromptVectors,
    x_feat: np.ndarray,
    labels: np.ndarray,
    backbone: Backbone,
    tau: float | None = None,
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true labels and its gradient w.r.t. P."""
    x = np.ascontiguousarray(x_feat, dtype=F32)
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    if y.shape != (x.shape[0],):
        raise ShapeError("labels must match batch size")
    if y.min() < 0 or y.max() >= backbone.num_classes:
        raise DataError("label out of range")

    w, cache = class_weights(backbone, prompt)
    t = resolve_tau(backbone, tau)
    inv_t = F32(1.0 / t)
    logits = _mm_nt(x, w) * inv_t
    probs = K.softmax_rows(logits)
    n = x.shape[0]
    # clamp away exact zeros so a fully saturated miss reports a finite loss
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-38)).mean())

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= F32(1.0)
    dlogits *= F32(1.0 / n)
    dw = _mm_tn(dlogits, x) * inv_t
    dprompt, _, _ = encode_backward(dw, cache, backbone, with_params=False)
    return loss, dprompt


def trainable_parameter_ratio(prompt_params: int, backbone_params: int) -> float:
    """Fraction of all parameters that training actually updates."""
    return prompt_params / (backbone_params + prompt_params)


def save_prompt(path, prompt: PromptVectors) -> None:
    p, d = prompt.table.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, p, d))
        f.write(np.ascontiguousarray(prompt.table, dtype="<f4").tobytes())


def load_prompt(path) -> PromptVectors:
    raw = Path(path).read_bytes()
    hdr = struct.calcsize("<4sIII")
    if len(raw) < hdr:
        raise FormatError("truncated prompt checkpoint")
    magic, version, p, d = struct.unpack("<4sIII", raw[:hdr])
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if len(raw) != hdr + 4 * p * d:
        raise FormatError("prompt checkpoint payload size mismatch")
    table = np.frombuffer(raw[hdr:], dtype="<f4").reshape(p, d).astype(F32)
    return PromptVectors(table)
