"""The frozen dual encoder.

The image branch is a precomputed table of unit-norm feature rows (the image
encoder itself never runs here). The text branch is a small causal pre-LN
transformer mapping a [prompt rows][class token rows] sequence to a unit
class-weight vector: add positional embeddings, run the block stack, apply
the final norm, pool the last sequence position, project to the image
feature width, and L2-normalize. A depth-0 encoder degenerates to
projection-only (pool, project, normalize).

Everything in this module is frozen after load; training code treats these
arrays as read-only and copies anything it wants to mutate.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedprompt import layers as L
from fedprompt.errors import ConfigError, DataError, FormatError, ShapeError
from fedprompt.tensor import F32, Tensor, as_f32
from fedprompt.utils import TAG_BACKBONE, buffer_checksum, rng_for

MAGIC = b"FPLB"
VERSION = 1
MLP_RATIO = 4
NORM_TOL = 1e-5


@dataclass
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    _FIELDS = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
               "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")

    def arrays(self):
        return [getattr(self, f) for f in self._FIELDS]

    @classmethod
    def shapes(cls, d: int):
        h = MLP_RATIO * d
        return [(d,), (d,), (d, d), (d,), (d, d), (d,), (d, d), (d,),
                (d, d), (d,), (d,), (d,), (d, h), (h,), (h, d), (d,)]


@dataclass
class FrozenTextEncoder:
    pos: np.ndarray                 # (S, d)
    blocks: list[LayerWeights]
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    proj: np.ndarray                # (d, d_img)
    n_heads: int

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.pos.shape[1]

    @property
    def max_seq(self) -> int:
        return self.pos.shape[0]

    def param_items(self):
        """Fixed-order (name, array) walk over every parameter."""
        yield "pos", self.pos
        for i, blk in enumerate(self.blocks):
            for f in LayerWeights._FIELDS:
                yield f"blocks.{i}.{f}", getattr(blk, f)
        yield "lnf_g", self.lnf_g
        yield "lnf_b", self.lnf_b
        yield "proj", self.proj

    def parameter_count(self) -> int:
        return sum(a.size for _, a in self.param_items())


@dataclass
class ImageFeatureTable:
    features: np.ndarray            # (N, d_img), unit-norm rows
    labels: np.ndarray              # (N,), int64 in [0, k)

    def validate(self, k: int) -> None:
        norms = np.linalg.norm(self.features, axis=1)
        bad = np.where(np.abs(norms - 1.0) > NORM_TOL)[0]
        if bad.size:
            raise DataError(f"feature row {bad[0]} has norm {norms[bad[0]]:.6f}, expected 1")
        if self.labels.min(initial=0) < 0 or (self.labels.size and self.labels.max() >= k):
            raise DataError("label out of range")


@dataclass
class ClassTokenEmbeddings:
    table: np.ndarray               # (k, c, d)

    @property
    def num_classes(self) -> int:
        return self.table.shape[0]

    @property
    def tokens_per_class(self) -> int:
        return self.table.shape[1]


@dataclass
class Backbone:
    image: ImageFeatureTable
    text: FrozenTextEncoder
    classes: ClassTokenEmbeddings
    class_names: list[str]
    logit_scale: float = 1.0
    train_count: int | None = None
    manifest: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.classes.num_classes

    @property
    def d_img(self) -> int:
        return self.image.features.shape[1]

    def parameter_count(self) -> int:
        """Model parameters shipped to clients: text encoder + class tokens.

        Image feature rows are data, not parameters."""
        return self.text.parameter_count() + self.classes.table.size

    def checksum(self) -> str:
        arrays = [self.image.features, self.image.labels, self.classes.table]
        arrays += [a for _, a in self.text.param_items()]
        return buffer_checksum(arrays)

    def train_slice(self) -> slice:
        n = self.image.features.shape[0]
        t = self.train_count if self.train_count is not None else n
        return slice(0, t)

    def test_slice(self) -> slice:
        n = self.image.features.shape[0]
        t = self.train_count if self.train_count is not None else n
        return slice(t, n)


# ----------------------------------------------------------- text forward

def _build_input(backbone: Backbone, prompt: np.ndarray | None, class_ids) -> np.ndarray:
    K = backbone.classes.table
    ids = np.arange(backbone.num_classes) if class_ids is None else np.asarray(class_ids)
    rows = K[ids]                              # (B, c, d)
    if prompt is None or prompt.shape[0] == 0:
        return np.ascontiguousarray(rows, dtype=F32)
    p = prompt.shape[0]
    b, c, d = rows.shape
    x = np.empty((b, p + c, d), dtype=F32)
    x[:, :p, :] = prompt
    x[:, p:, :] = rows
    return x


def text_forward(text: FrozenTextEncoder, x0: np.ndarray):
    """Run the encoder on (B, T, d) input rows; returns (W, cache) with W the
    (B, d_img) unit class-weight matrix."""
    b, t, d = x0.shape
    if text.depth == 0:
        pooled = np.ascontiguousarray(x0[:, -1, :])
        wv = L._mm(pooled, text.proj)
        norms = np.linalg.norm(wv, axis=1, keepdims=True).astype(F32)
        return (wv / norms).astype(F32), ("deg", pooled, wv, norms, x0.shape)

    if t > text.max_seq:
        raise ConfigError(f"sequence length {t} exceeds encoder maximum {text.max_seq}")
    x = x0 + text.pos[:t]
    caches = []
    for blk in text.blocks:
        h1, c_ln1 = L.layernorm_forward(x, blk.ln1_g, blk.ln1_b)
        a, c_at = L.attention_forward(
            h1, blk.wq, blk.bq, blk.wk, blk.bk, blk.wv, blk.bv,
            blk.wo, blk.bo, text.n_heads, causal=True,
        )
        x = x + a
        h2, c_ln2 = L.layernorm_forward(x, blk.ln2_g, blk.ln2_b)
        m1, c_l1 = L.linear_forward(h2, blk.w1, blk.b1)
        g, c_g = L.quickgelu_forward(m1)
        m2, c_l2 = L.linear_forward(g, blk.w2, blk.b2)
        x = x + m2
        caches.append((c_ln1, c_at, c_ln2, c_l1, c_g, c_l2))
    hf, c_lnf = L.layernorm_forward(x, text.lnf_g, text.lnf_b)
    pooled = np.ascontiguousarray(hf[:, -1, :])
    wv = L._mm(pooled, text.proj)
    norms = np.linalg.norm(wv, axis=1, keepdims=True).astype(F32)
    w = (wv / norms).astype(F32)
    return w, ("full", caches, c_lnf, pooled, wv, norms, x0.shape)


def _normalize_backward(dw, wv, norms):
    w_hat = wv / norms
    dot = (dw * w_hat).sum(axis=1, keepdims=True, dtype=F32)
    return ((dw - w_hat * dot) / norms).astype(F32)


def text_backward(dw: np.ndarray, cache, text: FrozenTextEncoder, with_params: bool = False):
    """Propagate dLoss/dW back to the input rows.

    Returns (dx0, param_grads); param_grads is a name->array dict matching
    ``param_items`` order when requested, else None.
    """
    grads: dict[str, np.ndarray] = {}
    if cache[0] == "deg":
        _, pooled, wv, norms, in_shape = cache
        dv = _normalize_backward(dw, wv, norms)
        dpooled = L._mm_nt(dv, text.proj)
        if with_params:
            grads["proj"] = L._mm_tn(pooled, dv)
        dx0 = np.zeros(in_shape, dtype=F32)
        dx0[:, -1, :] = dpooled
        return dx0, (grads if with_params else None)

    _, caches, c_lnf, pooled, wv, norms, in_shape = cache
    b, t, d = in_shape
    dv = _normalize_backward(dw, wv, norms)
    dpooled = L._mm_nt(dv, text.proj)
    if with_params:
        grads["proj"] = L._mm_tn(pooled, dv)
    dhf = np.zeros((b, t, d), dtype=F32)
    dhf[:, -1, :] = dpooled
    dx, g_lnf = L.layernorm_backward(dhf, c_lnf, with_params)
    if with_params:
        grads["lnf_g"], grads["lnf_b"] = g_lnf
    for i in range(text.depth - 1, -1, -1):
        c_ln1, c_at, c_ln2, c_l1, c_g, c_l2 = caches[i]
        dg, g_l2 = L.linear_backward(dx, c_l2, with_params)
        dm1, _ = L.quickgelu_backward(dg, c_g)
        dh2, g_l1 = L.linear_backward(dm1, c_l1, with_params)
        dmid_ln, g_ln2 = L.layernorm_backward(dh2, c_ln2, with_params)
        dmid = dx + dmid_ln
        dh1, g_at = L.attention_backward(dmid, c_at, with_params)
        din_ln, g_ln1 = L.layernorm_backward(dh1, c_ln1, with_params)
        dx = dmid + din_ln
        if with_params:
            pre = f"blocks.{i}."
            grads[pre + "ln2_g"], grads[pre + "ln2_b"] = g_ln2
            grads[pre + "ln1_g"], grads[pre + "ln1_b"] = g_ln1
            grads[pre + "w1"], grads[pre + "b1"] = g_l1
            grads[pre + "w2"], grads[pre + "b2"] = g_l2
            (grads[pre + "wq"], grads[pre + "bq"]) = g_at[0]
            (grads[pre + "wk"], grads[pre + "bk"]) = g_at[1]
            (grads[pre + "wv"], grads[pre + "bv"]) = g_at[2]
            (grads[pre + "wo"], grads[pre + "bo"]) = g_at[3]
    if with_params:
        dpos = np.zeros_like(text.pos)
        dpos[:t] = dx.sum(axis=0, dtype=F32)
        grads["pos"] = dpos
    return dx, (grads if with_params else None)


def encode_classes(backbone: Backbone, prompt: np.ndarray | None, class_ids=None):
    """Class weight vectors w_i for all (or the given) classes under prompt rows.

    Weights are computed in one batch; the cache supports backprop to the
    prompt block (and, when asked, to every text parameter)."""
    x0 = _build_input(backbone, prompt, class_ids)
    w, cache = text_forward(backbone.text, x0)
    p = 0 if prompt is None else prompt.shape[0]
    return w, (cache, p, class_ids)


def encode_backward(dw, enc_cache, backbone: Backbone, with_params: bool = False):
    """Gradients of the encoded weights: returns (dprompt, param_grads, dclass).

    dclass is the (k, c, d) gradient of the class token table (with_params only)."""
    cache, p, class_ids = enc_cache
    dx0, grads = text_backward(dw, cache, backbone.text, with_params)
    dprompt = dx0[:, :p, :].sum(axis=0, dtype=F32) if p else None
    dclass = None
    if with_params:
        dclass = np.zeros_like(backbone.classes.table)
        ids = (np.arange(backbone.num_classes) if class_ids is None
               else np.asarray(class_ids))
        np.add.at(dclass, ids, dx0[:, p:, :])
    return dprompt, grads, dclass


def encode_class(backbone: Backbone, prompt: Tensor | None, class_id: int) -> Tensor:
    """Single-class weight vector w_i (unit norm). Differentiable w.r.t. the
    prompt only via ``encode_classes``/``encode_backward``."""
    if not 0 <= class_id < backbone.num_classes:
        raise ShapeError(f"class id {class_id} out of range")
    parr = None if prompt is None else prompt.data
    w, _ = encode_classes(backbone, parr, [class_id])
    return Tensor(w[0], validate=False)


# ------------------------------------------------------------- binary I/O

def _layer_param_count(d: int) -> int:
    return sum(int(np.prod(s)) for s in LayerWeights.shapes(d))


def save_backbone(path, backbone: Backbone) -> None:
    path = Path(path)
    feats = backbone.image.features
    labels = backbone.image.labels.astype("<u4")
    k, c, d = backbone.classes.table.shape
    d_img = feats.shape[1]
    text = backbone.text
    header = struct.pack(
        "<4sIIIIIIIIQ", MAGIC, VERSION, k, c, d, d_img,
        text.depth, text.n_heads, text.max_seq, feats.shape[0],
    )
    blocks: list[bytes] = [np.ascontiguousarray(text.pos, dtype="<f4").tobytes()]
    for blk in text.blocks:
        blocks.append(b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in blk.arrays()))
    blocks.append(np.ascontiguousarray(text.lnf_g, dtype="<f4").tobytes()
                  + np.ascontiguousarray(text.lnf_b, dtype="<f4").tobytes())

    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
        f.write(labels.tobytes())
        f.write(np.ascontiguousarray(backbone.classes.table, dtype="<f4").tobytes())
        for blob in blocks:
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
        f.write(np.ascontiguousarray(text.proj, dtype="<f4").tobytes())

    manifest = {
        "class_names": backbone.class_names,
        "parameter_count": backbone.parameter_count(),
        "logit_scale": backbone.logit_scale,
        "train_count": backbone.train_count,
        "k": k, "c": c, "d": d, "d_img": d_img,
        "depth": text.depth, "heads": text.n_heads, "max_seq": text.max_seq,
        "num_samples": int(feats.shape[0]),
        "block_checksums": [buffer_checksum([np.frombuffer(b, dtype=np.uint8)]) for b in blocks],
    }
    manifest.update(backbone.manifest)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def f32(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(F32)


def load_backbone(path) -> Backbone:
    """Read and validate a backbone file plus its sidecar manifest."""
    path = Path(path)
    r = _Reader(path.read_bytes())
    head = r.take(struct.calcsize("<4sIIIIIIIIQ"), "header")
    magic, version, k, c, d, d_img, depth, heads, max_seq, n = struct.unpack("<4sIIIIIIIIQ", head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if k < 2 or c < 1 or d < 1 or d_img < 1 or heads < 1 or max_seq < 1:
        raise FormatError("nonsensical header dimensions")
    if d % heads != 0:
        raise DataError(f"width {d} not divisible by {heads} heads")

    feats = r.f32(n * d_img, "image features").reshape(n, d_img)
    labels = np.frombuffer(r.take(4 * n, "labels"), dtype="<u4").astype(np.int64)
    ktab = r.f32(k * c * d, "class token embeddings").reshape(k, c, d)

    expected = [("pos", max_seq * d)]
    expected += [(f"layer {i}", _layer_param_count(d)) for i in range(depth)]
    expected.append(("final norm", 2 * d))
    raw_blocks = []
    for name, count in expected:
        (length,) = struct.unpack("<Q", r.take(8, f"{name} length prefix"))
        if length != 4 * count:
            raise DataError(f"{name} block length {length} != expected {4 * count}")
        raw_blocks.append(r.f32(count, name))
    proj = r.f32(d * d_img, "projection").reshape(d, d_img)
    if r.off != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.off} trailing bytes after projection")

    nonfinite = ~np.isfinite(feats)
    if nonfinite.any():
        row = int(np.where(nonfinite.any(axis=1))[0][0])
        raise DataError(f"non-finite value in feature row {row}")
    for name, arr in [("class tokens", ktab), ("projection", proj)] + list(zip([e[0] for e in expected], raw_blocks)):
        if not np.isfinite(arr).all():
            raise DataError(f"non-finite value in {name}")

    pos = raw_blocks[0].reshape(max_seq, d)
    blocks = []
    for i in range(depth):
        flat = raw_blocks[1 + i]
        vals, off = [], 0
        for shp in LayerWeights.shapes(d):
            cnt = int(np.prod(shp))
            vals.append(flat[off : off + cnt].reshape(shp))
            off += cnt
        blocks.append(LayerWeights(*vals))
    lnf = raw_blocks[-1]
    text = FrozenTextEncoder(pos=pos, blocks=blocks, lnf_g=lnf[:d], lnf_b=lnf[d:], proj=proj, n_heads=heads)

    meta = {}
    mpath = manifest_path(path)
    if mpath.exists():
        meta = json.loads(mpath.read_text())
    names = meta.get("class_names") or [f"class_{i:02d}" for i in range(k)]
    if len(names) != k:
        raise DataError(f"manifest lists {len(names)} class names for {k} classes")
    bb = Backbone(
        image=ImageFeatureTable(features=feats, labels=labels),
        text=text,
        classes=ClassTokenEmbeddings(table=ktab),
        class_names=list(names),
        logit_scale=float(meta.get("logit_scale", 1.0)),
        train_count=meta.get("train_count"),
        manifest=meta,
    )
    bb.image.validate(k)
    declared = meta.get("parameter_count")
    if declared is not None and declared != bb.parameter_count():
        raise DataError(f"manifest parameter_count {declared} != computed {bb.parameter_count()}")
    return bb


# ------------------------------------------------------ synthetic backbone

def generate_synthetic_backbone(
    k: int,
    d: int,
    depth: int,
    seed: int,
    samples_per_class: int,
    noise: float,
    *,
    d_img: int | None = None,
    n_heads: int | None = None,
    c: int = 1,
    max_seq: int = 32,
    test_per_class: int | None = None,
    alignment: float = 0.7,
    prompt_len_hint: int = 8,
    logit_scale: float = 1.0,
) -> Backbone:
    """Desk-scale stand-in for a pretrained dual encoder.

    Class prototypes are blended from the text-route weights under an
    all-zero prompt of ``prompt_len_hint`` rows (weight ``alignment``) and an
    independent random direction, so the frozen model starts out partially
    aligned with the image features, the way a pretrained encoder would, and
    training a prompt of that length closes the remaining gap. Image
    features are normalize(prototype + noise). Deterministic in seed.
    """
    if k < 2 or d < 4 or depth < 1:
        raise ConfigError("need k >= 2, d >= 4, depth >= 1")
    if not 0.0 <= alignment <= 1.0:
        raise ConfigError("alignment must be in [0, 1]")
    d_img = d_img or d
    if n_heads is None:
        n_heads = 4 if d % 4 == 0 else 1
    if d % n_heads != 0:
        raise ConfigError(f"width {d} not divisible by {n_heads} heads")
    if c >= max_seq:
        raise ConfigError("class token count must leave room for prompts")
    test_per_class = samples_per_class if test_per_class is None else test_per_class

    rng = rng_for(seed, TAG_BACKBONE)
    norm = lambda shape: rng.normal(0.0, 0.02, size=shape).astype(F32)

    blocks = []
    for _ in range(depth):
        vals = [norm(s) for s in LayerWeights.shapes(d)]
        blk = LayerWeights(*vals)
        blk.ln1_g = np.ones(d, dtype=F32)
        blk.ln1_b = np.zeros(d, dtype=F32)
        blk.ln2_g = np.ones(d, dtype=F32)
        blk.ln2_b = np.zeros(d, dtype=F32)
        blocks.append(blk)
    text = FrozenTextEncoder(
        pos=norm((max_seq, d)),
        blocks=blocks,
        lnf_g=np.ones(d, dtype=F32),
        lnf_b=np.zeros(d, dtype=F32),
        proj=norm((d, d_img)),
        n_heads=n_heads,
    )
    ktab = norm((k, c, d))

    if prompt_len_hint + c > max_seq:
        raise ConfigError("prompt_len_hint leaves no room inside max_seq")
    shell = Backbone(
        image=ImageFeatureTable(features=np.zeros((1, d_img), dtype=F32), labels=np.zeros(1, dtype=np.int64)),
        text=text,
        classes=ClassTokenEmbeddings(table=ktab),
        class_names=[f"class_{i:02d}" for i in range(k)],
    )
    ref_prompt = np.zeros((prompt_len_hint, d), dtype=F32) if prompt_len_hint else None
    w0, _ = encode_classes(shell, ref_prompt)

    protos = np.empty((k, d_img), dtype=F32)
    for i in range(k):
        u = rng.standard_normal(d_img).astype(F32)
        u /= np.linalg.norm(u)
        v = alignment * w0[i] + (1.0 - alignment) * u
        protos[i] = v / np.linalg.norm(v)

    def draw(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        feats = np.empty((k * per_class, d_img), dtype=F32)
        labels = np.empty(k * per_class, dtype=np.int64)
        for i in range(k):
            block = protos[i] + noise * rng.standard_normal((per_class, d_img))
            block /= np.linalg.norm(block, axis=1, keepdims=True)
            feats[i * per_class : (i + 1) * per_class] = block
            labels[i * per_class : (i + 1) * per_class] = i
        return feats, labels

    train_f, train_y = draw(samples_per_class)
    test_f, test_y = draw(test_per_class)
    table = ImageFeatureTable(
        features=np.concatenate([train_f, test_f]),
        labels=np.concatenate([train_y, test_y]),
    )
    return Backbone(
        image=table,
        text=text,
        classes=ClassTokenEmbeddings(table=ktab),
        class_names=[f"class_{i:02d}" for i in range(k)],
        logit_scale=logit_scale,
        train_count=k * samples_per_class,
        manifest={
            "model": "synthetic",
            "generator": {
                "seed": seed, "noise": noise, "alignment": alignment,
                "prompt_len_hint": prompt_len_hint,
                "samples_per_class": samples_per_class,
                "test_per_class": test_per_class,
            },
        },
    )
