"""Trainable models behind the federation loop, as flat parameter vectors.

The server and wire protocol only ever see a 1-D float32 vector theta; each
trainer owns the packing. ``promptfl`` trains the p x d prompt block alone.
``finetune``/``scratch`` train the whole text side (positional table, every
block, final norm, projection, class token embeddings) plus a linear
classification head over image features, with cosine and head logits added:
the usual full-model federated baselines, scaled to run on frozen image
features. The loaded backbone is copied, never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedprompt import _kernels as K
from fedprompt.backbone import (
    Backbone,
    ClassTokenEmbeddings,
    FrozenTextEncoder,
    LayerWeights,
    encode_backward,
    encode_classes,
)
from fedprompt.errors import ConfigError, ShapeError
from fedprompt.layers import _mm_nt, _mm_tn
from fedprompt.prompt import PromptVectors, init_prompt, resolve_tau
from fedprompt.prompt import loss_and_grad as _prompt_loss_and_grad
from fedprompt.prompt import predict as _prompt_predict
from fedprompt.tensor import F32
from fedprompt.utils import TAG_BASELINE_INIT, rng_for

TRAINERS = ("promptfl", "finetune", "scratch")


@dataclass
class Trainer:
    """Uniform surface over a flat theta: init, loss/grad, and prediction."""

    name: str
    backbone: Backbone
    tau: float

    def init_theta(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grad(self, theta, x, y):
        raise NotImplementedError

    def probabilities(self, theta, x):
        raise NotImplementedError

    @property
    def trainable_params(self) -> int:
        raise NotImplementedError


class PromptTrainer(Trainer):
    def __init__(self, backbone: Backbone, prompt_len: int, tau: float | None):
        super().__init__("promptfl", backbone, resolve_tau(backbone, tau))
        if prompt_len < 1:
            raise ConfigError("prompt length must be >= 1")
        self.prompt_len = prompt_len
        self.width = backbone.text.width

    @property
    def trainable_params(self) -> int:
        return self.prompt_len * self.width

    def init_theta(self, seed: int) -> np.ndarray:
        return init_prompt(self.prompt_len, self.width, seed).table.ravel().copy()

    def _prompt(self, theta) -> PromptVectors:
        return PromptVectors(theta.reshape(self.prompt_len, self.width))

    def loss_and_grad(self, theta, x, y):
        loss, g = _prompt_loss_and_grad(self._prompt(theta), x, y, self.backbone, tau=self.tau)
        return loss, g.ravel()

    def probabilities(self, theta, x):
        return _prompt_predict(self._prompt(theta), x, self.backbone, tau=self.tau)


class _ParamView:
    """Named views into one flat vector, in a fixed declared order."""

    def __init__(self, specs: list[tuple[str, tuple]]):
        self.specs = specs
        self.size = sum(int(np.prod(s)) for _, s in specs)
        self.offsets = {}
        off = 0
        for name, shape in specs:
            cnt = int(np.prod(shape))
            self.offsets[name] = (off, cnt, shape)
            off += cnt

    def view(self, theta: np.ndarray, name: str) -> np.ndarray:
        off, cnt, shape = self.offsets[name]
        return theta[off : off + cnt].reshape(shape)

    def pack(self, arrays: dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.size, dtype=F32)
        for name, (off, cnt, shape) in self.offsets.items():
            a = arrays.get(name)
            if a is not None:
                out[off : off + cnt] = np.asarray(a, dtype=F32).ravel()
        return out


class _BackboneView:
    """Duck-typed stand-in for Backbone over trainable copies of its arrays."""

    def __init__(self, text: FrozenTextEncoder, classes: ClassTokenEmbeddings, num_classes: int):
        self.text = text
        self.classes = classes
        self.num_classes = num_classes


class FullModelTrainer(Trainer):
    """finetune / scratch: every text-side parameter plus a feature-space head."""

    def __init__(self, backbone: Backbone, mode: str, tau: float | None):
        if mode not in ("finetune", "scratch"):
            raise ConfigError(f"not a baseline mode: {mode!r}")
        super().__init__(mode, backbone, resolve_tau(backbone, tau))
        k = backbone.num_classes
        d_img = backbone.d_img
        specs = [(name, arr.shape) for name, arr in backbone.text.param_items()]
        specs.append(("class_tokens", backbone.classes.table.shape))
        specs.append(("head_w", (k, d_img)))
        specs.append(("head_b", (k,)))
        self.codec = _ParamView(specs)
        self.n_heads = backbone.text.n_heads
        self.depth = backbone.text.depth
        self.width = backbone.text.width

    @property
    def trainable_params(self) -> int:
        return self.codec.size

    def init_theta(self, seed: int) -> np.ndarray:
        if self.name == "finetune":
            arrays = {name: arr for name, arr in self.backbone.text.param_items()}
            arrays["class_tokens"] = self.backbone.classes.table
            return self.codec.pack(arrays)  # head stays zero
        rng = rng_for(seed, TAG_BASELINE_INIT)
        arrays = {}
        for name, (off, cnt, shape) in self.codec.offsets.items():
            if name.endswith(("ln1_g", "ln2_g", "lnf_g")):
                arrays[name] = np.ones(shape, dtype=F32)
            elif name.endswith(("ln1_b", "ln2_b", "lnf_b")) or name.startswith("head"):
                arrays[name] = np.zeros(shape, dtype=F32)
            else:
                arrays[name] = rng.normal(0.0, 0.02, size=shape).astype(F32)
        return self.codec.pack(arrays)

    def _model(self, theta: np.ndarray) -> _BackboneView:
        v = lambda n: self.codec.view(theta, n)
        blocks = [
            LayerWeights(*[v(f"blocks.{i}.{f}") for f in LayerWeights._FIELDS])
            for i in range(self.depth)
        ]
        text = FrozenTextEncoder(
            pos=v("pos"), blocks=blocks, lnf_g=v("lnf_g"), lnf_b=v("lnf_b"),
            proj=v("proj"), n_heads=self.n_heads,
        )
        classes = ClassTokenEmbeddings(table=v("class_tokens"))
        return _BackboneView(text, classes, self.backbone.num_classes)

    def _logits(self, theta, x):
        model = self._model(theta)
        w, cache = encode_classes(model, None)
        head_w = self.codec.view(theta, "head_w")
        head_b = self.codec.view(theta, "head_b")
        inv_t = F32(1.0 / self.tau)
        logits = (_mm_nt(x, w) + _mm_nt(x, head_w) + head_b) * inv_t
        return logits, w, cache, model, inv_t

    def loss_and_grad(self, theta, x, y):
        x = np.ascontiguousarray(x, dtype=F32)
        y = np.asarray(y)
        if x.shape[0] == 0:
            raise ShapeError("empty batch")
        logits, w, cache, model, inv_t = self._logits(theta, x)
        probs = K.softmax_rows(logits)
        n = x.shape[0]
        loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-38)).mean())

        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= F32(1.0)
        dlogits *= F32(1.0 / n) * inv_t
        # cosine route and head route share the same bilinear gradient in x
        dw = _mm_tn(dlogits, x)
        _, text_grads, dclass = encode_backward(dw, cache, model, with_params=True)
        grads = dict(text_grads)
        grads["class_tokens"] = dclass
        grads["head_w"] = dw
        grads["head_b"] = dlogits.sum(axis=0, dtype=F32)
        return loss, self.codec.pack(grads)

    def probabilities(self, theta, x):
        x = np.ascontiguousarray(x, dtype=F32)
        logits, *_ = self._logits(theta, x)
        return K.softmax_rows(logits)


def make_trainer(name: str, backbone: Backbone, prompt_len: int, tau: float | None) -> Trainer:
    if name == "promptfl":
        return PromptTrainer(backbone, prompt_len, tau)
    if name in ("finetune", "scratch"):
        return FullModelTrainer(backbone, name, tau)
    raise ConfigError(f"unknown trainer {name!r}")
