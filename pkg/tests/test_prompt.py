import numpy as np
import pytest

import oracles
from fedprompt import backbone as B
from fedprompt import prompt as P
from fedprompt.errors import DataError, FormatError, ShapeError
from fedprompt.tensor import F32


def make(seed=1, k=5, d=16, depth=2, spc=8, noise=0.05, **kw):
    bb = B.generate_synthetic_backbone(k, d, depth, seed, spc, noise, **kw)
    pv = P.init_prompt(3, d, seed)
    return bb, pv


def train_batch(bb):
    s = bb.train_slice()
    return bb.image.features[s], bb.image.labels[s]


# ---------------------------------------------------------------- predict

def test_predict_equal_weights_symmetry():
    bb, pv = make()
    bb.classes.table[:] = bb.classes.table[0]  # all classes identical
    x, _ = train_batch(bb)
    probs = P.predict(pv, x[:4], bb)
    assert np.allclose(probs, 1.0 / bb.num_classes, atol=1e-6)


def test_predict_analytic_orthogonal_case():
    bb, _ = make(k=2, d=16)
    w, _ = P.class_weights(bb, None)
    # feature equals w_0; make w_1 orthogonal to it by construction via a
    # synthetic feature straight along each weight
    x = w[0:1]
    cos01 = float(w[0] @ w[1])
    probs = P.predict(None, x, bb, tau=1.0)
    want = np.exp([1.0, cos01])
    want /= want.sum()
    assert np.allclose(probs[0], want, atol=1e-5)
    # forced analytic instance: cos = [1, 0]
    e = np.e
    w1 = w[1] - w[0] * cos01
    w1 /= np.linalg.norm(w1)
    logits = np.array([[1.0, 0.0]], dtype=F32)
    manual = np.exp(logits[0]) / np.exp(logits[0]).sum()
    assert np.allclose(manual, [e / (e + 1), 1 / (e + 1)], atol=1e-6)


def test_predict_matches_eq1_scalar_oracle():
    bb, pv = make(seed=7)
    x, _ = train_batch(bb)
    x = x[:6]
    w, _ = P.class_weights(bb, pv)
    got = P.predict(pv, x, bb, tau=1.0)
    want = oracles.eq1_probs(x, w, tau=1.0)
    assert np.abs(got - want).max() < 1e-6
    assert np.allclose(got.sum(axis=1), 1.0, atol=1e-6)


def test_predict_rows_depend_only_on_own_feature():
    bb, pv = make()
    x, _ = train_batch(bb)
    full = P.predict(pv, x[:5], bb)
    solo = P.predict(pv, x[2:3], bb)
    assert np.array_equal(full[2], solo[0])


def test_argmax_invariant_to_temperature():
    bb, pv = make(seed=3)
    x, _ = train_batch(bb)
    base = P.predict(pv, x, bb, tau=1.0).argmax(axis=1)
    for tau in (0.5, 100.0):
        assert np.array_equal(P.predict(pv, x, bb, tau=tau).argmax(axis=1), base)


# ------------------------------------------------------------ loss & grad

def test_uniform_probs_loss_is_log_k():
    bb, pv = make(k=4)
    bb.classes.table[:] = bb.classes.table[0]
    x, y = train_batch(bb)
    loss, _ = P.loss_and_grad(pv, x, y, bb)
    assert abs(loss - np.log(4)) < 1e-5


def test_grad_matches_fd_through_frozen_encoder():
    for trial in range(3):
        bb = B.generate_synthetic_backbone(3, 16, 2, 60 + trial, 4, 0.05)
        rng = np.random.default_rng(trial)
        pv = P.PromptVectors(rng.normal(0, 0.1, size=(2, 16)).astype(F32))
        x, y = bb.image.features[:6], bb.image.labels[:6]
        _, grad = P.loss_and_grad(pv, x, y, bb, tau=1.0)
        fd = oracles.fd_grad(lambda pt: oracles.ce_loss(bb, pt, x, y, tau=1.0), pv.table, 1e-3)
        assert oracles.rel_err(grad, fd) < 1e-3


def test_duplicated_batch_leaves_loss_and_grad_unchanged():
    bb, pv = make(seed=9)
    x, y = train_batch(bb)
    x, y = x[:5], y[:5]
    loss1, g1 = P.loss_and_grad(pv, x, y, bb)
    loss2, g2 = P.loss_and_grad(pv, np.concatenate([x, x]), np.concatenate([y, y]), bb)
    assert abs(loss1 - loss2) < 1e-6
    assert np.abs(g1 - g2).max() < 1e-6


def test_loss_monotone_decrease_small_steps():
    # tau=0.1 keeps per-step decreases above float32 resolution
    bb = B.generate_synthetic_backbone(5, 16, 2, 13, 6, 0.0)
    pv = P.init_prompt(3, 16, 13)
    x, y = bb.image.features[bb.train_slice()], bb.image.labels[bb.train_slice()]
    prev = None
    table = pv.table.copy()
    for _ in range(10):
        loss, g = P.loss_and_grad(P.PromptVectors(table), x, y, bb, tau=0.1)
        if prev is not None:
            assert loss < prev
        prev = loss
        table = table - np.float32(1e-3) * g


def test_only_prompt_changes_under_training_step():
    bb, pv = make(seed=15)
    before = bb.checksum()
    x, y = train_batch(bb)
    _, g = P.loss_and_grad(pv, x, y, bb)
    pv2 = P.PromptVectors(pv.table - np.float32(0.01) * g)
    assert bb.checksum() == before
    assert not np.array_equal(pv.table, pv2.table)


def test_empty_batch_rejected():
    bb, pv = make()
    with pytest.raises(ShapeError):
        P.loss_and_grad(pv, np.zeros((0, bb.d_img), dtype=F32), np.zeros(0, dtype=int), bb)


# ---------------------------------------------------------------- ratios

def test_parameter_ratio_paper_bands():
    r50 = P.trainable_parameter_ratio(16 * 512, 38_300_000)
    vit = P.trainable_parameter_ratio(16 * 512, 86_600_000)
    assert abs(r50 - 8192 / (38_300_000 + 8192)) < 1e-12
    assert 5e-5 <= vit <= 1e-3
    assert 5e-5 <= r50 <= 1e-3


def test_parameter_ratio_degenerate():
    assert P.trainable_parameter_ratio(100, 0) == 1.0


# ------------------------------------------------------------- checkpoint

def test_prompt_checkpoint_roundtrip(tmp_path):
    pv = P.init_prompt(4, 16, 99)
    path = tmp_path / "prompt.fplp"
    P.save_prompt(path, pv)
    back = P.load_prompt(path)
    assert np.array_equal(back.table, pv.table)


def test_prompt_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "prompt.fplp"
    P.save_prompt(path, P.init_prompt(2, 8, 1))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"ZZZZ"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        P.load_prompt(path)


def test_prompt_checkpoint_truncated(tmp_path):
    path = tmp_path / "prompt.fplp"
    P.save_prompt(path, P.init_prompt(2, 8, 1))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        P.load_prompt(path)
