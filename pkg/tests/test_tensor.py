import numpy as np
import pytest

from fedprompt.errors import DataError, ShapeError
from fedprompt.tensor import DualTensor, Tensor, matmul, softmax

from oracles import matmul_triple_loop_f32


def test_tensor_rejects_nonfinite():
    with pytest.raises(DataError):
        Tensor(np.array([[1.0, np.nan]]))
    with pytest.raises(DataError):
        Tensor(np.array([np.inf, 0.0]))


def test_tensor_shape_and_dtype():
    t = Tensor([[1, 2], [3, 4]])
    assert t.shape == (2, 2)
    assert t.data.dtype == np.float32
    assert t.data.flags["C_CONTIGUOUS"]


def test_dual_tensor_zero_init_and_accumulate():
    d = DualTensor(Tensor([[1.0, 2.0]]))
    assert d.grad.shape == (1, 2)
    assert not d.grad.any()
    d.accumulate(np.ones((1, 2), dtype=np.float32))
    d.accumulate(np.ones((1, 2), dtype=np.float32))
    assert np.array_equal(d.grad, np.full((1, 2), 2.0, dtype=np.float32))
    with pytest.raises(ShapeError):
        d.accumulate(np.ones(3, dtype=np.float32))


def test_matmul_identity():
    x = Tensor([[2.0, -1.0], [0.5, 3.0]])
    eye = Tensor(np.eye(2))
    assert np.array_equal(matmul(eye, x).data, x.data)


def test_matmul_forced_arithmetic():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(matmul(a, b).data, np.array([[3.0], [7.0]], dtype=np.float32))


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(42)
    for _ in range(5):
        a = (rng.uniform(-10, 10, size=(4, 5))).astype(np.float32)
        b = (rng.uniform(-10, 10, size=(5, 3))).astype(np.float32)
        got = matmul(Tensor(a), Tensor(b)).data
        want = matmul_triple_loop_f32(a, b)
        assert np.abs(got - want).max() <= 1e-6


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_symmetry():
    out = softmax(Tensor([5.0, 5.0, 5.0])).data
    assert np.allclose(out, 1.0 / 3.0, atol=1e-6)


def test_softmax_analytic():
    out = softmax(Tensor([np.log(2.0), 0.0])).data
    assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-6)


def test_softmax_stability():
    out = softmax(Tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all()
    assert out[0] > 0.999
    assert out[1] < 1e-6


def test_softmax_sums_to_one_and_permutation_equivariant():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(0, 3, size=9).astype(np.float32)
        s = softmax(Tensor(x)).data
        assert abs(float(s.sum()) - 1.0) <= 1e-6
        assert (s > 0).all()
        perm = rng.permutation(9)
        sp = softmax(Tensor(x[perm])).data
        assert np.allclose(sp, s[perm], atol=1e-6)


def test_softmax_rejects_2d():
    with pytest.raises(ShapeError):
        softmax(Tensor(np.ones((2, 2))))
