import math

import numpy as np
import pytest

from ubert.autodiff import (
    Tape,
    Tensor,
    load_tensors,
    save_tensors,
    stable_sigmoid,
)
from ubert.errors import CheckpointError, ShapeError


def _numeric_grad(f, x, eps=1e-6):
    """Central differences of a scalar function over one array."""
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return out


def _check_grad(build, params, rtol=1e-6, atol=1e-8):
    """build(tape) -> scalar loss Tensor; params: list of Tensor."""
    tape = Tape()
    loss = build(tape)
    tape.backward(loss)
    for p in params:
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        numeric = _numeric_grad(lambda: float(build(Tape()).data), p.data)
        assert np.allclose(analytic, numeric, rtol=rtol, atol=atol), (
            f"max diff {np.abs(analytic - numeric).max()}"
        )


# --------------------------- forward semantics ---------------------------


def test_matmul_identity():
    tape = Tape()
    a = Tensor(np.arange(9.0).reshape(3, 3))
    out = tape.matmul(Tensor(np.eye(3)), a)
    assert np.array_equal(out.data, a.data)


def test_matmul_shapes():
    tape = Tape()
    out = tape.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
    assert out.shape == (2, 4)
    with pytest.raises(ShapeError, match=r"\(2, 3\)"):
        tape.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_against_naive_loops():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5))
    b = rng.normal(size=(5, 5))
    out = Tape().matmul(Tensor(a), Tensor(b)).data
    naive = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            for k in range(5):
                naive[i, j] += a[i, k] * b[k, j]
    assert np.abs(out - naive).max() < 1e-12


def test_biaffine_identity_kernel():
    rng = np.random.default_rng(1)
    h_s = rng.normal(size=(4, 6))
    h_e = rng.normal(size=(4, 6))
    u = np.zeros((6, 1, 6))
    u[:, 0, :] = np.eye(6)
    out = Tape().biaffine_contract(Tensor(h_s), Tensor(u), Tensor(h_e)).data
    assert np.abs(out - h_s @ h_e.T).max() < 1e-12


def test_biaffine_scalar_case():
    out = Tape().biaffine_contract(
        Tensor([[2.0]]), Tensor([[[3.0]]]), Tensor([[5.0]])
    ).data
    assert out.shape == (1, 1)
    assert abs(out[0, 0] - 30.0) < 1e-15


def test_biaffine_against_naive_quadruple_loop():
    rng = np.random.default_rng(2)
    l, d = 4, 6
    h_s = rng.normal(size=(l, d))
    h_e = rng.normal(size=(l, d))
    u = rng.normal(size=(d, 1, d))
    out = Tape().biaffine_contract(Tensor(h_s), Tensor(u), Tensor(h_e)).data
    naive = np.zeros((l, l))
    for i in range(l):
        for j in range(l):
            for a in range(d):
                for b in range(d):
                    naive[i, j] += h_s[i, a] * u[a, 0, b] * h_e[j, b]
    assert np.abs(out - naive).max() < 1e-12


def test_biaffine_shape_errors():
    with pytest.raises(ShapeError):
        Tape().biaffine_contract(Tensor(np.ones((3, 4))), Tensor(np.ones((4, 2, 4))), Tensor(np.ones((3, 4))))
    with pytest.raises(ShapeError):
        Tape().biaffine_contract(Tensor(np.ones((3, 4))), Tensor(np.ones((4, 1, 5))), Tensor(np.ones((3, 4))))


def test_sigmoid_values():
    tape = Tape()
    out = tape.sigmoid(Tensor([0.0, 50.0, -50.0]))
    assert abs(out.data[0] - 0.5) < 1e-15
    assert abs(out.data[1] - 1.0) < 1e-12
    assert abs(out.data[2] - 0.0) < 1e-12
    assert stable_sigmoid(np.array([-1000.0]))[0] == 0.0


def test_add_bias_broadcast():
    tape = Tape()
    out = tape.add(Tensor(np.zeros((3, 2))), Tensor([1.0, 2.0]))
    assert np.array_equal(out.data, np.tile([1.0, 2.0], (3, 1)))
    with pytest.raises(ShapeError):
        tape.add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((2, 3))))


# --------------------------- backward semantics ---------------------------


def test_backward_sum_is_ones():
    tape = Tape()
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    tape.backward(tape.sum_all(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    tape = Tape()
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    tape.backward(tape.sum_all(tape.mul(w, w)))
    assert np.allclose(w.grad, 2 * w.data)


def test_backward_rejects_non_scalar():
    tape = Tape()
    w = Tensor(np.ones(3), requires_grad=True)
    out = tape.relu(w)
    with pytest.raises(ShapeError):
        tape.backward(out)


def test_tape_replayed_once():
    tape = Tape()
    w = Tensor(np.ones(3), requires_grad=True)
    loss = tape.sum_all(w)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)


def test_gradient_accumulates_on_reuse():
    tape = Tape()
    w = Tensor(np.array([3.0]), requires_grad=True)
    loss = tape.sum_all(tape.mul(w, w))  # w used twice
    tape.backward(loss)
    assert np.allclose(w.grad, [6.0])


def test_sigmoid_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)

    def build(tape):
        return tape.sum_all(tape.mul(tape.sigmoid(x), tape.sigmoid(x)))

    _check_grad(build, [x])


def test_matmul_gradients():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def build(tape):
        return tape.sum_all(tape.mul(tape.matmul(a, b), tape.matmul(a, b)))

    _check_grad(build, [a, b])


def test_softmax_layernorm_concat_gradients():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    gamma = Tensor(np.ones(5), requires_grad=True)
    beta = Tensor(np.zeros(5), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

    def build(tape):
        normed = tape.layer_norm(x, gamma, beta)
        soft = tape.softmax_rows(normed)
        cat = tape.concat([soft, y], axis=1)
        return tape.sum_all(tape.mul(cat, cat))

    _check_grad(build, [x, gamma, beta, y], rtol=1e-5, atol=1e-7)


def test_embedding_gradient_scatters():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    ids = np.array([1, 1, 3])
    tape = Tape()
    tape.backward(tape.sum_all(tape.embedding(table, ids)))
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)


def test_biaffine_gradients():
    rng = np.random.default_rng(6)
    h_s = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    h_e = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    u = Tensor(rng.normal(size=(4, 1, 4)), requires_grad=True)

    def build(tape):
        s = tape.biaffine_contract(h_s, u, h_e)
        return tape.sum_all(tape.mul(s, s))

    _check_grad(build, [h_s, h_e, u], rtol=1e-5, atol=1e-7)


def test_bce_gradient_is_sigmoid_minus_target():
    rng = np.random.default_rng(7)
    logits = Tensor(rng.normal(size=(10,)), requires_grad=True)
    y = (rng.random(10) < 0.3).astype(float)
    tape = Tape()
    tape.backward(tape.bce_with_logits_sum(logits, y))
    assert np.allclose(logits.grad, stable_sigmoid(logits.data) - y, atol=1e-12)


def test_bce_finite_difference():
    rng = np.random.default_rng(8)
    logits = Tensor(rng.normal(size=(12,)), requires_grad=True)
    y = (rng.random(12) < 0.5).astype(float)

    def build(tape):
        return tape.bce_with_logits_sum(logits, y, pos_weight=2.5)

    _check_grad(build, [logits], rtol=1e-5, atol=1e-7)


def test_determinism_bitwise():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(6, 6))
    b = rng.normal(size=(6, 6))

    def run():
        tape = Tape()
        x = Tensor(a, requires_grad=True)
        loss = tape.sum_all(tape.sigmoid(tape.matmul(x, Tensor(b))))
        tape.backward(loss)
        return loss.data.copy(), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(g1, g2)


# --------------------------- checkpoint io ---------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(10)
    tensors = {
        "a.weight": Tensor(rng.normal(size=(3, 4))),
        "b.bias": Tensor(rng.normal(size=(7,))),
        "scalar": Tensor(np.float64(math.pi)),
        "cube": Tensor(rng.normal(size=(2, 1, 2))),
    }
    path = tmp_path / "params.ubrt"
    save_tensors(path, tensors, header=b'{"v":1}')
    header, loaded = load_tensors(path)
    assert header == b'{"v":1}'
    assert list(loaded) == list(tensors)
    for name, t in tensors.items():
        assert loaded[name].data.shape == t.data.shape
        assert np.array_equal(loaded[name].data, t.data)
    # byte-for-byte stability of the file itself
    path2 = tmp_path / "params2.ubrt"
    save_tensors(path2, loaded, header=header)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_magic_layout(tmp_path):
    path = tmp_path / "p.ubrt"
    save_tensors(path, {"w": Tensor(np.zeros((2, 2)))})
    blob = path.read_bytes()
    assert blob[:4] == b"UBRT"


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ubrt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "p.ubrt"
    save_tensors(path, {"w": Tensor(np.zeros((2, 2)))})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_tensors(path)
