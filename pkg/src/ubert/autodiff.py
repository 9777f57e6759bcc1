"""Dense float64 tensors with a reverse-mode gradient tape.

Storage is numpy; every derivative is written out by hand and replayed
from an explicit tape, newest record first.  The op set is exactly what
the scoring model needs: affine maps, attention plumbing, the biaffine
contraction and a fused binary cross-entropy.  No broadcasting beyond a
row-wise bias add.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from typing import Mapping, Sequence

import numpy as np

from .errors import CheckpointError, ShapeError


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class Tensor:
    """A shaped block of float64 values with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.ensure_grad()
        t.grad += g


class Tape:
    """Ordered record of executed ops, replayed in reverse exactly once."""

    def __init__(self):
        self._records: list[tuple[Tensor, callable]] = []
        self._replayed = False

    def __len__(self) -> int:
        return len(self._records)

    def _emit(self, out: Tensor, backward_fn) -> Tensor:
        if out.requires_grad:
            self._records.append((out, backward_fn))
        return out

    @staticmethod
    def _out(*inputs: Tensor) -> bool:
        return any(t.requires_grad for t in inputs)

    # ----- primitive ops -----

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes do not agree: {a.shape} x {b.shape}")
        out = Tensor(a.data @ b.data, self._out(a, b))

        def backward(g):
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

        return self._emit(out, backward)

    def transpose(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
        out = Tensor(a.data.T.copy(), self._out(a))

        def backward(g):
            _accumulate(a, g.T)

        return self._emit(out, backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise add; also accepts a (n,) bias against an (m, n) matrix."""
        if a.shape == b.shape:
            out = Tensor(a.data + b.data, self._out(a, b))

            def backward(g):
                _accumulate(a, g)
                _accumulate(b, g)

        elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
            out = Tensor(a.data + b.data, self._out(a, b))

            def backward(g):
                _accumulate(a, g)
                _accumulate(b, g.sum(axis=0))

        else:
            raise ShapeError(f"add shapes do not agree: {a.shape} + {b.shape}")
        return self._emit(out, backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes do not agree: {a.shape} * {b.shape}")
        out = Tensor(a.data * b.data, self._out(a, b))

        def backward(g):
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)

        return self._emit(out, backward)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        factor = float(factor)
        out = Tensor(a.data * factor, self._out(a))

        def backward(g):
            _accumulate(a, g * factor)

        return self._emit(out, backward)

    def relu(self, a: Tensor) -> Tensor:
        out = Tensor(np.maximum(a.data, 0.0), self._out(a))

        def backward(g):
            _accumulate(a, g * (a.data > 0.0))

        return self._emit(out, backward)

    def sigmoid(self, a: Tensor) -> Tensor:
        value = stable_sigmoid(a.data)
        out = Tensor(value, self._out(a))

        def backward(g):
            _accumulate(a, g * value * (1.0 - value))

        return self._emit(out, backward)

    def softmax_rows(self, a: Tensor) -> Tensor:
        shifted = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(value, self._out(a))

        def backward(g):
            inner = (g * value).sum(axis=-1, keepdims=True)
            _accumulate(a, value * (g - inner))

        return self._emit(out, backward)

    def layer_norm(self, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
        mu = x.data.mean(axis=-1, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
        sigma = np.sqrt(var + eps)
        xhat = (x.data - mu) / sigma
        out = Tensor(xhat * gamma.data + beta.data, self._out(x, gamma, beta))

        def backward(g):
            ghat = g * gamma.data
            m1 = ghat.mean(axis=-1, keepdims=True)
            m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, (ghat - m1 - xhat * m2) / sigma)
            axes = tuple(range(g.ndim - 1))
            _accumulate(gamma, (g * xhat).sum(axis=axes))
            _accumulate(beta, g.sum(axis=axes))

        return self._emit(out, backward)

    def embedding(self, table: Tensor, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeError(f"embedding ids must be 1-D, got shape {ids.shape}")
        out = Tensor(table.data[ids], self._out(table))

        def backward(g):
            if table.requires_grad:
                table.ensure_grad()
                np.add.at(table.grad, ids, g)

        return self._emit(out, backward)

    def concat(self, parts: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not parts:
            raise ShapeError("concat needs at least one tensor")
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis), self._out(*parts))
        sizes = [p.data.shape[axis] for p in parts]

        def backward(g):
            offset = 0
            for p, size in zip(parts, sizes):
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                _accumulate(p, g[tuple(index)])
                offset += size

        return self._emit(out, backward)

    def flatten(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.reshape(-1), self._out(a))

        def backward(g):
            _accumulate(a, g.reshape(a.data.shape))

        return self._emit(out, backward)

    def sum_all(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.sum(), self._out(a))

        def backward(g):
            _accumulate(a, np.full_like(a.data, float(g)))

        return self._emit(out, backward)

    def biaffine_contract(self, h_s: Tensor, u: Tensor, h_e: Tensor) -> Tensor:
        """Score[i, j] = sum_ab h_s[i, a] * u[a, 0, b] * h_e[j, b]."""
        if (
            h_s.data.ndim != 2
            or h_e.data.ndim != 2
            or u.data.ndim != 3
            or u.shape[1] != 1
            or h_s.shape[1] != u.shape[0]
            or h_e.shape[1] != u.shape[2]
            or h_s.shape[0] != h_e.shape[0]
        ):
            raise ShapeError(
                f"biaffine shapes do not agree: h_s {h_s.shape}, u {u.shape}, h_e {h_e.shape}"
            )
        u2 = u.data[:, 0, :]
        out = Tensor(h_s.data @ u2 @ h_e.data.T, self._out(h_s, u, h_e))

        def backward(g):
            _accumulate(h_s, g @ (h_e.data @ u2.T))
            _accumulate(h_e, g.T @ (h_s.data @ u2))
            if u.requires_grad:
                u.ensure_grad()
                u.grad[:, 0, :] += h_s.data.T @ g @ h_e.data

        return self._emit(out, backward)

    def bce_with_logits_sum(self, logits: Tensor, targets: np.ndarray, pos_weight: float = 1.0) -> Tensor:
        """Summed binary cross-entropy of sigmoid(logits) against 0/1 targets.

        Computed in the log-sum-exp form, which stays finite for any logit.
        """
        y = np.asarray(targets, dtype=np.float64)
        if y.shape != logits.shape:
            raise ShapeError(f"bce target shape {y.shape} does not match logits {logits.shape}")
        x = logits.data
        w = float(pos_weight)
        value = (w * y * softplus(-x) + (1.0 - y) * softplus(x)).sum()
        out = Tensor(value, self._out(logits))

        def backward(g):
            s = stable_sigmoid(x)
            _accumulate(logits, float(g) * (w * y * (s - 1.0) + (1.0 - y) * s))

        return self._emit(out, backward)

    # ----- reverse pass -----

    def backward(self, loss: Tensor) -> None:
        """Populate gradient buffers of everything the scalar loss depends on."""
        if loss.data.shape != ():
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        if self._replayed:
            raise RuntimeError("tape already replayed; build a fresh tape per backward pass")
        self._replayed = True
        loss.ensure_grad()
        loss.grad = np.asarray(1.0)
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


# --------------------------- checkpoint format ---------------------------
#
# Flat binary layout, all integers little-endian:
#   magic "UBRT" | u32 version | u32 header length | header bytes |
#   u32 parameter count | records
# Each record: u32 name length | name (UTF-8) | u32 rank | u32 dims... |
# row-major float64 little-endian values.  Round trips are bit-exact.

CHECKPOINT_MAGIC = b"UBRT"
CHECKPOINT_VERSION = 1


def save_tensors(path, tensors: Mapping[str, Tensor], header: bytes = b"") -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors.items():
            encoded = name.encode("utf-8")
            arr = tensor.data.astype("<f8", copy=False)
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_tensors(path) -> tuple[bytes, "OrderedDict[str, Tensor]"]:
    with open(path, "rb") as fh:
        payload = fh.read()

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(payload):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {offset}")
        chunk = payload[offset:offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a UBRT checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<I", take(4))
    header = take(header_len)
    (count,) = struct.unpack("<I", take(4))
    tensors: OrderedDict[str, Tensor] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_values = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(8 * n_values), dtype="<f8").reshape(dims).copy()
        tensors[name] = Tensor(data)
    if offset != len(payload):
        raise CheckpointError(f"{len(payload) - offset} trailing bytes after last record")
    return header, tensors
