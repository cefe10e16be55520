"""Minimal dense reverse-mode differentiation with exactly the ops the
pursuit networks need, plus Adam and a central-finite-difference checker.

All compute is float64 internally; checkpoints store float32. Gradients
accumulate into `.grad` until `zero_grad` is called.
"""
from __future__ import annotations

import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward: Callable[[], None] | None = None
        self._prev: tuple[Tensor, ...] = ()

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def backward(self):
        """Reverse-mode sweep from a scalar loss; grads accumulate."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- ops ---------------------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"]) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(
            p.requires_grad or p._prev for p in parents
        ):
            out.requires_grad = True
            out._prev = tuple(parents)
        return out

    def __add__(self, other):
        other = self._wrap(other)
        out = self._node(self.data + other.data, (self, other))
        def _bw():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))
        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self._node(-self.data, (self,))
        out._backward = lambda: self._accumulate(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out = self._node(self.data * other.data, (self, other))
        def _bw():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))
        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * self._wrap(other) ** -1.0

    def __rtruediv__(self, other):
        return self._wrap(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out = self._node(self.data ** exponent, (self,))
        def _bw():
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1.0))
        out._backward = _bw
        return out

    def __matmul__(self, other):
        other = self._wrap(other)
        out = self._node(self.data @ other.data, (self, other))
        def _bw():
            self._accumulate(out.grad @ other.data.T)
            other._accumulate(self.data.T @ out.grad)
        out._backward = _bw
        return out

    def sum(self, axis=None, keepdims: bool = False):
        out = self._node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def relu(self):
        out = self._node(np.maximum(self.data, 0.0), (self,))
        out._backward = lambda: self._accumulate(out.grad * (self.data > 0))
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = self._node(t, (self,))
        out._backward = lambda: self._accumulate(out.grad * (1.0 - t * t))
        return out

    def exp(self):
        e = np.exp(self.data)
        out = self._node(e, (self,))
        out._backward = lambda: self._accumulate(out.grad * e)
        return out

    def log(self):
        out = self._node(np.log(self.data), (self,))
        out._backward = lambda: self._accumulate(out.grad / self.data)
        return out

    def masked_fill(self, mask: np.ndarray, value: float):
        """Replace entries where `mask` is true with `value` (no grad there)."""
        mask = np.asarray(mask, dtype=bool)
        out = self._node(np.where(mask, value, self.data), (self,))
        out._backward = lambda: self._accumulate(np.where(mask, 0.0, out.grad))
        return out

    def softmax(self, axis: int = 1):
        """Numerically stable softmax along `axis`."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = self._node(y, (self,))
        def _bw():
            g = out.grad
            self._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = _bw
        return out

    def log_softmax(self, axis: int = 1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse
        out = self._node(y, (self,))
        def _bw():
            g = out.grad
            self._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))
        out._backward = _bw
        return out

    def sign_st(self):
        """Hard sign forward (sgn(0) := +1); tanh-surrogate gradient backward."""
        hard = np.where(self.data >= 0.0, 1.0, -1.0)
        t = np.tanh(self.data)
        out = self._node(hard, (self,))
        out._backward = lambda: self._accumulate(out.grad * (1.0 - t * t))
        return out

    def onehot_argmax_st(self, axis: int = 1):
        """One-hot of the row argmax forward; identity (straight-through)
        gradient backward. Input is expected to be a probability matrix."""
        idx = self.data.argmax(axis=axis)
        hard = np.zeros_like(self.data)
        np.put_along_axis(hard, np.expand_dims(idx, axis), 1.0, axis=axis)
        out = self._node(hard, (self,))
        out._backward = lambda: self._accumulate(out.grad)
        return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor._node(np.concatenate(datas, axis=axis), tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    def _bw():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(out.grad[tuple(sl)])
    out._backward = _bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with learnable affine."""
    m = x.mean(axis=1, keepdims=True)
    centered = x - m
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gain + bias


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer `labels` under row logits."""
    logp = logits.log_softmax(axis=1)
    b = logits.shape[0]
    picked = logp * _onehot(labels, logits.shape[1])
    return -picked.sum() * (1.0 / b)


def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


class Adam:
    """Standard Adam with bias-corrected moments and optional L2 weight decay."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)


def finite_difference_grad(
    f: Callable[[], float], params: Sequence[Tensor], h: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient estimate of scalar `f()` per parameter
    coordinate. `f` must be deterministic and read `params` by reference."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f()
            flat[i] = orig - h
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


# -- PRMS checkpoint format ------------------------------------------------

PRMS_MAGIC = b"PRMS"
PRMS_VERSION = 1


def save_checkpoint(named: Sequence[tuple[str, Tensor]], path) -> None:
    """Serialize named tensors as PRMS: per tensor (name length u32, name,
    rows u32, cols u32, float32 payload), little-endian throughout."""
    with open(path, "wb") as fh:
        fh.write(PRMS_MAGIC)
        fh.write(struct.pack("<I", PRMS_VERSION))
        for name, t in named:
            data = np.atleast_2d(t.data).astype("<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
            fh.write(data.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != PRMS_MAGIC:
        raise ValueError("bad checkpoint magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != PRMS_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 8
    out: dict[str, np.ndarray] = {}
    while offset < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + nlen].decode("utf-8")
        offset += nlen
        rows, cols = struct.unpack_from("<II", raw, offset)
        offset += 8
        arr = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset)
        offset += 4 * rows * cols
        out[name] = arr.reshape(rows, cols).astype(np.float64)
    return out
