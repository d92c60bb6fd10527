"""Tiny reverse-mode autodiff over numpy arrays, plus tensor file IO.

The op set is deliberately closed: elementwise add/sub/mul, matmul,
broadcast-add of a vector over a token axis, mean-pool, concat along the
token axis, sigmoid, silu, softmax, scalar scale, squared-error reduction.
No general broadcasting; every backward rule is hand-written and checked
against central differences (see grad_check).
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "ShapeError",
    "NonFiniteError",
    "add",
    "sub",
    "mul",
    "matmul",
    "broadcast_add",
    "mean_pool",
    "concat",
    "as_row",
    "no_grad",
    "sigmoid",
    "silu",
    "softmax",
    "scale",
    "pick",
    "smul",
    "sse",
    "grad_check",
    "save_tensor",
    "load_tensor",
    "tensor_sha256",
]


class ShapeError(ValueError):
    """Operand dims incompatible with the requested op."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager: skip tape construction (inference-only forward)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


class NonFiniteError(FloatingPointError):
    """NaN or Inf encountered where finite values are required."""


def assert_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """Node in the computation tape. Wraps a 0-d, 1-d or 2-d float array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.ndim != 0:
            raise ShapeError(f"backward requires a scalar, got dims {self.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _node(data, parents, backward):
    track = _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)
    return Tensor(data, _parents=tuple(parents) if track else (),
                  _backward=backward if track else None)


def as_row(vec):
    """View a d-vector as a 1-by-d matrix (for concat along the token axis)."""
    if vec.data.ndim != 1:
        raise ShapeError(f"as_row: dims {vec.shape}")

    def bwd(g):
        vec._accumulate(g[0])

    return _node(vec.data[None, :], (vec,), bwd)


def constant(data, dtype=np.float64):
    return Tensor(np.asarray(data, dtype=dtype))


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: dims {a.shape} vs {b.shape}")

    def bwd(g):
        a._accumulate(g)
        b._accumulate(g)

    return _node(a.data + b.data, (a, b), bwd)


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: dims {a.shape} vs {b.shape}")

    def bwd(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _node(a.data - b.data, (a, b), bwd)


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul: dims {a.shape} vs {b.shape}")

    def bwd(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), bwd)


def matmul(a, b):
    """2d@2d, 2d@1d or 1d@2d; no other dim combinations."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0]:
        def bwd(g):
            a._accumulate(g @ bd.T)
            b._accumulate(ad.T @ g)
    elif ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        def bwd(g):
            a._accumulate(np.outer(g, bd))
            b._accumulate(ad.T @ g)
    elif ad.ndim == 1 and bd.ndim == 2 and ad.shape[0] == bd.shape[0]:
        def bwd(g):
            a._accumulate(bd @ g)
            b._accumulate(np.outer(ad, g))
    else:
        raise ShapeError(f"matmul: dims {a.shape} vs {b.shape}")
    return _node(ad @ bd, (a, b), bwd)


def broadcast_add(mat, vec):
    """Add a d-vector to every row of an n-by-d matrix."""
    if mat.data.ndim != 2 or vec.data.ndim != 1 or mat.shape[1] != vec.shape[0]:
        raise ShapeError(f"broadcast_add: dims {mat.shape} vs {vec.shape}")

    def bwd(g):
        mat._accumulate(g)
        vec._accumulate(g.sum(axis=0))

    return _node(mat.data + vec.data[None, :], (mat, vec), bwd)


def mean_pool(x, axis=0):
    """Mean over one axis of a 2-d tensor; returns a vector."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_pool: dims {x.shape}")
    n = x.shape[axis]

    def bwd(g):
        if axis == 0:
            x._accumulate(np.repeat(g[None, :], n, axis=0) / n)
        else:
            x._accumulate(np.repeat(g[:, None], n, axis=1) / n)

    return _node(x.data.mean(axis=axis), (x,), bwd)


def concat(parts):
    """Concatenate along axis 0 (token axis for matrices, length for vectors)."""
    nd = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != nd:
            raise ShapeError(
                f"concat: mixed ranks {[q.shape for q in parts]}")
        if nd == 2 and p.shape[1] != parts[0].shape[1]:
            raise ShapeError(
                f"concat: dims {[q.shape for q in parts]}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p._accumulate(g[lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, bwd)


def _stable_sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x):
    s = _stable_sigmoid(x.data)

    def bwd(g):
        x._accumulate(g * s * (1.0 - s))

    return _node(s, (x,), bwd)


def silu(x):
    """Smooth activation a(x) = x * sigmoid(x)."""
    s = _stable_sigmoid(x.data)
    out = x.data * s

    def bwd(g):
        x._accumulate(g * (s + out * (1.0 - s)))

    return _node(out, (x,), bwd)


def softmax(x):
    """Softmax over a 1-d tensor."""
    if x.data.ndim != 1:
        raise ShapeError(f"softmax: dims {x.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    p = e / e.sum()

    def bwd(g):
        x._accumulate(p * (g - (g * p).sum()))

    return _node(p, (x,), bwd)


def scale(x, c):
    """Multiply by a python scalar constant."""
    c = float(c)

    def bwd(g):
        x._accumulate(g * c)

    return _node(x.data * c, (x,), bwd)


def pick(x, i):
    """Scalar element of a 1-d tensor."""
    if x.data.ndim != 1:
        raise ShapeError(f"pick: dims {x.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        x._accumulate(gx)

    return _node(x.data[i], (x,), bwd)


def smul(s, x):
    """Scalar tensor times tensor."""
    if s.data.ndim != 0:
        raise ShapeError(f"smul: scalar dims {s.shape}")

    def bwd(g):
        s._accumulate((g * x.data).sum())
        x._accumulate(g * s.data)

    return _node(s.data * x.data, (s, x), bwd)


def sse(a, b):
    """Sum of squared differences, reduced to a scalar."""
    if a.shape != b.shape:
        raise ShapeError(f"sse: dims {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def bwd(g):
        a._accumulate(2.0 * g * diff)
        b._accumulate(-2.0 * g * diff)

    return _node((diff * diff).sum(), (a, b), bwd)


class ParamStore:
    """Named learnable tensors with gradient accumulators.

    Iteration order over names is lexicographic, which fixes the order of
    every gradient reduction and optimizer sweep.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, array):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(array), requires_grad=True)
        t.zero_grad()
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self):
        for _, t in self.items():
            t.zero_grad()

    def n_scalars(self):
        return sum(t.data.size for t in self._params.values())

    def state_hash(self):
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype=np.float64).tobytes())
        return h.hexdigest()


def grad_check(loss_fn, params, h=1e-5, n_probe=32, rng=None):
    """Compare analytic gradients against central differences.

    loss_fn(params) must return a scalar Tensor and be deterministic.
    Returns the max relative error over n_probe randomly chosen scalar
    parameters.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-6, 1e-4]")
    rng = rng or np.random.default_rng(0)

    params.zero_grads()
    loss = loss_fn(params)
    assert_finite(loss.data, "grad_check loss")
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in params.items()}

    names = params.names()
    sizes = np.array([params[n].data.size for n in names])
    total = int(sizes.sum())
    probes = rng.choice(total, size=min(n_probe, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat in probes:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        idx = int(flat - (bounds[pi - 1] if pi else 0))
        t = params[names[pi]]
        orig = t.data.flat[idx]
        t.data.flat[idx] = orig + h
        lp = float(loss_fn(params).data)
        t.data.flat[idx] = orig - h
        lm = float(loss_fn(params).data)
        t.data.flat[idx] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NonFiniteError(f"non-finite loss probing {names[pi]}[{idx}]")
        g_fd = (lp - lm) / (2.0 * h)
        g_an = analytic[names[pi]].flat[idx]
        rel = abs(g_an - g_fd) / max(1e-8, abs(g_an) + abs(g_fd))
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Tensor file format: magic "MDLT", version 0x01, dtype byte (0=f32, 1=f64),
# rank byte, 4 zero pad bytes, rank u64-LE dims, row-major LE payload.

_MAGIC = b"MDLT"


def save_tensor(path, arr):
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        dt = 0
    elif arr.dtype == np.float64:
        dt = 1
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<BBB4x", 1, dt, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<Q", d))
        f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_tensor(path):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: bad magic")
        version, dt, rank = struct.unpack("<BBB4x", f.read(7))
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
        dtype = np.dtype("<f4") if dt == 0 else np.dtype("<f8")
        data = np.frombuffer(f.read(), dtype=dtype)
    expected = int(np.prod(dims, dtype=np.int64)) if dims else 1
    if data.size != expected:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def tensor_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()
