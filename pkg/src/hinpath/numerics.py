"""Small dense float64 kernel: checked primitives, init, Adam and gradient checking.

Vectors and matrices are plain ``numpy`` float64 arrays.  The primitives here
refuse to broadcast; operations that accept batches (``sigmoid``, ``tanh`` and
the backward helpers) are elementwise and shape-preserving.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import DimMismatch, NonFiniteFunction

DTYPE = np.float64
MAGIC = b"PRC1"


def _as_vec(x, what="vector") -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1:
        raise DimMismatch(f"{what} must be 1-D, got shape {x.shape}")
    return x


def _as_mat(m) -> np.ndarray:
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise DimMismatch(f"matrix must be 2-D, got shape {m.shape}")
    return m


def matvec(M, x) -> np.ndarray:
    M, x = _as_mat(M), _as_vec(x)
    if M.shape[1] != x.shape[0]:
        raise DimMismatch(f"matvec: {M.shape} @ {x.shape}")
    return M @ x


def add(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimMismatch(f"add: {a.shape} vs {b.shape}")
    return a + b


def hadamard(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimMismatch(f"hadamard: {a.shape} vs {b.shape}")
    return a * b


def concat(a, b) -> np.ndarray:
    return np.concatenate([_as_vec(a), _as_vec(b)])


def sigmoid(x):
    """Overflow-free logistic function."""
    out = expit(np.asarray(x, dtype=DTYPE))
    return out if out.ndim else float(out)


def tanh(x):
    out = np.tanh(np.asarray(x, dtype=DTYPE))
    return out if out.ndim else float(out)


# backward helpers: dy is the upstream gradient of the op's output


def matvec_backward(M, x, dy):
    M, x, dy = _as_mat(M), _as_vec(x), _as_vec(dy)
    if M.shape != (dy.shape[0], x.shape[0]):
        raise DimMismatch(f"matvec_backward: M {M.shape}, x {x.shape}, dy {dy.shape}")
    return np.outer(dy, x), M.T @ dy


def hadamard_backward(a, b, dy):
    a, b, dy = (np.asarray(v, dtype=DTYPE) for v in (a, b, dy))
    if not a.shape == b.shape == dy.shape:
        raise DimMismatch(f"hadamard_backward: {a.shape}, {b.shape}, {dy.shape}")
    return dy * b, dy * a


def concat_backward(len_a: int, dy):
    dy = _as_vec(dy)
    if not 0 <= len_a <= dy.shape[0]:
        raise DimMismatch(f"concat_backward: split {len_a} of {dy.shape}")
    return dy[:len_a], dy[len_a:]


def sigmoid_backward(y, dy):
    """Gradient through ``y = sigmoid(x)`` given the output ``y``."""
    y, dy = np.asarray(y, dtype=DTYPE), np.asarray(dy, dtype=DTYPE)
    if y.shape != dy.shape:
        raise DimMismatch(f"sigmoid_backward: {y.shape} vs {dy.shape}")
    return dy * y * (1.0 - y)


def tanh_backward(y, dy):
    y, dy = np.asarray(y, dtype=DTYPE), np.asarray(dy, dtype=DTYPE)
    if y.shape != dy.shape:
        raise DimMismatch(f"tanh_backward: {y.shape} vs {dy.shape}")
    return dy * (1.0 - y * y)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def xavier_init(rows: int, cols: int, rng_seed=0) -> np.ndarray:
    """Uniform Glorot init in [-s, s] with s = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise DimMismatch(f"xavier_init needs positive dims, got {rows}x{cols}")
    s = np.sqrt(6.0 / (rows + cols))
    return make_rng(rng_seed).uniform(-s, s, size=(rows, cols))


class ParamStore:
    """Named float64 parameters with matching gradient slots and Adam state."""

    def __init__(self):
        self.values: OrderedDict[str, np.ndarray] = OrderedDict()
        self.grads: OrderedDict[str, np.ndarray] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        # bumped whenever values change; traces compare against it
        self.version = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=DTYPE)
        if arr.ndim not in (1, 2):
            raise DimMismatch(f"parameter {name!r} must be 1-D or 2-D, got {arr.shape}")
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.values.items()}

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def set(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=DTYPE)
        if arr.shape != self.values[name].shape:
            raise DimMismatch(f"set {name!r}: {arr.shape} vs {self.values[name].shape}")
        self.values[name][...] = arr
        self.touch()

    def touch(self) -> None:
        self.version += 1

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.values.items():
            out.add(k, v)
            out.grads[k][...] = self.grads[k]
            out.m[k][...] = self.m[k]
            out.v[k][...] = self.v[k]
        out.t = self.t
        return out

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", len(self.values)))
        for name, arr in self.values.items():
            raw = name.encode("utf-8")
            rows, cols = (arr.shape[0], 1) if arr.ndim == 1 else arr.shape
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<II", rows, cols))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, shapes: Mapping[str, tuple[int, ...]] | None = None) -> "ParamStore":
        """Parse the binary layout.

        The file stores every parameter as rows x cols; pass ``shapes`` to
        restore 1-D vectors to their in-memory shape.
        """
        view = memoryview(data)
        if bytes(view[:4]) != MAGIC:
            raise ValueError("not a parameter file (bad magic)")
        (count,) = struct.unpack_from("<I", view, 4)
        off = 8
        store = cls()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", view, off)
            off += 4
            name = bytes(view[off : off + n]).decode("utf-8")
            off += n
            rows, cols = struct.unpack_from("<II", view, off)
            off += 8
            nbytes = rows * cols * 8
            arr = np.frombuffer(view[off : off + nbytes], dtype="<f8").astype(DTYPE).reshape(rows, cols)
            off += nbytes
            if shapes is not None:
                if name not in shapes:
                    raise ValueError(f"unexpected parameter {name!r} in file")
                want = tuple(shapes[name])
                if int(np.prod(want)) != arr.size:
                    raise DimMismatch(f"parameter {name!r}: file has {rows}x{cols}, expected {want}")
                arr = arr.reshape(want)
            store.add(name, arr)
        if off != len(data):
            raise ValueError("trailing bytes after parameter table")
        if shapes is not None and set(shapes) != set(store.values):
            missing = sorted(set(shapes) - set(store.values))
            raise ValueError(f"parameter file lacks {missing}")
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, shapes=None) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes(), shapes)


def adam_step(params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps_adam=1e-8) -> ParamStore:
    """Bias-corrected Adam, in place.

    A parameter whose gradient is identically zero is left alone, moments
    included, so a zero-gradient step never moves anything.
    """
    params.t += 1
    t = params.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, value in params.values.items():
        g = params.grads[name]
        if not g.any():
            continue
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        value -= lr * (m / c1) / (np.sqrt(v / c2) + eps_adam)
    params.touch()
    return params


def grad_check(
    f: Callable[[ParamStore], float],
    params: ParamStore,
    analytic_grads: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    report: dict | None = None,
) -> float:
    """Max relative error between ``analytic_grads`` and central differences of ``f``.

    Every coordinate of every parameter named in ``analytic_grads`` is
    perturbed in place and restored.  ``report``, if given, receives the
    worst error per parameter.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    worst = 0.0
    for name, analytic in analytic_grads.items():
        value = params.values[name]
        analytic = np.asarray(analytic, dtype=DTYPE)
        if analytic.shape != value.shape:
            raise DimMismatch(f"grad for {name!r}: {analytic.shape} vs {value.shape}")
        flat = value.reshape(-1)
        a_flat = analytic.reshape(-1)
        local = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            params.touch()
            fp = f(params)
            flat[idx] = orig - eps
            params.touch()
            fm = f(params)
            flat[idx] = orig
            params.touch()
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteFunction(f"non-finite objective while perturbing {name}[{idx}]")
            numeric = (fp - fm) / (2.0 * eps)
            a = a_flat[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            local = max(local, err)
        if report is not None:
            report[name] = local
        worst = max(worst, local)
    return worst


def numeric_grad(f: Callable[[ParamStore], float], params: ParamStore, name: str, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``f`` with respect to one parameter."""
    value = params.values[name]
    flat = value.reshape(-1)
    out = np.zeros(flat.size)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        params.touch()
        fp = f(params)
        flat[idx] = orig - eps
        params.touch()
        fm = f(params)
        flat[idx] = orig
        params.touch()
        out[idx] = (fp - fm) / (2.0 * eps)
    return out.reshape(value.shape)


STREAMS = {"init": 0, "sampling": 1, "validation": 2, "eval": 3}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one subsystem, derived from a master seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],)))
