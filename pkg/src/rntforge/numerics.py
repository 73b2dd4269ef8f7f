"""Dense-array helpers, the seeded random stream and the finite-difference oracle.

Numpy arrays are the tensor currency throughout the package: float64 for
training and gradient checks, float32 only inside checkpoints.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .errors import DomainError, EvaluationError, ShapeError


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step on a Python int; returns (new_state, output)."""
    mask = (1 << 64) - 1
    x = (x + 0x9E3779B97F4A7C15) & mask
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return x, z ^ (z >> 31)


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@numba.njit(cache=True)
def _fill_u64(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(out.shape[0]):
        out[i] = _rotl(s0 + s3, 23) + s0
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


class Rng:
    """xoshiro256++ stream whose 256-bit state is seeded through splitmix64.

    The integer stream is platform independent; floats are derived from the
    top 53 bits of each draw.
    """

    def __init__(self, seed: int = 42):
        x = int(seed) & ((1 << 64) - 1)
        words = []
        for _ in range(4):
            x, z = splitmix64(x)
            words.append(z)
        self.seed = int(seed)
        self._state = np.array(words, dtype=np.uint64)

    def next_u64(self, n: int | None = None):
        out = np.empty(1 if n is None else int(n), dtype=np.uint64)
        _fill_u64(self._state, out)
        return int(out[0]) if n is None else out

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        raw = self.next_u64(n)
        vals = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(vals[0]) if size is None else vals.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, size=None, loc=0.0, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = self.random(2 * m).reshape(2, m)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * math.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, n: int, size=None):
        """Uniform integers in [0, n)."""
        if n <= 0:
            raise DomainError(f"integers() needs n > 0, got {n}")
        u = self.random(size)
        if size is None:
            return min(int(u * n), n - 1)
        return np.minimum((u * n).astype(np.int64), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, items):
        return items[self.integers(len(items))]

    def spawn(self) -> "Rng":
        """Independent child stream; advances this stream by one draw."""
        return Rng(self.next_u64())


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def logsumexp(values, axis=None):
    """Stable log-sum-exp; -inf inputs are the additive identity."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("logsumexp of an empty input")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise DomainError("logsumexp input must not contain NaN or +inf")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def finite_diff_grad(f, params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``params``."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    p = np.array(params, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.zeros_like(flat)

    def evaluate():
        val = float(f(p))
        if not math.isfinite(val):
            raise EvaluationError(f"objective returned non-finite value {val}")
        return val

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = evaluate()
        flat[i] = orig - eps
        minus = evaluate()
        flat[i] = orig
        grad[i] = (plus - minus) / (2 * eps)
    return grad.reshape(p.shape)


def rel_error(a, b) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)
