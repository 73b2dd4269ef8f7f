"""Transducer loss: log-space forward-backward over the T x (U+1) lattice."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ShapeError


@dataclass
class Lattice:
    log_probs: np.ndarray  # (T, U+1, V)
    target: np.ndarray  # (U,)
    alpha: np.ndarray  # (T, U+1)
    beta: np.ndarray  # (T, U+1)
    log_likelihood: float
    blank: int = 0

    def blank_cut(self) -> np.ndarray:
        """Per frame t, log-mass of all paths crossing from row t to t+1.

        Every complete path takes exactly one blank step out of each frame,
        so each entry equals the total log-likelihood.
        """
        T, U1 = self.alpha.shape
        nxt = np.full((T, U1), -np.inf)
        nxt[:-1] = self.beta[1:]
        nxt[-1, -1] = 0.0
        with np.errstate(invalid="ignore"):
            terms = self.alpha + self.log_probs[:, :, self.blank] + nxt
        return _lse_rows(terms)

    def diagonal_mass(self) -> np.ndarray:
        """log sum of alpha*beta along each anti-diagonal t+u = n (each equals the likelihood)."""
        T, U1 = self.alpha.shape
        ab = self.alpha + self.beta
        out = np.empty(T + U1 - 1)
        for n in range(T + U1 - 1):
            ts = np.arange(max(0, n - U1 + 1), min(T, n + 1))
            out[n] = _lse_rows(ab[ts, n - ts][None])[0]
        return out


def _lse_rows(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(x - m).sum(axis=1)) + m[:, 0]


def _check(log_probs, target, blank):
    lp = np.asarray(log_probs, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.int64).reshape(-1)
    if lp.ndim != 3:
        raise ShapeError(f"log_probs must be (T, U+1, V), got {lp.shape}")
    T, U1, V = lp.shape
    if T < 1:
        raise DomainError("lattice needs T >= 1")
    if U1 != tgt.size + 1:
        raise ShapeError(f"lattice has U+1={U1} columns but target length is {tgt.size}")
    if not 0 <= blank < V:
        raise DomainError(f"blank index {blank} outside vocabulary of {V}")
    if np.any(tgt == blank):
        raise DomainError("target sequence contains the blank label")
    if np.any((tgt < 0) | (tgt >= V)):
        raise DomainError("target label outside vocabulary")
    return lp, tgt


def forward_backward(log_probs, target, blank: int = 0) -> Lattice:
    lp, tgt = _check(log_probs, target, blank)
    T, U1, _ = lp.shape
    U = U1 - 1
    blank_lp = lp[:, :, blank]
    emit_lp = lp[:, np.arange(U), tgt]  # (T, U)

    # within a row the recursion alpha[t,u] = logadd(a[u], alpha[t,u-1] + emit[t,u-1])
    # becomes a log-add scan once the cumulative emission offset is removed
    alpha = np.empty((T, U1))
    a = np.full(U1, -np.inf)
    a[0] = 0.0
    for t in range(T):
        if t:
            a = alpha[t - 1] + blank_lp[t - 1]
        c = np.concatenate(([0.0], np.cumsum(emit_lp[t])))
        alpha[t] = c + np.logaddexp.accumulate(a - c)

    beta = np.empty((T, U1))
    for t in reversed(range(T)):
        if t == T - 1:
            b = np.full(U1, -np.inf)
            b[U] = blank_lp[t, U]
        else:
            b = beta[t + 1] + blank_lp[t]
        d = np.concatenate((np.cumsum(emit_lp[t][::-1])[::-1], [0.0]))
        beta[t] = d + np.logaddexp.accumulate((b - d)[::-1])[::-1]

    loglik = float(alpha[T - 1, U] + blank_lp[T - 1, U])
    return Lattice(lp, tgt, alpha, beta, loglik, blank)


def rnnt_loss(log_probs, target, blank: int = 0):
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``log_probs``."""
    lat = forward_backward(log_probs, target, blank)
    lp, tgt, alpha, beta = lat.log_probs, lat.target, lat.alpha, lat.beta
    T, U1, _ = lp.shape
    U = U1 - 1
    ll = lat.log_likelihood
    grad = np.zeros_like(lp)
    nxt = np.full((T, U1), -np.inf)
    nxt[:-1] = beta[1:]
    nxt[-1, -1] = 0.0
    grad[:, :, blank] = -np.exp(alpha + lp[:, :, blank] + nxt - ll)
    if U:
        emit = lp[:, np.arange(U), tgt]
        grad[:, np.arange(U), tgt] = -np.exp(alpha[:, :U] + emit + beta[:, 1:] - ll)
    return -ll, grad

