"""Parametric layers with hand-derived backward passes.

Parameters live in flat ``dict[str, ndarray]`` maps keyed by dotted names so
that checkpoints, optimizers and transplant surgery all share one namespace.
Every forward returns a cache consumed by the matching backward.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError, VocabularyError
from ..numerics import Rng, log_softmax


def glorot(rng: Rng, shape) -> np.ndarray:
    fan_out, fan_in = shape
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LstmStack:
    """Stack of projected LSTM layers (LSTMP), batch-major ``(B, T, d)``.

    Gate order inside the fused matrices is input, forget, cell, output.
    """

    def __init__(self, prefix: str, num_layers: int, input_dim: int,
                 hidden_dim: int, projection_dim: int):
        if num_layers < 1:
            raise ShapeError("LSTM stack needs at least one layer")
        self.prefix = prefix
        self.num_layers = num_layers
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.projection_dim = projection_dim

    def layer_names(self, layer: int) -> tuple[str, str, str, str]:
        p = f"{self.prefix}.l{layer}"
        return f"{p}.w_ih", f"{p}.w_hh", f"{p}.bias", f"{p}.w_proj"

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, P = self.hidden_dim, self.projection_dim
        out = {}
        for layer in range(self.num_layers):
            d = self.input_dim if layer == 0 else P
            w_ih, w_hh, bias, w_proj = self.layer_names(layer)
            out[w_ih] = (4 * H, d)
            out[w_hh] = (4 * H, P)
            out[bias] = (4 * H,)
            out[w_proj] = (P, H)
        return out

    def init(self, rng: Rng) -> dict[str, np.ndarray]:
        H = self.hidden_dim
        params = {}
        for name, shape in self.shapes().items():
            if name.endswith(".bias"):
                b = np.zeros(shape)
                b[H:2 * H] = 1.0
                params[name] = b
            else:
                params[name] = glorot(rng, shape)
        return params

    def zero_state(self, batch: int):
        return [(np.zeros((batch, self.projection_dim)), np.zeros((batch, self.hidden_dim)))
                for _ in range(self.num_layers)]

    def forward(self, params, x, state=None):
        """Run the stack over ``x``; returns (outputs, cache).

        ``x`` may be ``(T, d)`` for a single sequence or ``(B, T, d)``.
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(f"{self.prefix}: expected input (..., {self.input_dim}), got {x.shape}")
        B, T, _ = x.shape
        if T < 1:
            raise ShapeError(f"{self.prefix}: empty sequence")
        if state is None:
            state = self.zero_state(B)
        H = self.hidden_dim
        layer_caches = []
        final_state = []
        inp = x
        for layer in range(self.num_layers):
            w_ih, w_hh, bias, w_proj = (params[n] for n in self.layer_names(layer))
            r, c = state[layer]
            xw = inp @ w_ih.T + bias
            gates = np.empty((B, T, 4 * H))
            cells = np.empty((B, T + 1, H))
            tcs = np.empty((B, T, H))
            hs = np.empty((B, T, H))
            rs = np.empty((B, T + 1, self.projection_dim))
            cells[:, 0] = c
            rs[:, 0] = r
            for t in range(T):
                g = xw[:, t] + r @ w_hh.T
                act = np.empty_like(g)
                act[:, :2 * H] = sigmoid(g[:, :2 * H])
                act[:, 2 * H:3 * H] = np.tanh(g[:, 2 * H:3 * H])
                act[:, 3 * H:] = sigmoid(g[:, 3 * H:])
                c = act[:, H:2 * H] * c + act[:, :H] * act[:, 2 * H:3 * H]
                tc = np.tanh(c)
                h = act[:, 3 * H:] * tc
                r = h @ w_proj.T
                gates[:, t] = act
                cells[:, t + 1] = c
                tcs[:, t] = tc
                hs[:, t] = h
                rs[:, t + 1] = r
            layer_caches.append((inp, gates, cells, tcs, hs, rs))
            final_state.append((r, c))
            inp = rs[:, 1:]
        out = inp
        cache = {"layers": layer_caches, "squeeze": squeeze, "final_state": final_state}
        return (out[0] if squeeze else out), cache

    def backward(self, params, cache, dout):
        """Gradients of a loss whose derivative w.r.t. the outputs is ``dout``.

        Returns (param_grads, d_inputs).
        """
        squeeze = cache["squeeze"]
        dout = np.asarray(dout, dtype=np.float64)
        if squeeze:
            dout = dout[None]
        H = self.hidden_dim
        grads = {}
        d_above = dout
        for layer in reversed(range(self.num_layers)):
            names = self.layer_names(layer)
            w_ih, w_hh, _, w_proj = (params[n] for n in names)
            inp, gates, cells, tcs, hs, rs = cache["layers"][layer]
            B, T, _ = gates.shape
            dgates = np.empty((B, T, 4 * H))
            d_proj = np.zeros_like(w_proj)
            dr_next = np.zeros((B, self.projection_dim))
            dc_next = np.zeros((B, H))
            for t in reversed(range(T)):
                act = gates[:, t]
                i, f, g, o = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
                dr = d_above[:, t] + dr_next
                d_proj += dr.T @ hs[:, t]
                dh = dr @ w_proj
                tc = tcs[:, t]
                dc = dh * o * (1.0 - tc * tc) + dc_next
                dg = dgates[:, t]
                dg[:, :H] = dc * g * i * (1.0 - i)
                dg[:, H:2 * H] = dc * cells[:, t] * f * (1.0 - f)
                dg[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
                dg[:, 3 * H:] = dh * tc * o * (1.0 - o)
                dc_next = dc * f
                dr_next = dg @ w_hh
            flat_dg = dgates.reshape(B * T, 4 * H)
            grads[names[0]] = flat_dg.T @ inp.reshape(B * T, -1)
            grads[names[1]] = flat_dg.T @ rs[:, :-1].reshape(B * T, -1)
            grads[names[2]] = flat_dg.sum(axis=0)
            grads[names[3]] = d_proj
            d_above = dgates @ w_ih
        return grads, (d_above[0] if squeeze else d_above)

    def step(self, params, x_t, state):
        """Advance one time step for a batch ``(B, d)``; used by decoders."""
        H = self.hidden_dim
        new_state = []
        inp = x_t
        for layer in range(self.num_layers):
            w_ih, w_hh, bias, w_proj = (params[n] for n in self.layer_names(layer))
            r, c = state[layer]
            g = inp @ w_ih.T + r @ w_hh.T + bias
            i = sigmoid(g[:, :H])
            f = sigmoid(g[:, H:2 * H])
            gg = np.tanh(g[:, 2 * H:3 * H])
            o = sigmoid(g[:, 3 * H:])
            c = f * c + i * gg
            r = (o * np.tanh(c)) @ w_proj.T
            new_state.append((r, c))
            inp = r
        return inp, new_state


def embedding_forward(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    bad = ids[(ids < 0) | (ids >= table.shape[0])]
    if bad.size:
        raise VocabularyError(f"label id {int(bad[0])} outside embedding table of {table.shape[0]} rows")
    return table[ids]


def embedding_backward(table_shape, ids, dout) -> np.ndarray:
    grad = np.zeros(table_shape)
    ids = np.asarray(ids, dtype=np.int64)
    np.add.at(grad, ids.reshape(-1), np.asarray(dout).reshape(ids.size, table_shape[1]))
    return grad


def linear_log_softmax(weight, bias, x):
    """Affine map followed by a row-wise log-softmax."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: weight {weight.shape}, bias {bias.shape}, input {x.shape}")
    return log_softmax(x @ weight.T + bias)


def log_softmax_backward(logp, dlogp):
    """Map a gradient w.r.t. log-probabilities back onto the logits."""
    return dlogp - np.exp(logp) * dlogp.sum(axis=-1, keepdims=True)


def softmax_xent(logp, targets):
    """Summed negative log-likelihood and its gradient w.r.t. the logits."""
    targets = np.asarray(targets, dtype=np.int64)
    flat = logp.reshape(-1, logp.shape[-1])
    idx = targets.reshape(-1)
    nll = -float(flat[np.arange(idx.size), idx].sum())
    dlogits = np.exp(flat)
    dlogits[np.arange(idx.size), idx] -= 1.0
    return nll, dlogits.reshape(logp.shape)
