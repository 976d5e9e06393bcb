"""Bidirectional GRU summary of the factual-element list.

Gate equations (one direction)::

    z  = sigmoid(Wz [x; h] + bz)
    r  = sigmoid(Wr [x; h] + br)
    c  = tanh(Wh [x; r*h] + bh)
    h' = (1 - z) * h + z * c

The summary ``u`` concatenates the forward pass's last state with the
backward pass's state at the first position (its final output). An empty
input gives ``u = 0``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .corpus import Vocab

DIRECTIONS = ("fwd", "bwd")
_GATES = ("wz", "wr", "wh", "bz", "br", "bh")


def init_bigru(d_in: int, d_g: int, rng: np.random.Generator, scale: float = 0.1) -> dict[str, np.ndarray]:
    params = {}
    for d in DIRECTIONS:
        for g in ("wz", "wr", "wh"):
            params[f"{d}.{g}"] = rng.uniform(-scale, scale, size=(d_g, d_in + d_g))
        for g in ("bz", "br", "bh"):
            params[f"{d}.{g}"] = rng.uniform(-scale, scale, size=d_g)
    return params


def hidden_size(params: Mapping[str, np.ndarray]) -> int:
    return params["fwd.bz"].shape[0]


def _direction(params, d):
    return [params[f"{d}.{g}"] for g in _GATES]


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_cell(x_t: np.ndarray, h_prev: np.ndarray, params: Mapping[str, np.ndarray], direction: str = "fwd") -> np.ndarray:
    """One GRU step, written out directly (no kernel)."""
    wz, wr, wh, bz, br, bh = _direction(params, direction)
    d_g = bz.shape[0]
    if h_prev.shape != (d_g,) or x_t.shape[0] + d_g != wz.shape[1]:
        raise ValueError(f"dimension mismatch: x {x_t.shape}, h {h_prev.shape}, W {wz.shape}")
    xh = np.concatenate([x_t, h_prev])
    z = _sigmoid(wz @ xh + bz)
    r = _sigmoid(wr @ xh + br)
    c = np.tanh(wh @ np.concatenate([x_t, r * h_prev]) + bh)
    return (1.0 - z) * h_prev + z * c


def fact_token_ids(facts: Sequence[str], vocab: Vocab, max_fact_len: int, separator: str = ",") -> list[int]:
    """Join the elements with ``separator``, tokenize, keep the first ``max_fact_len``."""
    if not len(facts):
        return []
    return vocab.encode(separator.join(facts), max_fact_len)


def facts_to_inputs(facts: Sequence[str], vocab: Vocab, embed_table: np.ndarray, max_fact_len: int,
                    separator: str = ",") -> np.ndarray:
    ids = fact_token_ids(facts, vocab, max_fact_len, separator)
    return embed_table[np.asarray(ids, dtype=np.intp)].reshape(len(ids), embed_table.shape[1])


class FactEncoding:
    """Result of :func:`encode_facts`; keeps what the backward pass needs."""

    def __init__(self, u, inputs, fwd=None, bwd=None):
        self.u = u
        self.inputs = inputs
        self.fwd = fwd
        self.bwd = bwd


def encode_facts(params: Mapping[str, np.ndarray], inputs: np.ndarray) -> FactEncoding:
    d_g = hidden_size(params)
    if len(inputs) == 0:
        return FactEncoding(np.zeros(2 * d_g), inputs)
    h0 = np.zeros(d_g)
    fwd = _kernels.gru_forward(inputs, *_direction(params, "fwd"), h0)
    bwd = _kernels.gru_forward(inputs[::-1], *_direction(params, "bwd"), h0)
    u = np.concatenate([fwd[0][-1], bwd[0][-1]])
    return FactEncoding(u, inputs, fwd, bwd)


def encode_facts_backward(params: Mapping[str, np.ndarray], enc: FactEncoding, du: np.ndarray):
    """Gradients of a loss w.r.t. the GRU parameters and the input vectors.

    Returns ``(grads, d_inputs)``; ``grads`` uses the same keys as ``params``.
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    T = len(enc.inputs)
    if T == 0:
        return grads, np.zeros_like(enc.inputs)
    d_g = hidden_size(params)
    d_inputs = np.zeros_like(enc.inputs)
    for d, cache, x, du_half in (
        ("fwd", enc.fwd, enc.inputs, du[:d_g]),
        ("bwd", enc.bwd, enc.inputs[::-1], du[d_g:]),
    ):
        dH = np.zeros((T, d_g))
        dH[-1] = du_half
        wz, wr, wh = (params[f"{d}.{g}"] for g in ("wz", "wr", "wh"))
        dX, dwz, dwr, dwh, dbz, dbr, dbh, _ = _kernels.gru_backward(x, wz, wr, wh, *cache, dH)
        for g, val in zip(_GATES, (dwz, dwr, dwh, dbz, dbr, dbh)):
            grads[f"{d}.{g}"] += val
        d_inputs += dX if d == "fwd" else dX[::-1]
    return grads, d_inputs
