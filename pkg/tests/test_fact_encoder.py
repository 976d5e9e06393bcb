import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawprompt import fact_encoder as fe
from lawprompt.corpus import build_vocab_from_texts


def scalar_gru_step(x, h, W, b, Wr, br, Wh, bh):
    """Loop-by-loop reference of one GRU step."""
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))
    d = len(h)
    xh = list(x) + list(h)
    z = [sig(sum(W[i][j] * xh[j] for j in range(len(xh))) + b[i]) for i in range(d)]
    r = [sig(sum(Wr[i][j] * xh[j] for j in range(len(xh))) + br[i]) for i in range(d)]
    xrh = list(x) + [r[i] * h[i] for i in range(d)]
    c = [np.tanh(sum(Wh[i][j] * xrh[j] for j in range(len(xrh))) + bh[i]) for i in range(d)]
    return np.array([(1 - z[i]) * h[i] + z[i] * c[i] for i in range(d)])


def test_zero_params_zero_state():
    params = {k: np.zeros_like(v) for k, v in fe.init_bigru(3, 2, np.random.default_rng(0)).items()}
    np.testing.assert_array_equal(fe.gru_cell(np.ones(3), np.zeros(2), params), np.zeros(2))


def test_closed_update_gate_keeps_zero():
    params = fe.init_bigru(3, 2, np.random.default_rng(0))
    params["fwd.bz"] = np.full(2, -50.0)
    assert np.abs(fe.gru_cell(np.ones(3), np.zeros(2), params)).max() < 1e-20


def test_cell_matches_scalar_reference():
    rng = np.random.default_rng(4)
    p = fe.init_bigru(4, 3, rng, scale=0.8)
    x, h = rng.normal(size=4), rng.uniform(-0.9, 0.9, size=3)
    want = scalar_gru_step(x, h, p["fwd.wz"], p["fwd.bz"], p["fwd.wr"], p["fwd.br"], p["fwd.wh"], p["fwd.bh"])
    np.testing.assert_allclose(fe.gru_cell(x, h, p), want, rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        fe.gru_cell(np.ones(5), h, p)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_state_stays_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    # moderate pre-activations: saturated gates round to exactly +-1 in float64
    p = fe.init_bigru(3, 4, rng, scale=1.0)
    h = rng.uniform(-0.99, 0.99, size=4)
    out = fe.gru_cell(rng.normal(size=3), h, p)
    assert np.all(np.abs(out) < 1)


def test_facts_to_inputs_counts():
    vocab = build_vocab_from_texts(["abc,"])
    table = np.arange(len(vocab) * 2, dtype=float).reshape(len(vocab), 2)
    assert fe.facts_to_inputs([], vocab, table, 10).shape == (0, 2)
    assert fe.facts_to_inputs(["ab", "c"], vocab, table, 10).shape == (4, 2)
    assert fe.facts_to_inputs(["ab", "c"], vocab, table, 2).shape == (2, 2)
    np.testing.assert_array_equal(fe.facts_to_inputs(["ab"], vocab, table, 10)[0], table[vocab.id("a")])


def test_encode_empty_and_length_one():
    rng = np.random.default_rng(0)
    p = fe.init_bigru(4, 3, rng)
    assert fe.encode_facts(p, np.zeros((0, 4))).u.tolist() == [0.0] * 6
    x = rng.normal(size=(1, 4))
    u = fe.encode_facts(p, x).u
    np.testing.assert_allclose(u[:3], fe.gru_cell(x[0], np.zeros(3), p, "fwd"), atol=1e-15)
    np.testing.assert_allclose(u[3:], fe.gru_cell(x[0], np.zeros(3), p, "bwd"), atol=1e-15)


def test_encode_matches_stepwise_cells():
    rng = np.random.default_rng(1)
    p = fe.init_bigru(4, 3, rng, scale=0.5)
    X = rng.normal(size=(5, 4))
    h = np.zeros(3)
    for x in X:
        h = fe.gru_cell(x, h, p, "fwd")
    g = np.zeros(3)
    for x in X[::-1]:
        g = fe.gru_cell(x, g, p, "bwd")
    np.testing.assert_allclose(fe.encode_facts(p, X).u, np.concatenate([h, g]), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_reverse_and_swap_swaps_halves(seed, T):
    rng = np.random.default_rng(seed)
    p = fe.init_bigru(3, 2, rng, scale=0.7)
    X = rng.normal(size=(T, 3))
    swapped = {("bwd" if k.startswith("fwd") else "fwd") + k[3:]: v for k, v in p.items()}
    u = fe.encode_facts(p, X).u
    v = fe.encode_facts(swapped, X[::-1].copy()).u
    np.testing.assert_allclose(v, np.concatenate([u[2:], u[:2]]), atol=1e-14)


@pytest.mark.parametrize("T", [1, 3, 6])
def test_bptt_matches_finite_differences_norm_loss(T):
    rng = np.random.default_rng(T)
    p = fe.init_bigru(3, 2, rng, scale=0.6)
    X = rng.normal(size=(T, 3))
    enc = fe.encode_facts(p, X)
    grads, dX = fe.encode_facts_backward(p, enc, 2 * enc.u)
    eps = 1e-5
    for k, arr in list(p.items()) + [("X", X)]:
        g = dX if k == "X" else grads[k]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            hi = float(np.sum(fe.encode_facts(p, X).u ** 2))
            arr[idx] = old - eps
            lo = float(np.sum(fe.encode_facts(p, X).u ** 2))
            arr[idx] = old
            num = (hi - lo) / (2 * eps)
            assert abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-5) < 1e-4, (k, idx)
