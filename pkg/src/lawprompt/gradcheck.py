"""Central finite-difference checks for every trainable parameter family.

Relative error is ``|a - n| / max(|a|, |n|, floor)``. The floor keeps
entries whose true gradient is (near) zero from dividing round-off noise
by round-off noise: with eps = 1e-5 and O(1) losses the difference
quotient carries an absolute error around 1e-10 (attention key biases,
whose true gradient is exactly zero, show this), so a 1e-5 floor still
flags a 100% error on any gradient down to about 1e-9.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fact_encoder
from . import prompt_model as pm
from .corpus import RESERVED_TOKENS, Vocab
from .joint_space import SentenceEncoder, case_loss_and_grads

EPS = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    family: str
    param: str
    n_checked: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(analytic: float, numeric: float, floor: float = FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_params(loss_fn: Callable[[], float], params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 rng: np.random.Generator, samples: int | None, eps: float = EPS) -> dict[str, tuple[int, float]]:
    """Perturb entries of each array in place and compare with ``grads``.

    ``samples=None`` checks every entry; otherwise at most ``samples``
    distinct entries per array, chosen with ``rng``.
    """
    out = {}
    for name in sorted(params):
        p = params[name]
        flat = p.reshape(-1)
        if samples is None or samples >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=samples, replace=False)
        worst = 0.0
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            worst = max(worst, rel_error(float(g[i]), (lp - lm) / (2 * eps)))
        out[name] = (len(idx), worst)
    return out


def _toy_vocab(size: int) -> Vocab:
    return Vocab(RESERVED_TOKENS + tuple(chr(0x4E00 + i) for i in range(size - 3)))


def check_retriever(seed: int = 0, samples: int | None = 16) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    vocab = _toy_vocab(24)
    enc = SentenceEncoder.init(vocab, d_r=16, seed=seed)
    case = list(rng.integers(3, 24, size=20))
    pos = [list(rng.integers(3, 24, size=n)) for n in (12, 9)]
    neg = [list(rng.integers(3, 24, size=n)) for n in (10, 14)]
    tau = 0.5

    def loss():
        return case_loss_and_grads(enc, case, pos, neg, tau)[0]

    _, grads = case_loss_and_grads(enc, case, pos, neg, tau)
    res = check_params(loss, enc.params, grads, rng, samples)
    return [GradCheckResult("retriever_encoder", k, n, e) for k, (n, e) in res.items()]


def check_bigru(seed: int = 0, samples: int | None = 16) -> list[GradCheckResult]:
    """GRU gates and inputs under a random linear read-out of ``u``."""
    rng = np.random.default_rng(seed)
    d_in, d_g, T = 12, 8, 24
    params = fact_encoder.init_bigru(d_in, d_g, rng, scale=0.5)
    inputs = rng.normal(size=(T, d_in))
    w = rng.normal(size=2 * d_g)

    def loss():
        return float(w @ fact_encoder.encode_facts(params, inputs).u)

    enc = fact_encoder.encode_facts(params, inputs)
    grads, d_inputs = fact_encoder.encode_facts_backward(params, enc, w)
    res = check_params(loss, params, grads, rng, samples)
    out = [GradCheckResult("gru_gates", k, n, e) for k, (n, e) in res.items()]
    res = check_params(loss, {"inputs": inputs}, {"inputs": d_inputs}, rng, samples)
    out.append(GradCheckResult("gru_inputs", "inputs", *res["inputs"]))
    return out


def _family(name: str) -> str:
    if name == "soft":
        return "soft_prompt"
    if name == "embed":
        return "token_embeddings"
    if name == "out_bias":
        return "output_bias"
    if name.startswith("gru."):
        return "gru_gates"
    leaf = name.rsplit(".", 1)[-1]
    if leaf.startswith("ln"):
        return "layer_norm"
    if leaf in ("w1", "b1", "w2", "b2"):
        return "feed_forward"
    return "attention"


def prompt_instance(seed: int = 0):
    """A d_h = 16, length-22 prompt exercising every segment and u."""
    rng = np.random.default_rng(seed)
    V = 30
    cfg = pm.ModelConfig(d_h=16, n_layers=2, n_heads=2, d_ff=24, cap_len=24)
    model = pm.PromptModel.init(V, cfg, seed=seed)
    # perturb the zero-initialized entries so their gradients are generic
    for k, v in model.params.items():
        v += rng.normal(0.0, 0.1, size=v.shape)
    # larger recurrent weights so u moves the loss measurably
    for k, v in fact_encoder.init_bigru(16, 8, rng, scale=0.5).items():
        model.params["gru." + k] = v
    tpl = pm.EncodedTemplates(tuple(rng.integers(3, V, 3)), tuple(rng.integers(3, V, 3)))
    ex = pm.PreparedExample(
        case_tokens=tuple(rng.integers(3, V, 8)),
        snippet_tokens=tuple(rng.integers(3, V, 3)),
        fact_tokens=tuple(rng.integers(3, V, 6)),
        label=0,
        targets=np.array([rng.integers(3, V), rng.integers(3, V), 0]),
    )
    return model, tpl, ex, 3


def check_prompt_model(seed: int = 0, samples: int | None = 16) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed + 1)
    model, tpl, ex, m = prompt_instance(seed)

    def loss():
        return pm.loss_and_grads(model, ex, tpl, m)[0]

    _, grads = pm.loss_and_grads(model, ex, tpl, m)
    res = check_params(loss, model.params, grads, rng, samples)
    return [GradCheckResult(_family(k), k, n, e) for k, (n, e) in res.items()]


def run_all(seed: int = 0, samples: int | None = 16) -> list[GradCheckResult]:
    return check_retriever(seed, samples) + check_bigru(seed, samples) + check_prompt_model(seed, samples)


def summarize(results: list[GradCheckResult]) -> dict[str, float]:
    """Worst relative error per family."""
    out: dict[str, float] = {}
    for r in results:
        out[r.family] = max(out.get(r.family, 0.0), r.max_rel_error)
    return out
