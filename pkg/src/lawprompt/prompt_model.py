"""Prompt assembly and the masked-LM inference model.

The input sequence is

    [s1 | T1 | MASK * m | case | T2 | snippets | s2]

where ``s1``/``s2`` are soft prompts embedded from a trainable 2 x d_h
matrix, to which the fact vector ``u`` is added. A small post-LN
transformer encoder (numpy, hand-written backward pass) contextualizes
the sequence and the mask rows are projected onto the vocabulary through
the tied token embedding table.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import fact_encoder
from .corpus import MASK, PAD, UNK, Vocab
from .errors import NumericError

log = logging.getLogger(__name__)

RESERVED_IDS = (PAD, MASK, UNK)


# ----------------------------------------------------------------------------
# Templates and layout
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class HardTemplates:
    t1: str = "He will be charged with criminal responsibility for"
    t2: str = "Keywords in the case description are as follows:"

    def encode(self, vocab: Vocab) -> "EncodedTemplates":
        return EncodedTemplates(tuple(vocab.encode(self.t1)), tuple(vocab.encode(self.t2)))


ENGLISH_TEMPLATES = HardTemplates()
CHINESE_TEMPLATES = HardTemplates("他将因以下罪名被追究刑事责任：", "案情描述中的关键词如下：")


@dataclass(frozen=True)
class EncodedTemplates:
    t1: tuple[int, ...]
    t2: tuple[int, ...]


@dataclass(frozen=True)
class PromptLayout:
    token_ids: np.ndarray
    soft_positions: tuple[int, int]
    mask_positions: np.ndarray
    segments: dict = field(compare=False)

    def __len__(self):
        return len(self.token_ids)


def assemble_prompt(case_tokens: Sequence[int], snippet_tokens: Sequence[int], templates: EncodedTemplates,
                    mask_count: int, cap_len: int | None = None) -> PromptLayout:
    """Lay out ``[s1 | T1 | M | X | T2 | K | s2]``.

    When the total exceeds ``cap_len`` only the case segment is shortened
    (keeping its prefix). Soft-prompt slots carry PAD ids; their rows come
    from the soft-prompt matrix.
    """
    if mask_count < 1:
        raise ValueError("mask_count must be >= 1")
    t1, t2 = list(templates.t1), list(templates.t2)
    fixed = 2 + len(t1) + mask_count + len(t2) + len(snippet_tokens)
    case = list(case_tokens)
    if cap_len is not None and fixed + len(case) > cap_len:
        room = cap_len - fixed
        if room < 0:
            raise ValueError(f"prompt without the case is {fixed} tokens, over the cap of {cap_len}")
        case = case[:room]
    ids = [PAD] + t1 + [MASK] * mask_count + case + t2 + list(snippet_tokens) + [PAD]
    n = len(ids)
    m0 = 1 + len(t1)
    segments = {
        "t1": (1, m0),
        "mask": (m0, m0 + mask_count),
        "case": (m0 + mask_count, m0 + mask_count + len(case)),
        "t2": (m0 + mask_count + len(case), m0 + mask_count + len(case) + len(t2)),
        "snippets": (n - 1 - len(snippet_tokens), n - 1),
    }
    return PromptLayout(np.asarray(ids, dtype=np.intp), (0, n - 1), np.arange(m0, m0 + mask_count), segments)


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 64
    cap_len: int = 256
    embed_std: float = 0.5

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValueError("d_h must be divisible by n_heads")
        if self.d_h % 2:
            raise ValueError("d_h must be even (the BiGRU hidden size is d_h / 2)")


LAYER_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b",
              "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class PromptModel:
    """All trainable state: token embeddings, soft prompts, encoder, BiGRU.

    ``params`` is a flat ``name -> array`` dict; BiGRU entries are prefixed
    ``gru.``.
    """

    def __init__(self, params: dict[str, np.ndarray], config: ModelConfig):
        self.params = params
        self.config = config
        self.pe = sinusoidal_positions(config.cap_len, config.d_h)

    @classmethod
    def init(cls, vocab_size: int, config: ModelConfig = ModelConfig(), seed: int = 0) -> "PromptModel":
        rng = np.random.default_rng(seed)
        d, f = config.d_h, config.d_ff
        p: dict[str, np.ndarray] = {"embed": rng.normal(0.0, config.embed_std, size=(vocab_size, d))}
        # soft prompts start from the rows of two reserved tokens
        p["soft"] = p["embed"][[PAD, UNK]].copy()
        p["out_bias"] = np.zeros(vocab_size)
        for layer in range(config.n_layers):
            pre = f"layers.{layer}."
            for w in ("wq", "wk", "wv", "wo"):
                p[pre + w] = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d))
                p[pre + "b" + w[1]] = np.zeros(d)
            p[pre + "ln1_g"], p[pre + "ln1_b"] = np.ones(d), np.zeros(d)
            p[pre + "w1"] = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, f))
            p[pre + "b1"] = np.zeros(f)
            p[pre + "w2"] = rng.normal(0.0, 1.0 / math.sqrt(f), size=(f, d))
            p[pre + "b2"] = np.zeros(d)
            p[pre + "ln2_g"], p[pre + "ln2_b"] = np.ones(d), np.zeros(d)
        for k, v in fact_encoder.init_bigru(d, d // 2, rng).items():
            p["gru." + k] = v
        return cls(p, config)

    @property
    def vocab_size(self) -> int:
        return self.params["embed"].shape[0]

    def gru_params(self) -> dict[str, np.ndarray]:
        return {k[4:]: v for k, v in self.params.items() if k.startswith("gru.")}

    def layer_params(self, layer: int) -> dict[str, np.ndarray]:
        pre = f"layers.{layer}."
        return {k: self.params[pre + k] for k in LAYER_KEYS}

    def copy(self) -> "PromptModel":
        return PromptModel({k: v.copy() for k, v in self.params.items()}, self.config)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


# ----------------------------------------------------------------------------
# Embedding and fact injection
# ----------------------------------------------------------------------------


def embed(layout: PromptLayout, model: PromptModel) -> np.ndarray:
    """Token rows from the embedding table, soft rows from ``soft``, plus positions."""
    n = len(layout)
    if n > model.config.cap_len:
        raise ValueError(f"sequence of {n} exceeds cap_len {model.config.cap_len}")
    E = model.params["embed"][layout.token_ids]
    s1, s2 = layout.soft_positions
    E[s1] = model.params["soft"][0]
    E[s2] = model.params["soft"][1]
    return E + model.pe[:n]


def inject_facts(E: np.ndarray, u: np.ndarray, soft_positions: tuple[int, int]) -> np.ndarray:
    if u.shape != (E.shape[1],):
        raise ValueError(f"fact vector has shape {u.shape}, expected ({E.shape[1]},)")
    out = E.copy()
    for i in soft_positions:
        out[i] = out[i] + u
    return out


# ----------------------------------------------------------------------------
# Encoder
# ----------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
LN_EPS = 1e-5


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    d = dy.shape[-1]
    dx = inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, (dy * xhat).sum(0), dy.sum(0)


def _softmax(a, axis=-1):
    a = a - a.max(axis=axis, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=axis, keepdims=True)


def _layer_forward(p, x, n_heads):
    n, d = x.shape
    dk = d // n_heads
    q = (x @ p["wq"] + p["bq"]).reshape(n, n_heads, dk).transpose(1, 0, 2)
    k = (x @ p["wk"] + p["bk"]).reshape(n, n_heads, dk).transpose(1, 0, 2)
    v = (x @ p["wv"] + p["bv"]).reshape(n, n_heads, dk).transpose(1, 0, 2)
    attn = _softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dk))
    ctx = (attn @ v).transpose(1, 0, 2).reshape(n, d)
    a = x + ctx @ p["wo"] + p["bo"]
    y1, ln1 = _layer_norm(a, p["ln1_g"], p["ln1_b"])
    pre = y1 @ p["w1"] + p["b1"]
    act, t = _gelu(pre)
    b = y1 + act @ p["w2"] + p["b2"]
    y2, ln2 = _layer_norm(b, p["ln2_g"], p["ln2_b"])
    cache = dict(x=x, q=q, k=k, v=v, attn=attn, ctx=ctx, y1=y1, ln1=ln1, pre=pre, act=act, t=t, ln2=ln2)
    return y2, cache


def _layer_backward(p, c, dy, n_heads):
    n, d = dy.shape
    dk = d // n_heads
    g = {}
    db, g["ln2_g"], g["ln2_b"] = _layer_norm_backward(dy, p["ln2_g"], c["ln2"])
    g["w2"] = c["act"].T @ db
    g["b2"] = db.sum(0)
    dpre = (db @ p["w2"].T) * _gelu_grad(c["pre"], c["t"])
    g["w1"] = c["y1"].T @ dpre
    g["b1"] = dpre.sum(0)
    dy1 = db + dpre @ p["w1"].T
    da, g["ln1_g"], g["ln1_b"] = _layer_norm_backward(dy1, p["ln1_g"], c["ln1"])
    g["wo"] = c["ctx"].T @ da
    g["bo"] = da.sum(0)
    dctx = (da @ p["wo"].T).reshape(n, n_heads, dk).transpose(1, 0, 2)
    attn = c["attn"]
    dattn = dctx @ c["v"].transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(-1, keepdims=True)) / math.sqrt(dk)
    dq = dscores @ c["k"]
    dkk = dscores.transpose(0, 2, 1) @ c["q"]
    dq, dkk, dv = (t.transpose(1, 0, 2).reshape(n, d) for t in (dq, dkk, dv))
    x = c["x"]
    g["wq"], g["bq"] = x.T @ dq, dq.sum(0)
    g["wk"], g["bk"] = x.T @ dkk, dkk.sum(0)
    g["wv"], g["bv"] = x.T @ dv, dv.sum(0)
    dx = da + dq @ p["wq"].T + dkk @ p["wk"].T + dv @ p["wv"].T
    return dx, g


@dataclass
class EncoderCache:
    layers: list
    attention: list


def encode(E_prime: np.ndarray, model: PromptModel) -> tuple[np.ndarray, EncoderCache]:
    """Contextual representation for every position (same shape as the input)."""
    x = E_prime
    caches = []
    for layer in range(model.config.n_layers):
        x, cache = _layer_forward(model.layer_params(layer), x, model.config.n_heads)
        caches.append(cache)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in encoder output")
    return x, EncoderCache(caches, [c["attn"] for c in caches])


def encode_backward(dR: np.ndarray, model: PromptModel, cache: EncoderCache, grads: dict[str, np.ndarray]) -> np.ndarray:
    dx = dR
    for layer in reversed(range(model.config.n_layers)):
        dx, g = _layer_backward(model.layer_params(layer), cache.layers[layer], dx, model.config.n_heads)
        pre = f"layers.{layer}."
        for k, v in g.items():
            grads[pre + k] += v
    return dx


# ----------------------------------------------------------------------------
# Output, loss
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelOutput:
    logits: np.ndarray
    predicted: np.ndarray


def mask_logits(R: np.ndarray, layout: PromptLayout, model: PromptModel) -> np.ndarray:
    return R[layout.mask_positions] @ model.params["embed"].T + model.params["out_bias"]


def predict_from_logits(logits: np.ndarray) -> np.ndarray:
    masked = logits.copy()
    masked[:, list(RESERVED_IDS)] = -np.inf
    return np.argmax(masked, axis=1)


def predict_masks(R: np.ndarray, layout: PromptLayout, model: PromptModel) -> ModelOutput:
    logits = mask_logits(R, layout, model)
    return ModelOutput(logits, predict_from_logits(logits))


def label_targets(label_text: str, vocab: Vocab, mask_count: int) -> np.ndarray:
    ids = vocab.encode(label_text)[:mask_count]
    if not ids:
        raise ValueError(f"label text {label_text!r} tokenizes to nothing")
    return np.asarray(ids + [PAD] * (mask_count - len(ids)), dtype=np.intp)


def mlm_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over non-PAD target positions, and its gradient."""
    keep = targets != PAD
    count = int(keep.sum())
    if count == 0:
        raise ValueError("no non-PAD targets")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.nonzero(keep)[0]
    loss = -float(logp[rows, targets[rows]].sum()) / count
    dlogits = np.exp(logp)
    dlogits[rows, targets[rows]] -= 1.0
    dlogits[~keep] = 0.0
    return loss, dlogits / count


# ----------------------------------------------------------------------------
# Full forward / backward for one example
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedExample:
    """Model-ready token material for one case."""

    case_tokens: tuple[int, ...]
    snippet_tokens: tuple[int, ...]
    fact_tokens: tuple[int, ...]
    label: int
    targets: np.ndarray


@dataclass
class ForwardResult:
    layout: PromptLayout
    u: np.ndarray
    E: np.ndarray
    E_prime: np.ndarray
    R: np.ndarray
    output: ModelOutput
    cache: EncoderCache = None
    fact_cache: object = None


def forward(model: PromptModel, ex: PreparedExample, templates: EncodedTemplates, mask_count: int,
            use_facts: bool = True, use_snippets: bool = True) -> ForwardResult:
    snippets = ex.snippet_tokens if use_snippets else ()
    layout = assemble_prompt(ex.case_tokens, snippets, templates, mask_count, model.config.cap_len)
    E = embed(layout, model)
    fact_cache = None
    if use_facts:
        inputs = model.params["embed"][np.asarray(ex.fact_tokens, dtype=np.intp)].reshape(-1, model.config.d_h)
        fact_cache = fact_encoder.encode_facts(model.gru_params(), inputs)
        u = fact_cache.u
    else:
        u = np.zeros(model.config.d_h)
    E_prime = inject_facts(E, u, layout.soft_positions)
    R, cache = encode(E_prime, model)
    return ForwardResult(layout, u, E, E_prime, R, predict_masks(R, layout, model), cache, fact_cache)


def loss_and_grads(model: PromptModel, ex: PreparedExample, templates: EncodedTemplates, mask_count: int,
                   use_facts: bool = True, use_snippets: bool = True,
                   grads: dict[str, np.ndarray] | None = None) -> tuple[float, dict[str, np.ndarray]]:
    if grads is None:
        grads = model.zero_grads()
    res = forward(model, ex, templates, mask_count, use_facts, use_snippets)
    loss, dlogits = mlm_loss(res.output.logits, ex.targets)
    emb = model.params["embed"]
    mpos = res.layout.mask_positions
    grads["embed"] += dlogits.T @ res.R[mpos]
    grads["out_bias"] += dlogits.sum(0)
    dR = np.zeros_like(res.R)
    dR[mpos] = dlogits @ emb
    dX = encode_backward(dR, model, res.cache, grads)
    s1, s2 = res.layout.soft_positions
    grads["soft"][0] += dX[s1]
    grads["soft"][1] += dX[s2]
    inner = slice(s1 + 1, s2)
    np.add.at(grads["embed"], res.layout.token_ids[inner], dX[inner])
    if use_facts and len(ex.fact_tokens):
        g_gru, d_inputs = fact_encoder.encode_facts_backward(model.gru_params(), res.fact_cache, dX[s1] + dX[s2])
        for k, v in g_gru.items():
            grads["gru." + k] += v
        np.add.at(grads["embed"], np.asarray(ex.fact_tokens, dtype=np.intp), d_inputs)
    return loss, grads


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    lr: float = 3e-3
    batch: int = 8
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    mask_count: int = 20
    clip_norm: float = 1.0
    use_facts: bool = True
    use_snippets: bool = True
    token_dropout: float = 0.0


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def mean_loss(model: PromptModel, examples: Sequence[PreparedExample], templates: EncodedTemplates,
              mask_count: int, use_facts: bool = True, use_snippets: bool = True) -> float:
    """Forward-only mean mask cross-entropy."""
    total = 0.0
    for ex in examples:
        res = forward(model, ex, templates, mask_count, use_facts, use_snippets)
        total += mlm_loss(res.output.logits, ex.targets)[0]
    return total / len(examples)


def _drop_tokens(ex: PreparedExample, rate: float, rng: np.random.Generator) -> PreparedExample:
    """Replace each case token with UNK with probability ``rate``."""
    if rate <= 0.0 or not ex.case_tokens:
        return ex
    keep = rng.random(len(ex.case_tokens)) >= rate
    case = tuple(t if k else UNK for t, k in zip(ex.case_tokens, keep))
    return replace(ex, case_tokens=case)


def train(model: PromptModel, train_set: Sequence[PreparedExample], val_set: Sequence[PreparedExample],
          templates: EncodedTemplates, config: TrainConfig,
          evaluate_fn: Callable[[PromptModel, Sequence[PreparedExample]], float] | None = None,
          max_steps: int | None = None) -> TrainHistory:
    """Adam on the mask cross-entropy, early-stopped on validation macro-F1.

    ``evaluate_fn(model, val_set)`` returns the validation macro-F1. An
    epoch improves on the best so far if its F1 is higher, or equal with a
    lower validation loss (small validation sets leave F1 flat for long
    stretches while the model is still getting better). Training stops
    once more than ``patience`` consecutive epochs fail to improve, and
    the best parameters are restored into ``model``. ``max_steps`` caps the
    number of optimizer steps (used by the overfit check).
    """
    if not train_set:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.lr)
    history = TrainHistory()
    best_key, best_params = None, None
    bad_epochs = 0
    steps = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            grads = model.zero_grads()
            for i in batch:
                ex = _drop_tokens(train_set[i], config.token_dropout, rng)
                loss, _ = loss_and_grads(model, ex, templates, config.mask_count,
                                         config.use_facts, config.use_snippets, grads)
                total += loss
            seen += len(batch)
            scale = 1.0 / len(batch)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())) * scale
            if not math.isfinite(norm) or not math.isfinite(total):
                raise NumericError(f"non-finite loss or gradient at epoch {epoch}")
            if config.clip_norm and norm > config.clip_norm:
                scale *= config.clip_norm / norm
            for g in grads.values():
                g *= scale
            opt.step(model.params, grads)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        history.train_loss.append(total / seen)
        if max_steps is not None and steps >= max_steps:
            break
        if evaluate_fn is None or not val_set:
            continue
        score = evaluate_fn(model, val_set)
        vloss = mean_loss(model, val_set, templates, config.mask_count, config.use_facts, config.use_snippets)
        history.val_f1.append(score)
        history.val_loss.append(vloss)
        log.info("epoch %d loss %.4f val macro-F1 %.4f val loss %.4f", epoch, total / seen, score, vloss)
        key = (score, -vloss)
        if best_key is None or key > best_key:
            best_key, best_params = key, {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                history.stopped_early = True
                break
    if best_params is not None:
        model.params.update(best_params)
    return history
