"""Joint case/article embedding space: pair construction, contrastive
training and inner-product retrieval.

Training scores pairs by cosine similarity while retrieval ranks by the raw
inner product; encoder outputs are deliberately left unnormalized so the
two differ exactly as in the method being reproduced.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Article, Dataset, Vocab
from .errors import NumericError

log = logging.getLogger(__name__)

POSITIVE, NEGATIVE = 1, 0


class SentenceEncoder:
    """Mean of token embeddings followed by a linear projection.

    Attributes:
        params: ``{"embed": (V, d_r), "proj": (d_r, d_r)}``.
        vocab: used by :meth:`encode_text`.
        max_len: truncation applied to texts before encoding.
    """

    def __init__(self, params: dict[str, np.ndarray], vocab: Vocab, max_len: int = 512):
        self.params = params
        self.vocab = vocab
        self.max_len = max_len

    @classmethod
    def init(cls, vocab: Vocab, d_r: int = 32, seed: int = 0, max_len: int = 512,
             embed_std: float = 1.0) -> "SentenceEncoder":
        """Random encoder. A small ``embed_std`` starts every token near the
        origin, so tokens spread evenly over the classes (filler) keep
        cancelling gradients while class-specific tokens grow first."""
        rng = np.random.default_rng(seed)
        params = {
            "embed": rng.normal(0.0, embed_std, size=(len(vocab), d_r)),
            "proj": rng.normal(0.0, 1.0 / math.sqrt(d_r), size=(d_r, d_r)),
        }
        return cls(params, vocab, max_len)

    @property
    def dim(self) -> int:
        return self.params["proj"].shape[1]

    def copy(self) -> "SentenceEncoder":
        return SentenceEncoder({k: v.copy() for k, v in self.params.items()}, self.vocab, self.max_len)

    def tokens(self, text: str) -> list[int]:
        return self.vocab.encode(text, self.max_len)

    def encode_ids(self, ids: Sequence[int]) -> np.ndarray:
        if len(ids) == 0:
            return np.zeros(self.dim)
        pooled = self.params["embed"][np.asarray(ids)].mean(axis=0)
        return pooled @ self.params["proj"]

    def encode_text(self, text: str) -> np.ndarray:
        return self.encode_ids(self.tokens(text))

    def backward_ids(self, ids: Sequence[int], dvec: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        """Accumulate d(loss)/d(params) given d(loss)/d(encode_ids(ids))."""
        if len(ids) == 0:
            return
        idx = np.asarray(ids)
        pooled = self.params["embed"][idx].mean(axis=0)
        grads["proj"] += np.outer(pooled, dvec)
        dpooled = self.params["proj"] @ dvec
        np.add.at(grads["embed"], idx, dpooled / len(idx))


@dataclass(frozen=True)
class PairSet:
    """``(case index, article id, polarity)`` triples, grouped by case."""

    pairs: tuple[tuple[int, int, int], ...]

    def __len__(self):
        return len(self.pairs)

    def by_case(self) -> dict[int, tuple[list[int], list[int]]]:
        out: dict[int, tuple[list[int], list[int]]] = {}
        for ci, aid, pol in self.pairs:
            pos, neg = out.setdefault(ci, ([], []))
            (pos if pol == POSITIVE else neg).append(aid)
        return out


def build_pairs(dataset: Dataset, seed: int = 0) -> PairSet:
    """One positive per relevant article and as many sampled negatives.

    Negatives are drawn without replacement from articles outside the
    case's relevant set, falling back to sampling with replacement when the
    pool is too small. Cases without relevant articles are skipped.
    """
    rng = random.Random(seed)
    all_ids = [a.id for a in dataset.articles]
    pairs = []
    for ci, case in enumerate(dataset.cases):
        relevant = list(dict.fromkeys(case.articles))
        if not relevant:
            log.warning("case %s has no relevant articles; skipped in pair construction", case.id)
            continue
        rel = set(relevant)
        pool = [aid for aid in all_ids if aid not in rel]
        if not pool:
            log.warning("case %s: no candidate negatives; skipped", case.id)
            continue
        count = len(relevant)
        for aid in relevant:
            pairs.append((ci, aid, POSITIVE))
        if len(pool) >= count:
            negatives = rng.sample(pool, count)
        else:
            negatives = [rng.choice(pool) for _ in range(count)]
        for aid in negatives:
            pairs.append((ci, aid, NEGATIVE))
    return PairSet(tuple(pairs))


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _cosine_and_grads(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("zero-norm encoding in cosine similarity")
    cos = float(u @ v / (nu * nv))
    du = v / (nu * nv) - cos * u / (nu * nu)
    dv = u / (nu * nv) - cos * v / (nv * nv)
    return cos, du, dv


def _logsumexp(a: np.ndarray) -> float:
    m = float(np.max(a))
    return m + math.log(float(np.sum(np.exp(a - m))))


def contrastive_loss(pos_sims, neg_sims, tau: float) -> float:
    """-log( sum_c e^{pos_c/tau} / sum_c (e^{pos_c/tau} + e^{neg_c/tau}) ).

    The numerator sums over all positives, as the objective is written.
    """
    return contrastive_loss_and_grad(pos_sims, neg_sims, tau)[0]


def contrastive_loss_and_grad(pos_sims, neg_sims, tau: float):
    pos = np.asarray(pos_sims, dtype=float)
    neg = np.asarray(neg_sims, dtype=float)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if pos.size == 0 or pos.size != neg.size:
        raise ValueError("need C >= 1 positives and the same number of negatives")
    a = pos / tau
    both = np.concatenate([a, neg / tau])
    lse_pos, lse_all = _logsumexp(a), _logsumexp(both)
    # log(1 + S_neg / S_pos) keeps tiny losses positive where
    # lse_all - lse_pos would cancel to zero
    loss = float(np.logaddexp(0.0, _logsumexp(neg / tau) - lse_pos))
    p_all = np.exp(both - lse_all)
    p_pos = np.exp(a - lse_pos)
    dpos = (p_all[: pos.size] - p_pos) / tau
    dneg = p_all[pos.size:] / tau
    return loss, dpos, dneg


@dataclass
class JointSpaceConfig:
    tau: float = 0.1
    lr: float = 0.05
    epochs: int = 100
    batch: int = 8
    seed: int = 0
    resample_negatives: bool = True
    weight_decay: float = 0.0


def case_loss_and_grads(encoder: SentenceEncoder, case_ids, pos_ids: list, neg_ids: list,
                        tau: float, grads: dict[str, np.ndarray] | None = None):
    """Contrastive loss of one case against its positive and negative articles.

    Gradients are accumulated into ``grads`` (allocated when omitted).
    """
    if grads is None:
        grads = {k: np.zeros_like(v) for k, v in encoder.params.items()}
    p = encoder.encode_ids(case_ids)
    pos_vecs = [encoder.encode_ids(ids) for ids in pos_ids]
    neg_vecs = [encoder.encode_ids(ids) for ids in neg_ids]
    pos_terms = [_cosine_and_grads(p, v) for v in pos_vecs]
    neg_terms = [_cosine_and_grads(p, v) for v in neg_vecs]
    loss, dpos, dneg = contrastive_loss_and_grad(
        [t[0] for t in pos_terms], [t[0] for t in neg_terms], tau
    )
    dp = np.zeros_like(p)
    for g, (_, du, dv), ids in zip(dpos, pos_terms, pos_ids):
        dp += g * du
        encoder.backward_ids(ids, g * dv, grads)
    for g, (_, du, dv), ids in zip(dneg, neg_terms, neg_ids):
        dp += g * du
        encoder.backward_ids(ids, g * dv, grads)
    encoder.backward_ids(case_ids, dp, grads)
    return loss, grads


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)


def train_joint_space(encoder: SentenceEncoder, pairs: PairSet, dataset: Dataset,
                      config: JointSpaceConfig) -> tuple[SentenceEncoder, TrainHistory]:
    """Plain minibatch SGD on the per-case contrastive loss. Updates in place."""
    groups = pairs.by_case()
    if not groups:
        raise ValueError("cannot train on an empty pair set")
    if config.resample_negatives:
        positives = {ci: pos for ci, (pos, _) in groups.items()}
    case_tokens = {ci: encoder.tokens(dataset.cases[ci].text) for ci in groups}
    art_tokens = {a.id: encoder.tokens(a.text) for a in dataset.articles}
    order = sorted(groups)
    rng = random.Random(config.seed)
    history = TrainHistory()
    for epoch in range(config.epochs):
        if config.resample_negatives and epoch > 0:
            groups = {ci: (positives[ci], neg) for ci, (_, neg)
                      in build_pairs(dataset, config.seed + epoch).by_case().items() if ci in positives}
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            grads = {k: np.zeros_like(v) for k, v in encoder.params.items()}
            for ci in batch:
                pos, neg = groups[ci]
                loss, _ = case_loss_and_grads(
                    encoder, case_tokens[ci], [art_tokens[a] for a in pos],
                    [art_tokens[a] for a in neg], config.tau, grads,
                )
                total += loss
            for k, g in grads.items():
                p = encoder.params[k]
                p -= config.lr * (g / len(batch) + config.weight_decay * p)
        mean = total / len(order)
        if not math.isfinite(mean) or not all(np.all(np.isfinite(v)) for v in encoder.params.values()):
            raise NumericError(f"joint-space training diverged at epoch {epoch}: loss={mean}")
        history.losses.append(mean)
        log.debug("joint space epoch %d loss %.5f", epoch, mean)
    return encoder, history


@dataclass(frozen=True)
class ArticleIndex:
    ids: tuple[int, ...]
    vectors: np.ndarray

    def __len__(self):
        return len(self.ids)


def build_index(encoder: SentenceEncoder, articles: Sequence[Article]) -> ArticleIndex:
    vecs = np.array([encoder.encode_text(a.text) for a in articles]).reshape(len(articles), encoder.dim)
    vecs.setflags(write=False)
    return ArticleIndex(tuple(a.id for a in articles), vecs)


def rank_articles(query: np.ndarray, index: ArticleIndex, n: int) -> list[tuple[int, float]]:
    if n < 0:
        raise ValueError("N must be >= 0")
    if n == 0 or not len(index):
        return []
    # one dot product per article: a matrix-vector product may reorder the
    # summation, so a score could shift in its last bit with the index size
    scores = np.array([float(v @ query) for v in index.vectors])
    ids = np.asarray(index.ids)
    # primary key: descending score; secondary: ascending id
    order = np.lexsort((ids, -scores))[:n]
    return [(int(ids[i]), float(scores[i])) for i in order]


def retrieve_top_n(encoder: SentenceEncoder, case_text: str, index: ArticleIndex, n: int) -> list[tuple[int, float]]:
    """Top-``n`` articles by inner product with the case encoding."""
    if n < 0:
        raise ValueError("N must be >= 0")
    return rank_articles(encoder.encode_text(case_text), index, n)


def mean_pair_cosines(encoder: SentenceEncoder, pairs: PairSet, dataset: Dataset) -> tuple[float, float]:
    """Mean cosine over positive pairs and over negative pairs."""
    pos, neg = [], []
    art = dataset.article_by_id
    for ci, aid, pol in pairs.pairs:
        c = cosine_sim(encoder.encode_text(dataset.cases[ci].text), encoder.encode_text(art[aid].text))
        (pos if pol == POSITIVE else neg).append(c)
    return float(np.mean(pos)), float(np.mean(neg))
