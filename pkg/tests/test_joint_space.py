import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawprompt import corpus
from lawprompt.corpus import Article, Case, Dataset, Verbalizer
from lawprompt.joint_space import (NEGATIVE, POSITIVE, ArticleIndex, JointSpaceConfig, SentenceEncoder,
                                   build_index, build_pairs, contrastive_loss, contrastive_loss_and_grad,
                                   cosine_sim, mean_pair_cosines, rank_articles, retrieve_top_n,
                                   train_joint_space)

sims = st.floats(-1, 1, allow_nan=False)


def _pool_dataset():
    arts = tuple(Article(i, f"条文{i}") for i in range(1, 6))
    cases = (Case("c0", "案情", 0, (1, 2)), Case("c1", "案情二", 0, ()))
    return Dataset(cases, arts, Verbalizer(((0, "盗窃"),)))


def test_build_pairs_balance_and_exclusion(caplog):
    pairs = build_pairs(_pool_dataset(), seed=3)
    groups = pairs.by_case()
    assert list(groups) == [0]
    pos, neg = groups[0]
    assert sorted(pos) == [1, 2] and len(neg) == 2
    assert not set(neg) & {1, 2} and len(set(neg)) == 2
    assert "no relevant articles" in caplog.text
    assert build_pairs(_pool_dataset(), seed=3) == pairs


def test_build_pairs_empty_dataset():
    ds = _pool_dataset().with_cases(())
    assert len(build_pairs(ds)) == 0


def test_pair_balance_on_generated_corpora():
    for seed in range(5):
        ds = corpus.generate_toy_corpus(corpus.separable_spec(4, 5), seed)
        for ci, (pos, neg) in build_pairs(ds, seed).by_case().items():
            assert len(pos) == len(neg)
            assert not set(neg) & set(ds.cases[ci].articles)


def test_cosine_examples():
    v = np.array([0.3, -2.0, 1.0])
    assert cosine_sim(v, v) == pytest.approx(1.0)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 2], [3, 4]) == pytest.approx(11 / (math.sqrt(5) * 5), abs=1e-15)
    with pytest.raises(ValueError):
        cosine_sim([0, 0], [1, 1])
    with pytest.raises(ValueError):
        cosine_sim([1, 0], [1, 0, 0])


def test_contrastive_examples():
    assert contrastive_loss([0.3] * 4, [0.3] * 4, 0.2) == pytest.approx(math.log(2), abs=1e-12)
    assert contrastive_loss([1, 1], [-1, -1], 0.05) < 1e-15
    want = -math.log(math.exp(1.8) / (math.exp(1.8) + math.exp(0.2)))
    assert contrastive_loss([0.9], [0.1], 0.5) == pytest.approx(want, abs=1e-14)
    with pytest.raises(ValueError):
        contrastive_loss([0.1], [0.1], 0.0)
    with pytest.raises(ValueError):
        contrastive_loss([], [], 0.1)


def test_numerator_sums_all_positives():
    # literal objective: -log(sum e^{p/t} / sum(e^{p/t} + e^{n/t}))
    p, n, t = [0.5, -0.2], [0.1, 0.3], 0.3
    num = sum(math.exp(x / t) for x in p)
    want = -math.log(num / (num + sum(math.exp(x / t) for x in n)))
    assert contrastive_loss(p, n, t) == pytest.approx(want, abs=1e-14)


@given(st.lists(st.tuples(sims, sims), min_size=1, max_size=6), st.floats(0.05, 2.0), st.data())
def test_loss_monotone_and_permutation_invariant(pairs, tau, data):
    pos = [p for p, _ in pairs]
    neg = [n for _, n in pairs]
    base = contrastive_loss(pos, neg, tau)
    assert base > 0
    i = data.draw(st.integers(0, len(pos) - 1))
    up_neg = list(neg)
    up_neg[i] += 0.1
    up_pos = list(pos)
    up_pos[i] += 0.1
    # strict change is only observable when the perturbed term's share of
    # the partition sum exceeds double-precision resolution
    lse = np.logaddexp.reduce(np.array(pos + neg) / tau)
    visible = lambda s: math.exp(s / tau - lse) > 1e-12
    up, down = contrastive_loss(pos, up_neg, tau), contrastive_loss(up_pos, neg, tau)
    assert up >= base and down <= base
    if visible(neg[i]):
        assert up > base
    if visible(pos[i]):
        assert down < base
    perm = data.draw(st.permutations(range(len(pos))))
    assert contrastive_loss([pos[j] for j in perm], neg[::-1], tau) == pytest.approx(base, rel=1e-12)


def test_loss_gradient_matches_differences():
    rng = np.random.default_rng(0)
    pos, neg = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    _, dpos, dneg = contrastive_loss_and_grad(pos, neg, 0.1)
    for arr, grad in ((pos, dpos), (neg, dneg)):
        for i in range(3):
            arr[i] += 1e-6
            hi = contrastive_loss(pos, neg, 0.1)
            arr[i] -= 2e-6
            lo = contrastive_loss(pos, neg, 0.1)
            arr[i] += 1e-6
            assert (hi - lo) / 2e-6 == pytest.approx(grad[i], rel=1e-6, abs=1e-9)


def test_encoder_shapes(tiny_vocab):
    enc = SentenceEncoder.init(tiny_vocab, d_r=8, seed=1)
    assert enc.encode_text("盗窃").shape == (8,)
    assert enc.encode_text("").tolist() == [0.0] * 8
    np.testing.assert_array_equal(enc.encode_text("盗窃"), enc.encode_text("盗窃"))


def test_zero_epochs_leaves_parameters(toy3):
    ds, _ = toy3
    vocab = corpus.build_vocab(ds)
    enc = SentenceEncoder.init(vocab, seed=0)
    before = enc.copy()
    train_joint_space(enc, build_pairs(ds), ds, JointSpaceConfig(epochs=0))
    for k in enc.params:
        np.testing.assert_array_equal(enc.params[k], before.params[k])


def test_training_separates_pairs(toy3):
    ds, _ = toy3
    vocab = corpus.build_vocab(ds)
    enc = SentenceEncoder.init(vocab, seed=0, embed_std=0.01)
    pairs = build_pairs(ds)
    enc, hist = train_joint_space(enc, pairs, ds, JointSpaceConfig())
    assert len(hist.losses) == 100 and hist.losses[-1] < hist.losses[0]
    pos, neg = mean_pair_cosines(enc, pairs, ds)
    assert pos - neg > 0.3
    index = build_index(enc, ds.articles)
    theft = next(c for c in ds.cases if c.charge == 0)
    assert retrieve_top_n(enc, theft.text, index, 1)[0][0] == 1


def brute_force_rank(query, vectors, ids, n):
    scored = [(float(vectors[i] @ query), ids[i]) for i in range(len(ids))]
    scored.sort(key=lambda s: (-s[0], s[1]))
    return [(aid, s) for s, aid in scored[:n]]


def test_rank_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_art = int(rng.integers(1, 12))
        # coarse integer entries force frequent exact ties
        vecs = rng.integers(-2, 3, size=(n_art, 4)).astype(float)
        ids = tuple(int(x) for x in rng.permutation(100)[:n_art])
        q = rng.integers(-2, 3, size=4).astype(float)
        n = int(rng.integers(0, n_art + 3))
        got = rank_articles(q, ArticleIndex(ids, vecs), n)
        assert got == brute_force_rank(q, vecs, ids, n)


def test_retrieve_edge_cases(tiny_vocab):
    enc = SentenceEncoder.init(tiny_vocab, d_r=4, seed=0)
    index = build_index(enc, [Article(1, "盗窃"), Article(2, "诈骗")])
    assert retrieve_top_n(enc, "盗", index, 0) == []
    assert len(retrieve_top_n(enc, "盗", index, 10)) == 2
    with pytest.raises(ValueError):
        retrieve_top_n(enc, "盗", index, -1)
    assert not index.vectors.flags.writeable
