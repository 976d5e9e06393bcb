import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawprompt import corpus
from lawprompt.corpus import MASK, PAD, UNK, Case, Dataset, Verbalizer
from lawprompt.errors import DataError

from conftest import write_lines


def _files(tmp_path, cases, articles, labels):
    c = write_lines(tmp_path / "cases.jsonl", [json.dumps(r, ensure_ascii=False) for r in cases])
    a = write_lines(tmp_path / "articles.jsonl", [json.dumps(r, ensure_ascii=False) for r in articles])
    v = write_lines(tmp_path / "verbalizer.jsonl", [json.dumps(r, ensure_ascii=False) for r in labels])
    return c, a, v


ARTICLES = [{"id": 1, "text": "盗窃公私财物"}, {"id": 2, "text": "诈骗公私财物"}]
LABELS = [{"label": 0, "text": "盗窃"}, {"label": 1, "text": "诈骗"}]


def test_load_three_case_fixture(tmp_path):
    cases = [
        {"id": "a", "fact": "某甲窃得手机", "charge": 0, "articles": [1]},
        {"id": "b", "fact": "某乙骗取钱款", "charge": 1, "articles": [2]},
        {"id": "c", "fact": "某丙撬锁入室", "charge": 0, "articles": [1, 2]},
    ]
    ds = corpus.load_dataset(*_files(tmp_path, cases, ARTICLES, LABELS))
    assert len(ds.cases) == 3
    assert ds.cases[2].articles == (1, 2)
    assert ds.verbalizer.text(1) == "诈骗"


def test_empty_cases_file_is_valid(tmp_path):
    ds = corpus.load_dataset(*_files(tmp_path, [], ARTICLES, LABELS))
    assert ds.cases == ()


def test_dangling_article_reports_line(tmp_path):
    cases = [{"id": "a", "fact": "x", "charge": 0, "articles": [1]},
             {"id": "b", "fact": "y", "charge": 0, "articles": [999]}]
    with pytest.raises(DataError, match=r"cases.jsonl:2: dangling article id 999"):
        corpus.load_dataset(*_files(tmp_path, cases, ARTICLES, LABELS))


def test_unknown_label_and_malformed_line(tmp_path):
    with pytest.raises(DataError, match="unknown label 5"):
        corpus.load_dataset(*_files(tmp_path, [{"id": "a", "fact": "x", "charge": 5}], ARTICLES, LABELS))
    c, a, v = _files(tmp_path, [], ARTICLES, LABELS)
    c.write_text('{"id": "a", "fact": "x", "charge": 0}\n{oops\n', encoding="utf-8")
    with pytest.raises(DataError, match=r"cases.jsonl:2: malformed JSON"):
        corpus.load_dataset(c, a, v)


def test_verbalizer_invariants():
    with pytest.raises(DataError):
        Verbalizer(((0, "a"), (2, "b")))
    with pytest.raises(DataError):
        Verbalizer(((0, "a"), (1, "a")))
    v = Verbalizer(((0, "盗窃"), (1, "故意伤害")))
    assert v.token_sets[1] == frozenset("故意伤害")


def test_build_vocab_frequency_order():
    v = corpus.build_vocab_from_texts(["aa b"])
    # a:2, then ' ' (U+0020) before b by code point
    assert v.tokens == ("<pad>", "<mask>", "<unk>", "a", " ", "b")
    assert (PAD, MASK, UNK) == (0, 1, 2)


def test_build_vocab_empty_and_min_freq():
    assert len(corpus.build_vocab_from_texts([])) == 3
    v = corpus.build_vocab_from_texts(["abc"], min_freq=10)
    assert len(v) == 3
    assert v.encode("abc") == [UNK, UNK, UNK]


def test_tokenize_prefix_and_unk(tiny_vocab):
    assert corpus.tokenize(tiny_vocab, "", 5) == []
    full = corpus.tokenize(tiny_vocab, "盗窃诈骗抢", 10)
    assert corpus.tokenize(tiny_vocab, "盗窃诈骗抢", 3) == full[:3]
    ids = corpus.tokenize(tiny_vocab, "盗Z窃", 10)
    assert ids == [tiny_vocab.id("盗"), UNK, tiny_vocab.id("窃")]
    with pytest.raises(ValueError):
        corpus.tokenize(tiny_vocab, "a", -1)


def test_whitespace_mode():
    v = corpus.build_vocab_from_texts(["the theft case", "theft"], mode="whitespace")
    assert v.tokens[3] == "theft"
    assert v.encode("theft of case") == [v.id("theft"), UNK, v.id("case")]
    assert v.detokenize(v.encode("the case")) == "the case"


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="盗窃诈骗抢劫某人于家中得财物abc ,", max_size=30), st.integers(0, 40))
def test_tokenize_detokenize_roundtrip(tiny_vocab, text, max_len):
    ids = corpus.tokenize(tiny_vocab, text, max_len)
    assert len(ids) <= max_len
    if len(text) <= max_len:
        assert tiny_vocab.detokenize(ids) == text


def test_vocab_ids_contiguous_and_json_roundtrip(tiny_vocab):
    assert sorted(tiny_vocab.index.values()) == list(range(len(tiny_vocab)))
    again = corpus.Vocab.from_json(tiny_vocab.to_json())
    assert again == tiny_vocab and again.hash == tiny_vocab.hash


def test_toy_generator_deterministic_bytes():
    spec = corpus.separable_spec(3, 10)
    a = corpus.serialize_dataset(corpus.generate_toy_corpus(spec, seed=7))
    b = corpus.serialize_dataset(corpus.generate_toy_corpus(spec, seed=7))
    assert a == b
    assert a != corpus.serialize_dataset(corpus.generate_toy_corpus(spec, seed=8))


def test_toy_noise_zero_keeps_every_cue():
    spec = corpus.separable_spec(4, 10, noise_rate=0.0)
    ds = corpus.generate_toy_corpus(spec, seed=1)
    for c in ds.cases:
        assert all(cue in c.text for cue in spec.cues[c.charge])


def test_toy_cue_frequency_oracle():
    spec = corpus.separable_spec(5, 20)
    ds = corpus.generate_toy_corpus(spec, seed=3)
    for c in ds.cases:
        assert any(cue in c.text for cue in spec.cues[c.charge])
        assert c.articles == (c.charge + 1,)
        # no cue of another charge leaks into the text
        others = [cue for k, g in enumerate(spec.cues) if k != c.charge for cue in g]
        assert not any(cue in c.text for cue in others)
    counts = {cue: sum(cue in c.text for c in ds.cases) for g in spec.cues for cue in g}
    assert all(n > 0 for n in counts.values())


def test_toy_spec_with_zero_charges_fails():
    spec = corpus.ToySpec(label_texts=(), cues=())
    with pytest.raises(DataError):
        corpus.generate_toy_corpus(spec)


def test_dataset_integrity_checks():
    v = Verbalizer(((0, "盗窃"),))
    with pytest.raises(DataError):
        Dataset((Case("a", "x", 0, (3,)),), (), v)
    with pytest.raises(DataError):
        Dataset((Case("a", "", 0),), (), v)


def test_save_load_roundtrip(tmp_path, toy3):
    ds, _ = toy3
    corpus.save_dataset(ds, tmp_path)
    again = corpus.load_dataset_dir(tmp_path)
    assert corpus.serialize_dataset(again) == corpus.serialize_dataset(ds)
