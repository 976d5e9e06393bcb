"""Corpus records, vocabulary/tokenization and the synthetic toy corpus."""
from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

PAD, MASK, UNK = 0, 1, 2
RESERVED_TOKENS = ("<pad>", "<mask>", "<unk>")
TOKENIZATION_MODES = ("char", "whitespace")


def split_units(text: str, mode: str = "char") -> list[str]:
    """Split text into tokenizer units (characters or whitespace words)."""
    if mode == "char":
        return list(text)
    if mode == "whitespace":
        return text.split()
    raise ValueError(f"unknown tokenization mode {mode!r}")


@dataclass(frozen=True)
class Case:
    id: str
    text: str
    charge: int
    articles: tuple[int, ...] = ()


@dataclass(frozen=True)
class Article:
    id: int
    text: str


@dataclass(frozen=True)
class Verbalizer:
    """Ordered label-id to label-text mapping."""

    entries: tuple[tuple[int, str], ...]
    mode: str = "char"

    def __post_init__(self):
        ids = [label for label, _ in self.entries]
        if ids != list(range(len(ids))):
            raise DataError(f"verbalizer label ids must be dense 0..C-1, got {ids}")
        texts = [text for _, text in self.entries]
        if len(set(texts)) != len(texts):
            raise DataError("verbalizer label texts must be distinct")
        if any(not t for t in texts):
            raise DataError("verbalizer label text must be non-empty")

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[int]:
        return [label for label, _ in self.entries]

    def text(self, label: int) -> str:
        return self.entries[label][1]

    @cached_property
    def token_sets(self) -> tuple[frozenset[str], ...]:
        return tuple(frozenset(split_units(text, self.mode)) for _, text in self.entries)


@dataclass(frozen=True)
class Dataset:
    cases: tuple[Case, ...]
    articles: tuple[Article, ...]
    verbalizer: Verbalizer

    def __post_init__(self):
        validate_dataset(self)

    @cached_property
    def article_by_id(self) -> dict[int, Article]:
        return {a.id: a for a in self.articles}

    @property
    def n_labels(self) -> int:
        return len(self.verbalizer)

    def with_cases(self, cases: Iterable[Case]) -> "Dataset":
        return Dataset(tuple(cases), self.articles, self.verbalizer)


def validate_dataset(ds: Dataset) -> None:
    seen_articles: set[int] = set()
    for a in ds.articles:
        if a.id in seen_articles:
            raise DataError(f"duplicate article id {a.id}")
        if not a.text:
            raise DataError(f"article {a.id} has empty text")
        seen_articles.add(a.id)
    seen_cases: set[str] = set()
    n_labels = len(ds.verbalizer)
    for c in ds.cases:
        if c.id in seen_cases:
            raise DataError(f"duplicate case id {c.id!r}")
        seen_cases.add(c.id)
        if not c.text:
            raise DataError(f"case {c.id!r} has empty text")
        if not 0 <= c.charge < n_labels:
            raise DataError(f"case {c.id!r} has unknown label {c.charge}")
        for aid in c.articles:
            if aid not in seen_articles:
                raise DataError(f"case {c.id!r} references unknown article id {aid}")


# ----------------------------------------------------------------------------
# Line-delimited JSON I/O
# ----------------------------------------------------------------------------


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def _field(rec, key, kind, where):
    if key not in rec:
        raise DataError(f"{where}: missing field {key!r}")
    value = rec[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise DataError(f"{where}: field {key!r} must be an integer")
    if kind is str and not isinstance(value, str):
        raise DataError(f"{where}: field {key!r} must be a string")
    return value


def load_dataset(cases_path, articles_path, verbalizer_path, mode: str = "char") -> Dataset:
    """Read the three line-delimited record files and validate references.

    Raises:
        DataError: on a malformed line (with its line number), an unknown
            label, or a dangling article id.
    """
    articles = []
    for lineno, rec in _read_jsonl(articles_path):
        where = f"{articles_path}:{lineno}"
        articles.append(Article(_field(rec, "id", int, where), _field(rec, "text", str, where)))

    entries = []
    for lineno, rec in _read_jsonl(verbalizer_path):
        where = f"{verbalizer_path}:{lineno}"
        entries.append((_field(rec, "label", int, where), _field(rec, "text", str, where)))
    entries.sort()
    verbalizer = Verbalizer(tuple(entries), mode=mode)

    known_articles = {a.id for a in articles}
    cases = []
    for lineno, rec in _read_jsonl(cases_path):
        where = f"{cases_path}:{lineno}"
        charge = _field(rec, "charge", int, where)
        if not 0 <= charge < len(verbalizer):
            raise DataError(f"{where}: unknown label {charge}")
        arts = rec.get("articles", [])
        if not isinstance(arts, list) or any(isinstance(a, bool) or not isinstance(a, int) for a in arts):
            raise DataError(f"{where}: field 'articles' must be a list of integers")
        for aid in arts:
            if aid not in known_articles:
                raise DataError(f"{where}: dangling article id {aid}")
        cases.append(Case(str(_field(rec, "id", str, where)), _field(rec, "fact", str, where), charge, tuple(arts)))
    return Dataset(tuple(cases), tuple(articles), verbalizer)


def load_dataset_dir(directory, mode: str = "char") -> Dataset:
    d = Path(directory)
    for name in ("cases.jsonl", "articles.jsonl", "verbalizer.jsonl"):
        if not (d / name).exists():
            raise DataError(f"missing {d / name}")
    return load_dataset(d / "cases.jsonl", d / "articles.jsonl", d / "verbalizer.jsonl", mode=mode)


def _dump_line(rec) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n"


def save_dataset(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "cases.jsonl").open("w", encoding="utf-8") as fh:
        for c in ds.cases:
            fh.write(_dump_line({"id": c.id, "fact": c.text, "charge": c.charge, "articles": list(c.articles)}))
    with (d / "articles.jsonl").open("w", encoding="utf-8") as fh:
        for a in ds.articles:
            fh.write(_dump_line({"id": a.id, "text": a.text}))
    with (d / "verbalizer.jsonl").open("w", encoding="utf-8") as fh:
        for label, text in ds.verbalizer.entries:
            fh.write(_dump_line({"label": label, "text": text}))


def serialize_dataset(ds: Dataset) -> bytes:
    """Canonical byte serialization (the three files concatenated)."""
    parts = []
    for c in ds.cases:
        parts.append(_dump_line({"id": c.id, "fact": c.text, "charge": c.charge, "articles": list(c.articles)}))
    for a in ds.articles:
        parts.append(_dump_line({"id": a.id, "text": a.text}))
    for label, text in ds.verbalizer.entries:
        parts.append(_dump_line({"label": label, "text": text}))
    return "".join(parts).encode("utf-8")


# ----------------------------------------------------------------------------
# Vocabulary
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    """Token/id bijection with reserved ids PAD=0, MASK=1, UNK=2."""

    tokens: tuple[str, ...]
    mode: str = "char"
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[:3] != RESERVED_TOKENS:
            raise DataError("vocabulary must start with the reserved tokens")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index and self.index[token] >= 3

    def id(self, token: str) -> int:
        i = self.index.get(token, UNK)
        return UNK if i < 3 else i

    def encode(self, text: str, max_len: int | None = None) -> list[int]:
        units = split_units(text, self.mode)
        if max_len is not None:
            units = units[:max_len]
        return [self.id(u) for u in units]

    def decode_units(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def detokenize(self, ids: Iterable[int]) -> str:
        sep = "" if self.mode == "char" else " "
        return sep.join(self.tokens[i] for i in ids if i >= 3)

    @cached_property
    def hash(self) -> str:
        payload = json.dumps({"mode": self.mode, "tokens": list(self.tokens)}, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json(self) -> dict:
        return {"mode": self.mode, "tokens": list(self.tokens[3:])}

    @classmethod
    def from_json(cls, obj) -> "Vocab":
        return cls(RESERVED_TOKENS + tuple(obj["tokens"]), obj.get("mode", "char"))


def build_vocab_from_texts(texts: Iterable[str], min_freq: int = 1, mode: str = "char") -> Vocab:
    counts: Counter[str] = Counter()
    for t in texts:
        counts.update(split_units(t, mode))
    kept = [tok for tok, n in counts.items() if n >= min_freq and tok not in RESERVED_TOKENS]
    # descending frequency, ties by code point
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab(RESERVED_TOKENS + tuple(kept), mode)


def build_vocab(dataset: Dataset, min_freq: int = 1, mode: str | None = None,
                extra_texts: Sequence[str] = ()) -> Vocab:
    """Vocabulary over case texts, article texts, label texts and ``extra_texts``."""
    mode = mode or dataset.verbalizer.mode
    texts = [c.text for c in dataset.cases]
    texts += [a.text for a in dataset.articles]
    texts += [t for _, t in dataset.verbalizer.entries]
    texts += list(extra_texts)
    return build_vocab_from_texts(texts, min_freq, mode)


def tokenize(vocab: Vocab, text: str, max_len: int) -> list[int]:
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    return vocab.encode(text, max_len)


# ----------------------------------------------------------------------------
# Synthetic toy corpus
# ----------------------------------------------------------------------------

LABEL_POOL = ("盗窃", "诈骗", "抢劫", "故意伤害", "贩卖毒品", "交通肇事", "受贿", "走私", "赌博", "纵火")
CUE_POOL = (
    ("窃得", "撬锁", "扒包"),
    ("冒充", "骗取", "虚构"),
    ("持刀", "抢夺", "威逼"),
    ("殴打", "轻伤", "踢踹"),
    ("海洛因", "贩售", "毒资"),
    ("驾车", "撞倒", "逃逸"),
    ("收受", "贿赂", "请托"),
    ("偷运", "入境", "关税"),
    ("赌场", "牌局", "抽头"),
    ("汽油", "点燃", "焚毁"),
)
ARTICLE_BOILERPLATE = "凡有下列行为之一者依法处罚："
DEFAULT_FILLER = (
    "甲乙丙丁午未申酉戌亥山川田木水土石日月云风雨雪花草竹林村镇街路桥门窗桌椅"
    "杯碗衣帽鞋袜早晚春夏秋冬东南西北左右前后"
)
DISTRACTOR_TERMS = ("违约", "拐卖", "致残", "残忍", "违背妇女意志")


@dataclass(frozen=True)
class ToySpec:
    """Recipe for a synthetic corpus.

    ``cues[c]`` are placed in the case body (``cue_placement`` "anywhere")
    or all in the first sentence ("head"). ``tail_cues[c]`` go into a
    final sentence after the filler sentences, which puts them past a
    short truncation window. ``article_cues`` picks which cue groups the
    charge's article text carries; ``lexicon_cues`` which groups the toy
    lexicon lists (plus the distractor terms).
    """

    label_texts: tuple[str, ...]
    cues: tuple[tuple[str, ...], ...]
    cases_per_charge: int = 10
    tail_cues: tuple[tuple[str, ...], ...] = ()
    filler_alphabet: str = DEFAULT_FILLER
    noise_rate: float = 0.0
    n_sentences: int = 3
    sentence_len: tuple[int, int] = (6, 12)
    head_len: int = 0
    cue_placement: str = "anywhere"
    article_cues: tuple[str, ...] = ("head", "tail")
    lexicon_cues: tuple[str, ...] = ("head", "tail")
    distractors: tuple[str, ...] = DISTRACTOR_TERMS

    @property
    def n_charges(self) -> int:
        return len(self.label_texts)


def separable_spec(n_charges: int = 5, cases_per_charge: int = 40, noise_rate: float = 0.5) -> ToySpec:
    """Each charge has its own disjoint cue keywords, diluted in filler text."""
    if not 0 < n_charges <= len(LABEL_POOL):
        raise DataError(f"n_charges must be in 1..{len(LABEL_POOL)}")
    return ToySpec(
        label_texts=LABEL_POOL[:n_charges],
        cues=CUE_POOL[:n_charges],
        cases_per_charge=cases_per_charge,
        noise_rate=noise_rate,
        n_sentences=4,
        sentence_len=(8, 14),
    )


def lexicon_adversarial_spec(cases_per_charge: int = 30) -> ToySpec:
    """Charges 2 and 3 share their visible cue and differ only by a late
    lexicon term, which sits past the case truncation window and past the
    encoded fact prefix (the long head sentence fills it)."""
    return ToySpec(
        label_texts=LABEL_POOL[:4],
        cues=(("窃得",), ("骗取",), ("持刀",), ("持刀",)),
        tail_cues=((), (), ("抢夺",), ("殴打",)),
        cases_per_charge=cases_per_charge,
        n_sentences=4,
        head_len=30,
        cue_placement="head",
        article_cues=("head", "tail"),
        lexicon_cues=("head", "tail"),
    )


def facts_adversarial_spec(cases_per_charge: int = 30) -> ToySpec:
    """Charges 2 and 3 share their visible cue and differ only by a late
    sentence that is not a lexicon term but is shared with the charge's
    article, so only the extracted factual elements carry it."""
    return ToySpec(
        label_texts=LABEL_POOL[:4],
        cues=(("窃得",), ("骗取",), ("持刀",), ("持刀",)),
        tail_cues=((), (), ("抢夺",), ("殴打",)),
        cases_per_charge=cases_per_charge,
        n_sentences=4,
        cue_placement="head",
        article_cues=("tail",),
        lexicon_cues=(),
    )


def _spec_chars(spec: ToySpec) -> set[str]:
    used = set(ARTICLE_BOILERPLATE) | set("、。")
    for group in list(spec.cues) + list(spec.tail_cues):
        for cue in group:
            used |= set(cue)
    for t in spec.label_texts:
        used |= set(t)
    for t in spec.distractors:
        used |= set(t)
    return used


def _article_text(spec: ToySpec, c: int) -> str:
    terms: list[str] = []
    if "head" in spec.article_cues:
        terms += list(spec.cues[c])
    if "tail" in spec.article_cues and spec.tail_cues:
        terms += list(spec.tail_cues[c])
    if not terms:
        terms = [spec.label_texts[c]]
    return ARTICLE_BOILERPLATE + "、".join(dict.fromkeys(terms)) + "。"


def generate_toy_corpus(spec: ToySpec, seed: int = 0) -> Dataset:
    """Deterministic synthetic corpus; one article per charge.

    ``noise_rate`` is the chance of dropping each cue from a case (at least
    one always survives), so a rate of 0 keeps every cue.
    """
    if spec.n_charges == 0:
        raise DataError("toy corpus needs at least one charge")
    if len(spec.cues) != spec.n_charges:
        raise DataError("need one cue group per charge")
    if spec.tail_cues and len(spec.tail_cues) != spec.n_charges:
        raise DataError("need one tail cue group per charge")
    if spec.cue_placement not in ("anywhere", "head"):
        raise DataError(f"unknown cue placement {spec.cue_placement!r}")
    banned = _spec_chars(spec)
    filler = "".join(ch for ch in dict.fromkeys(spec.filler_alphabet) if ch not in banned)
    if not filler:
        raise DataError("filler alphabet is empty after removing cue characters")

    rng = random.Random(seed)
    lo, hi = spec.sentence_len

    def fill(n):
        return "".join(rng.choice(filler) for _ in range(n))

    filler_set = set(filler)

    def insert(sentence, cue):
        # never split a cue inserted earlier: cut only next to filler characters
        allowed = [p for p in range(len(sentence) + 1)
                   if p in (0, len(sentence)) or sentence[p - 1] in filler_set or sentence[p] in filler_set]
        pos = rng.choice(allowed)
        return sentence[:pos] + cue + sentence[pos:]

    articles = tuple(Article(c + 1, _article_text(spec, c)) for c in range(spec.n_charges))
    cases = []
    for c in range(spec.n_charges):
        for k in range(spec.cases_per_charge):
            kept = [cue for cue in spec.cues[c] if rng.random() >= spec.noise_rate]
            if not kept and spec.cues[c]:
                kept = [rng.choice(spec.cues[c])]
            sentences = [fill(rng.randint(lo, hi)) for _ in range(max(spec.n_sentences, 1))]
            for cue in kept:
                i = 0 if spec.cue_placement == "head" else rng.randrange(len(sentences))
                sentences[i] = insert(sentences[i], cue)
            if spec.head_len and len(sentences[0]) < spec.head_len:
                sentences[0] = sentences[0] + fill(spec.head_len - len(sentences[0]))
            if spec.tail_cues and spec.tail_cues[c]:
                tail = fill(rng.randint(2, 4))
                for cue in spec.tail_cues[c]:
                    tail = insert(tail, cue)
                sentences.append(tail)
            text = "。".join(sentences) + "。"
            cases.append(Case(f"toy-{c}-{k}", text, c, (c + 1,)))
    verbalizer = Verbalizer(tuple(enumerate(spec.label_texts)))
    return Dataset(tuple(cases), articles, verbalizer)


def toy_lexicon(spec: ToySpec) -> list[str]:
    terms: list[str] = []
    if "head" in spec.lexicon_cues:
        terms += [cue for group in spec.cues for cue in group]
    if "tail" in spec.lexicon_cues:
        terms += [cue for group in spec.tail_cues for cue in group]
    terms += list(spec.distractors)
    return list(dict.fromkeys(terms))
