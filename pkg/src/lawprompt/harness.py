"""End-to-end orchestration: splits, training, prediction with
explanations, evaluation, ablations and sweeps."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import fact_encoder
from . import prompt_model as pm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import (Article, Case, Dataset, Verbalizer, Vocab, build_vocab_from_texts, load_dataset_dir,
                     save_dataset)
from .errors import DataError, StageError
from .facts import FactList, LlmClient, MockExtractorClient, RemoteHttpClient, extract_facts
from .joint_space import (ArticleIndex, JointSpaceConfig, SentenceEncoder, build_index, build_pairs,
                          retrieve_top_n, train_joint_space)
from .knowledge import Lexicon, load_lexicon, match_snippets, save_lexicon, snippets_to_tokens
from .label_mapper import LabelMatch, PredictionTokens, map_to_label
from .metrics import EvalReport, classification_report

log = logging.getLogger(__name__)

TEMPLATES = {"en": pm.ENGLISH_TEMPLATES, "zh": pm.CHINESE_TEMPLATES}


@dataclass
class RunConfig:
    """Every knob of one experiment.

    ``lr`` defaults far above the 1e-5 used for 100M-parameter encoders
    because the desk-scale model is tiny; set it explicitly to reproduce
    the original value.
    """

    seed: int = 0
    lr: float = 3e-3
    batch: int = 8
    max_epochs: int = 50
    patience: int = 10
    n_articles: int = 4
    mask_count: int = 20
    max_len: int = 256
    max_fact_len: int = 64
    no_snippets: bool = False
    no_facts: bool = False
    no_contrastive: bool = False
    templates: str = "en"
    d_h: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 64
    cap_len: int = 256
    embed_std: float = 0.5
    clip_norm: float = 1.0
    token_dropout: float = 0.2
    retriever_dim: int = 32
    retriever_lr: float = 0.05
    retriever_epochs: int = 100
    retriever_embed_std: float = 0.01
    tau: float = 0.1
    test_fraction: float = 1 / 3
    val_fraction: float = 0.1
    llm_endpoint: str | None = None

    def __post_init__(self):
        if self.n_articles < 0:
            raise ValueError("n_articles (N) must be >= 0")
        if self.mask_count < 1:
            raise ValueError("mask_count must be >= 1")
        if self.templates not in TEMPLATES:
            raise ValueError(f"templates must be one of {sorted(TEMPLATES)}")

    def model_config(self) -> pm.ModelConfig:
        return pm.ModelConfig(self.d_h, self.n_layers, self.n_heads, self.d_ff, self.cap_len, self.embed_std)

    def train_config(self) -> pm.TrainConfig:
        return pm.TrainConfig(lr=self.lr, batch=self.batch, max_epochs=self.max_epochs, patience=self.patience,
                              seed=self.seed, mask_count=self.mask_count, clip_norm=self.clip_norm,
                              use_facts=not self.no_facts, use_snippets=not self.no_snippets,
                              token_dropout=self.token_dropout)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string or typed values; unknown keys are an error."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise DataError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key].default, raw, key)
        return cls(**kwargs)


def _coerce(default, raw, key):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise DataError(f"bad value {raw!r} for config key {key!r}") from None
    if default is None and raw.strip().lower() in ("", "none"):
        return None
    return raw


def load_config_file(path) -> dict:
    """``key = value`` lines (``#`` comments) or a JSON object."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except ValueError as exc:
            raise DataError(f"{path}: invalid JSON config: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ----------------------------------------------------------------------------
# Splits
# ----------------------------------------------------------------------------


def _by_label(cases: Iterable[Case]) -> dict[int, list[Case]]:
    groups: dict[int, list[Case]] = {}
    for c in cases:
        groups.setdefault(c.charge, []).append(c)
    return dict(sorted(groups.items()))


def stratified_split(cases: Sequence[Case], fraction: float, seed: int) -> tuple[list[Case], list[Case]]:
    """Per class, move ``round(n * fraction)`` shuffled cases into the second part."""
    rng = random.Random(seed)
    first, second = [], []
    for _, group in _by_label(cases).items():
        group = list(group)
        rng.shuffle(group)
        k = int(round(len(group) * fraction))
        second += group[:k]
        first += group[k:]
    return first, second


def subsample_fraction(cases: Sequence[Case], fraction: float, seed: int) -> list[Case]:
    """Keep ``floor(n * fraction)`` cases of each class (seeded).

    A class that ends up empty is dropped with a warning.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    rng = random.Random(seed)
    out = []
    for label, group in _by_label(cases).items():
        group = list(group)
        rng.shuffle(group)
        k = math.floor(len(group) * fraction + 1e-9)
        if k == 0:
            log.warning("fraction %.3g leaves class %d empty; dropped", fraction, label)
        out += group[:k]
    return out


def validation_carve(cases: Sequence[Case], fraction: float, seed: int) -> tuple[list[Case], list[Case]]:
    """Take ``floor(n * fraction)`` of each class for validation."""
    rng = random.Random(seed + 7919)
    train, val = [], []
    for _, group in _by_label(cases).items():
        group = list(group)
        rng.shuffle(group)
        k = math.floor(len(group) * fraction)
        val += group[:k]
        train += group[k:]
    return train, val


@dataclass
class Splits:
    train: list[Case]
    val: list[Case]
    test: list[Case]


def make_splits(dataset: Dataset, config: RunConfig, fraction: float = 1.0) -> Splits:
    pool, test = stratified_split(dataset.cases, config.test_fraction, config.seed)
    if fraction < 1.0:
        pool = subsample_fraction(pool, fraction, config.seed)
    train, val = validation_carve(pool, config.val_fraction, config.seed)
    if not train:
        raise DataError("training split is empty")
    if not test:
        raise DataError("test split is empty")
    return Splits(train, val, test)


# ----------------------------------------------------------------------------
# Components and per-case preparation
# ----------------------------------------------------------------------------


@dataclass
class Components:
    vocab: Vocab
    articles: tuple[Article, ...]
    verbalizer: Verbalizer
    retriever: SentenceEncoder
    index: ArticleIndex
    lexicon: Lexicon
    client: LlmClient
    model: pm.PromptModel
    config: RunConfig

    @property
    def templates(self) -> pm.EncodedTemplates:
        return TEMPLATES[self.config.templates].encode(self.vocab)

    def article_text(self, aid: int) -> str:
        return {a.id: a.text for a in self.articles}[aid]


@dataclass
class CaseTrace:
    """Intermediate artifacts for one case (independent of ablation flags)."""

    retrieved: list[tuple[int, float]]
    facts: FactList
    snippets: list[str]
    example: pm.PreparedExample


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # re-raised with the stage attached
        raise StageError(name, exc) from exc


def prepare_case(comp: Components, text: str, label: int | None = None) -> CaseTrace:
    """Retrieve, extract facts, match snippets and tokenize one case."""
    cfg = comp.config
    retrieved = _stage("retrieval", retrieve_top_n, comp.retriever, text, comp.index, cfg.n_articles)
    arts = [comp.article_text(aid) for aid, _ in retrieved]
    if arts:
        facts = _stage("fact_extraction", extract_facts, comp.client, text, arts)
    else:
        facts = FactList(())
    matches = _stage("knowledge_matching", match_snippets, comp.lexicon, text)
    vocab = comp.vocab
    fact_ids = fact_encoder.fact_token_ids(list(facts.elements), vocab, cfg.max_fact_len)
    targets = (pm.label_targets(comp.verbalizer.text(label), vocab, cfg.mask_count)
               if label is not None else np.zeros(cfg.mask_count, dtype=np.intp))
    ex = pm.PreparedExample(
        case_tokens=tuple(vocab.encode(text, cfg.max_len)),
        snippet_tokens=tuple(snippets_to_tokens(matches, vocab)),
        fact_tokens=tuple(fact_ids),
        label=-1 if label is None else label,
        targets=targets,
    )
    return CaseTrace(retrieved, facts, [m.term for m in matches], ex)


@dataclass
class Explanation:
    case_id: str | None
    label: int
    label_text: str
    retrieved_articles: list[int]
    retrieval_scores: list[float]
    facts: list[str]
    snippets: list[str]
    predicted_tokens: list[str]
    jaccard_scores: list[float]
    zero_confidence: bool

    def to_json(self) -> dict:
        return asdict(self)

    def render_text(self) -> str:
        lines = [f"case: {self.case_id}" if self.case_id else "case: <input>",
                 f"predicted charge: {self.label_text} (label {self.label})"
                 + ("  [no token overlap with any label]" if self.zero_confidence else ""),
                 "retrieved articles: " + ", ".join(
                     f"{a} ({s:.3f})" for a, s in zip(self.retrieved_articles, self.retrieval_scores)),
                 "knowledge snippets: " + (", ".join(self.snippets) or "-"),
                 "factual elements:"]
        lines += [f"  - {f}" for f in self.facts] or ["  -"]
        lines.append("mask predictions: " + " ".join(self.predicted_tokens))
        lines.append("jaccard: " + ", ".join(f"{s:.3f}" for s in self.jaccard_scores))
        return "\n".join(lines)


def predict_prepared(comp: Components, ex: pm.PreparedExample, config: RunConfig | None = None):
    cfg = config or comp.config
    res = pm.forward(comp.model, ex, comp.templates, cfg.mask_count, not cfg.no_facts, not cfg.no_snippets)
    tokens = PredictionTokens.from_ids(res.output.predicted, comp.vocab)
    return map_to_label(tokens, comp.verbalizer), res


def predict_case(comp: Components, text: str, config: RunConfig | None = None,
                 case_id: str | None = None, trace: CaseTrace | None = None) -> tuple[int, Explanation]:
    """Full pipeline for one case; ``config`` overrides ablation flags."""
    cfg = config or comp.config
    if trace is None:
        trace = prepare_case(replace_components_config(comp, cfg), text)
    match, res = _stage("inference", predict_prepared, comp, trace.example, cfg)
    expl = Explanation(
        case_id=case_id,
        label=match.label,
        label_text=comp.verbalizer.text(match.label),
        retrieved_articles=[a for a, _ in trace.retrieved],
        retrieval_scores=[s for _, s in trace.retrieved],
        facts=list(trace.facts.elements),
        snippets=[] if cfg.no_snippets else list(trace.snippets),
        predicted_tokens=comp.vocab.decode_units(res.output.predicted),
        jaccard_scores=list(match.scores),
        zero_confidence=match.zero_confidence,
    )
    return match.label, expl


def replace_components_config(comp: Components, cfg: RunConfig) -> Components:
    return comp if cfg is comp.config else replace(comp, config=cfg)


def evaluate_prepared(comp: Components, examples: Sequence[pm.PreparedExample],
                      config: RunConfig | None = None) -> EvalReport:
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    gold = [ex.label for ex in examples]
    pred = [predict_prepared(comp, ex, config)[0].label for ex in examples]
    return classification_report(gold, pred, len(comp.verbalizer))


def evaluate(comp: Components, cases: Sequence[Case], config: RunConfig | None = None) -> EvalReport:
    if not cases:
        raise ValueError("cannot evaluate an empty split")
    return evaluate_prepared(comp, [prepare_case(comp, c.text, c.charge).example for c in cases], config)


# ----------------------------------------------------------------------------
# Building and training
# ----------------------------------------------------------------------------


def make_client(config: RunConfig, lexicon: Lexicon) -> LlmClient:
    if config.llm_endpoint:
        return RemoteHttpClient(config.llm_endpoint)
    return MockExtractorClient(lexicon)


def build_vocabulary(dataset: Dataset, train_cases: Sequence[Case], lexicon: Lexicon, config: RunConfig) -> Vocab:
    """Training cases, articles, label texts, lexicon terms and templates;
    held-out text contributes nothing."""
    tpl = TEMPLATES[config.templates]
    texts = [c.text for c in train_cases] + [a.text for a in dataset.articles]
    texts += [t for _, t in dataset.verbalizer.entries] + list(lexicon.terms) + [tpl.t1, tpl.t2, ","]
    return build_vocab_from_texts(texts, 1, dataset.verbalizer.mode)


def train_retriever(dataset: Dataset, train_cases: Sequence[Case], vocab: Vocab, config: RunConfig) -> SentenceEncoder:
    # the retriever reads whole cases; max_len only truncates the prompt's case segment
    enc = SentenceEncoder.init(vocab, config.retriever_dim, seed=config.seed, embed_std=config.retriever_embed_std)
    if config.no_contrastive:
        return enc
    pairs = build_pairs(dataset.with_cases(train_cases), seed=config.seed)
    if not len(pairs):
        log.warning("no training pairs; the retriever stays untrained")
        return enc
    jcfg = JointSpaceConfig(tau=config.tau, lr=config.retriever_lr, epochs=config.retriever_epochs,
                            batch=config.batch, seed=config.seed)
    train_joint_space(enc, pairs, dataset.with_cases(train_cases), jcfg)
    return enc


@dataclass
class RunResult:
    components: Components
    report: EvalReport
    history: pm.TrainHistory
    splits: Splits
    traces: dict[str, CaseTrace] = field(repr=False, default_factory=dict)


class Pipeline:
    """Upstream stages built once per (dataset, split, retriever setting);
    several model trainings (ablation rows) can then share them."""

    def __init__(self, dataset: Dataset, config: RunConfig, lexicon: Lexicon, splits: Splits,
                 client: LlmClient | None = None):
        self.dataset = dataset
        self.config = config
        self.lexicon = lexicon
        self.splits = splits
        self.vocab = build_vocabulary(dataset, splits.train, lexicon, config)
        self.retriever = train_retriever(dataset, splits.train, self.vocab, config)
        self.index = build_index(self.retriever, dataset.articles)
        self.client = client or make_client(config, lexicon)
        proto = self.components(None, config)
        self.traces = {c.id: prepare_case(proto, c.text, c.charge)
                       for c in itertools.chain(splits.train, splits.val, splits.test)}

    def components(self, model: pm.PromptModel | None, config: RunConfig) -> Components:
        return Components(self.vocab, self.dataset.articles, self.dataset.verbalizer, self.retriever,
                          self.index, self.lexicon, self.client, model, config)

    def examples(self, cases: Sequence[Case]) -> list[pm.PreparedExample]:
        return [self.traces[c.id].example for c in cases]

    def fit(self, config: RunConfig | None = None) -> RunResult:
        cfg = config or self.config
        model = pm.PromptModel.init(len(self.vocab), cfg.model_config(), seed=cfg.seed)
        comp = self.components(model, cfg)
        val = self.examples(self.splits.val)

        def val_score(_model, examples):
            return evaluate_prepared(comp, examples).macro_f1

        history = pm.train(model, self.examples(self.splits.train), val, comp.templates, cfg.train_config(),
                           evaluate_fn=val_score)
        report = evaluate_prepared(comp, self.examples(self.splits.test))
        report.extra = {"best_epoch": history.best_epoch, "epochs": len(history.train_loss)}
        return RunResult(comp, report, history, self.splits, self.traces)


def run_experiment(dataset: Dataset, config: RunConfig, lexicon: Lexicon, fraction: float = 1.0,
                   client: LlmClient | None = None) -> RunResult:
    """Split, train every stage and evaluate on the held-out third."""
    return Pipeline(dataset, config, lexicon, make_splits(dataset, config, fraction), client).fit()


ABLATION_ROWS = {
    "full": {},
    "no_snippets": {"no_snippets": True},
    "no_facts": {"no_facts": True},
    "no_snippets_no_facts": {"no_snippets": True, "no_facts": True},
    "no_contrastive": {"no_contrastive": True},
}


def run_ablation(dataset: Dataset, config: RunConfig, lexicon: Lexicon,
                 rows: Sequence[str] = tuple(ABLATION_ROWS)) -> dict[str, EvalReport]:
    """Train one model per row with identical seeds and splits.

    Rows other than ``no_contrastive`` share retrieval, fact extraction and
    snippet matching; they differ only in what the model consumes.
    """
    base = replace(config, no_snippets=False, no_facts=False, no_contrastive=False)
    splits = make_splits(dataset, base, 1.0)
    shared = None
    out = {}
    for name in rows:
        cfg = replace(base, **ABLATION_ROWS[name])
        if cfg.no_contrastive:
            out[name] = Pipeline(dataset, cfg, lexicon, splits).fit().report
            continue
        if shared is None:
            shared = Pipeline(dataset, base, lexicon, splits)
        out[name] = shared.fit(cfg).report
    return out


def ablation_csv(table: dict[str, EvalReport]) -> str:
    return _csv(["row", "macro_precision", "macro_recall", "macro_f1"],
                [[k, r.macro_precision, r.macro_recall, r.macro_f1] for k, r in table.items()])


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def data_fraction_sweep(dataset: Dataset, fractions: Sequence[float], config: RunConfig,
                        lexicon: Lexicon) -> str:
    """CSV ``fraction,macro_f1,n_train``; the test third is shared by all rows."""
    rows = []
    for f in fractions:
        res = run_experiment(dataset, config, lexicon, fraction=f)
        rows.append([float(f), res.report.macro_f1, len(res.splits.train)])
    return _csv(["fraction", "macro_f1", "n_train"], rows)


DEFAULT_GRID = {"n_articles": (2, 4, 6, 8), "max_len": (64, 128, 192, 256), "mask_count": (5, 10, 15, 20)}


def hyperparam_sweep(dataset: Dataset, grid: dict[str, Sequence], config: RunConfig, lexicon: Lexicon,
                     run_cell: Callable[[Dataset, RunConfig, Lexicon], float] | None = None) -> str:
    """Evaluate the full Cartesian product of ``grid``; one CSV row per cell."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be nonempty")
    run_cell = run_cell or (lambda ds, cfg, lex: run_experiment(ds, cfg, lex).report.macro_f1)
    keys = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(config, **dict(zip(keys, values)))
        rows.append([*values, float(run_cell(dataset, cfg, lexicon))])
    return _csv(keys + ["macro_f1"], rows)


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# ----------------------------------------------------------------------------
# Persistence of a trained pipeline
# ----------------------------------------------------------------------------


def save_components(comp: Components, directory, history: pm.TrainHistory | None = None) -> None:
    """Write a self-contained model directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg = comp.config
    (d / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    (d / "vocab.json").write_text(json.dumps(comp.vocab.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")
    # articles and verbalizer; cases.jsonl is written empty
    save_dataset(Dataset((), comp.articles, comp.verbalizer), d)
    save_lexicon(comp.lexicon, d / "lexicon.txt")
    dims = {"d_h": cfg.d_h, "n_layers": cfg.n_layers, "n_heads": cfg.n_heads, "d_ff": cfg.d_ff,
            "cap_len": cfg.cap_len, "vocab_size": len(comp.vocab)}
    save_checkpoint(Checkpoint("prompt_model", comp.model.params, comp.vocab.hash, dims), d / "model.ckpt")
    save_checkpoint(Checkpoint("retriever", comp.retriever.params, comp.vocab.hash,
                               {"d_r": comp.retriever.dim, "max_len": comp.retriever.max_len}),
                    d / "retriever.ckpt")
    if history is not None:
        (d / "history.json").write_text(json.dumps(asdict(history), indent=2) + "\n")


def load_components(directory, overrides: dict | None = None, client: LlmClient | None = None) -> Components:
    d = Path(directory)
    try:
        base = json.loads((d / "config.json").read_text())
        vocab = Vocab.from_json(json.loads((d / "vocab.json").read_text(encoding="utf-8")))
    except (OSError, ValueError) as exc:
        raise DataError(f"{d}: not a model directory ({exc})") from exc
    base.update(overrides or {})
    cfg = RunConfig.from_mapping(base)
    ds = load_dataset_dir(d, vocab.mode)
    lexicon = load_lexicon(d / "lexicon.txt")
    mck = load_checkpoint(d / "model.ckpt", vocab.hash, kind="prompt_model")
    rck = load_checkpoint(d / "retriever.ckpt", vocab.hash, kind="retriever")
    model = pm.PromptModel(mck.params, cfg.model_config())
    retriever = SentenceEncoder(rck.params, vocab, int(rck.dims.get("max_len", cfg.max_len)))
    index = build_index(retriever, ds.articles)
    return Components(vocab, ds.articles, ds.verbalizer, retriever, index, lexicon,
                      client or make_client(cfg, lexicon), model, cfg)
