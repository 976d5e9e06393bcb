"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import corpus, gradcheck, harness
from .errors import DataError, NumericError, StageError, TransportError
from .joint_space import build_index, rank_articles
from .knowledge import Lexicon, load_lexicon, save_lexicon

log = logging.getLogger("lawprompt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TOY_KINDS = {
    "separable": lambda n, k: corpus.separable_spec(n, k),
    "lexicon": lambda n, k: corpus.lexicon_adversarial_spec(k),
    "facts": lambda n, k: corpus.facts_adversarial_spec(k),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="key = value file (or JSON) of run settings")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--n-articles", type=int, default=S, help="retrieved articles N")
    p.add_argument("--mask-count", type=int, default=S)
    p.add_argument("--max-len", type=int, default=S, help="case token cap")
    p.add_argument("--no-snippets", action="store_true", default=S)
    p.add_argument("--no-facts", action="store_true", default=S)
    p.add_argument("--no-contrastive", action="store_true", default=S)
    p.add_argument("--llm-endpoint", default=S, help="chat endpoint (default: $LLM_ENDPOINT, else the mock)")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="lawprompt", description="Knowledge-enhanced prompt-learning charge prediction.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("gen-data", "write a synthetic corpus and its lexicon")
    p.add_argument("--kind", choices=sorted(TOY_KINDS), default="separable")
    p.add_argument("--charges", type=int, default=5)
    p.add_argument("--cases-per-charge", type=int, default=40)

    for name, help_ in (("train-retriever", "contrastively train the case/article encoder"),
                        ("train", "train every stage and evaluate on the held-out third"),
                        ("ablate", "ablation table (CSV)"),
                        ("sweep-data", "training-data fraction sweep (CSV)"),
                        ("sweep-hparams", "N x max_len x mask_count grid (CSV)")):
        p = add(name, help_)
        p.add_argument("--data", required=True, help="directory with cases/articles/verbalizer .jsonl")
        p.add_argument("--lexicon", help="lexicon file (default: DATA/lexicon.txt)")
        if name == "sweep-data":
            p.add_argument("--fractions", type=_float_list, default=[0.1, 0.25, 0.5, 1.0])
        if name == "sweep-hparams":
            p.add_argument("--n-articles-grid", type=_int_list, default=[2, 4, 6, 8])
            p.add_argument("--max-len-grid", type=_int_list, default=[64, 128, 192, 256])
            p.add_argument("--mask-count-grid", type=_int_list, default=[5, 10, 15, 20])

    p = add("predict", "predict charges with explanations")
    p.add_argument("--model", required=True, help="model directory written by `train`")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="one case description")
    src.add_argument("--input", help="cases .jsonl file")
    p.add_argument("--format", choices=("json", "text"), default="json")

    p = add("eval", "evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "all"), default="test",
                   help="'test' evaluates the cases held out at training time")

    p = add("gradcheck", "finite-difference gradient checks")
    p.add_argument("--samples", type=int, default=16, help="entries per array (0 = all)")
    return parser


def resolve_config(args) -> harness.RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(harness.load_config_file(args.config))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
    for key in ("seed", "n_articles", "mask_count", "max_len", "no_snippets", "no_facts",
                "no_contrastive", "llm_endpoint"):
        if hasattr(args, key):
            values[key] = getattr(args, key)
    if "llm_endpoint" not in values and os.environ.get("LLM_ENDPOINT"):
        values["llm_endpoint"] = os.environ["LLM_ENDPOINT"]
    try:
        return harness.RunConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from exc


def _out_dir(args, default: str) -> Path:
    d = Path(getattr(args, "out", default))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_data(args):
    ds = corpus.load_dataset_dir(args.data)
    lex_path = Path(args.lexicon) if args.lexicon else Path(args.data) / "lexicon.txt"
    if lex_path.exists():
        lexicon = load_lexicon(lex_path)
    elif args.lexicon:
        raise DataError(f"lexicon file {lex_path} not found")
    else:
        log.warning("no lexicon at %s; knowledge snippets will be empty", lex_path)
        lexicon = Lexicon(())
    return ds, lexicon


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def cmd_gen_data(args, cfg):
    spec = TOY_KINDS[args.kind](args.charges, args.cases_per_charge)
    ds = corpus.generate_toy_corpus(spec, seed=cfg.seed)
    out = _out_dir(args, "data")
    corpus.save_dataset(ds, out)
    save_lexicon(Lexicon(corpus.toy_lexicon(spec)), out / "lexicon.txt")
    print(f"wrote {len(ds.cases)} cases, {len(ds.articles)} articles to {out}")


def cmd_train_retriever(args, cfg):
    ds, lexicon = _load_data(args)
    splits = harness.make_splits(ds, cfg)
    vocab = harness.build_vocabulary(ds, splits.train, lexicon, cfg)
    enc = harness.train_retriever(ds, splits.train, vocab, cfg)
    index = build_index(enc, ds.articles)
    hits = [rank_articles(enc.encode_text(c.text), index, 1)[0][0] in c.articles for c in splits.test]
    out = _out_dir(args, "retriever")
    from .checkpoint import Checkpoint, save_checkpoint
    (out / "vocab.json").write_text(json.dumps(vocab.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")
    save_checkpoint(Checkpoint("retriever", enc.params, vocab.hash, {"d_r": enc.dim, "max_len": enc.max_len}),
                    out / "retriever.ckpt")
    acc = sum(hits) / len(hits)
    _write(out / "retrieval.json", json.dumps({"top1_accuracy": acc, "n_test": len(hits)}, indent=2) + "\n")
    print(f"held-out top-1 article accuracy: {acc:.3f}")


def cmd_train(args, cfg):
    ds, lexicon = _load_data(args)
    res = harness.run_experiment(ds, cfg, lexicon)
    out = _out_dir(args, "model")
    harness.save_components(res.components, out, res.history)
    splits = {k: [c.id for c in getattr(res.splits, k)] for k in ("train", "val", "test")}
    (out / "splits.json").write_text(json.dumps(splits, indent=1) + "\n")
    _write(out / "report.json", json.dumps(res.report.to_json(), indent=2) + "\n")
    print(f"test macro-F1 {res.report.macro_f1:.4f}")


def _read_cases(path):
    recs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text = rec["fact"] if "fact" in rec else rec["text"]
            except (ValueError, KeyError, TypeError):
                raise DataError(f"{path}:{lineno}: expected an object with a 'fact' field") from None
            recs.append((str(rec.get("id", lineno)), text))
    return recs


def _overrides(cfg: harness.RunConfig, args) -> dict:
    keys = ("n_articles", "mask_count", "max_len", "no_snippets", "no_facts", "llm_endpoint")
    return {k: getattr(cfg, k) for k in keys if hasattr(args, k) or (k == "llm_endpoint" and cfg.llm_endpoint)}


def cmd_predict(args, cfg):
    comp = harness.load_components(args.model, _overrides(cfg, args))
    cases = [(None, args.text)] if args.text is not None else _read_cases(args.input)
    lines = []
    for cid, text in cases:
        _, expl = harness.predict_case(comp, text, case_id=cid)
        lines.append(json.dumps(expl.to_json(), ensure_ascii=False) if args.format == "json"
                     else expl.render_text() + "\n")
    text = "\n".join(lines) + "\n"
    if hasattr(args, "out"):
        out = _out_dir(args, ".")
        _write(out / ("predictions.jsonl" if args.format == "json" else "predictions.txt"), text)
    else:
        sys.stdout.write(text)


def cmd_eval(args, cfg):
    comp = harness.load_components(args.model, _overrides(cfg, args))
    ds = corpus.load_dataset_dir(args.data)
    cases = list(ds.cases)
    split_file = Path(args.model) / "splits.json"
    if args.split == "test" and split_file.exists():
        test_ids = set(json.loads(split_file.read_text())["test"])
        cases = [c for c in cases if c.id in test_ids]
    report = harness.evaluate(comp, cases)
    text = json.dumps(report.to_json(), indent=2) + "\n"
    if hasattr(args, "out"):
        _write(_out_dir(args, ".") / "report.json", text)
    else:
        sys.stdout.write(text)
    print(f"macro-F1 {report.macro_f1:.4f} on {len(cases)} cases", file=sys.stderr)


def cmd_ablate(args, cfg):
    ds, lexicon = _load_data(args)
    table = harness.run_ablation(ds, cfg, lexicon)
    _write(_out_dir(args, "runs") / "ablation.csv", harness.ablation_csv(table))


def cmd_sweep_data(args, cfg):
    fr = args.fractions
    if not fr or any(not 0 < f <= 1 for f in fr):
        raise UsageError("fractions must lie in (0, 1]")
    ds, lexicon = _load_data(args)
    _write(_out_dir(args, "runs") / "sweep_data.csv", harness.data_fraction_sweep(ds, fr, cfg, lexicon))


def cmd_sweep_hparams(args, cfg):
    grid = {"n_articles": args.n_articles_grid, "max_len": args.max_len_grid, "mask_count": args.mask_count_grid}
    if any(not v for v in grid.values()):
        raise UsageError("every grid axis needs at least one value")
    ds, lexicon = _load_data(args)
    _write(_out_dir(args, "runs") / "sweep_hparams.csv", harness.hyperparam_sweep(ds, grid, cfg, lexicon))


def cmd_gradcheck(args, cfg):
    results = gradcheck.run_all(cfg.seed, args.samples or None)
    width = max(len(r.param) for r in results)
    for r in results:
        print(f"{r.family:<18} {r.param:<{width}} n={r.n_checked:<5} max_rel={r.max_rel_error:.2e} "
              f"{'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericError(f"{len(failed)} parameter arrays failed the gradient check")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-retriever": cmd_train_retriever,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-data": cmd_sweep_data,
    "sweep-hparams": cmd_sweep_hparams,
    "gradcheck": cmd_gradcheck,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, TransportError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (UsageError, ValueError)):
        return EXIT_USAGE
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0) or 0, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (UsageError, DataError, NumericError, TransportError, StageError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        print(f"lawprompt: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
