import json

import pytest

from lawprompt import cli


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["gen-data", "--charges", "3", "--cases-per-charge", "12", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.cfg"
    path.write_text("# small settings for tests\ntemplates = zh\nd_h = 16\nd_ff = 32\n"
                    "max_epochs = 2\nmask_count = 4\nretriever_epochs = 3\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def model_dir(data_dir, fast_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    code = cli.main(["train", "--data", str(data_dir), "--config", str(fast_config), "--out", str(out)])
    assert code == 0
    return out


def test_gen_data_writes_corpus(data_dir):
    for name in ("cases.jsonl", "articles.jsonl", "verbalizer.jsonl", "lexicon.txt"):
        assert (data_dir / name).exists()
    lines = (data_dir / "cases.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 36


def test_train_writes_model_and_report(model_dir):
    report = json.loads((model_dir / "report.json").read_text())
    assert 0.0 <= report["macro_f1"] <= 1.0
    assert (model_dir / "model.ckpt").exists()
    assert set(json.loads((model_dir / "splits.json").read_text())) == {"train", "val", "test"}


def test_predict_json(model_dir, capsys):
    assert cli.main(["predict", "--model", str(model_dir), "--text", "某人于家中窃得财物"]) == 0
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[0])
    assert "label" in rec and "retrieved_articles" in rec


def test_predict_text_from_file(model_dir, data_dir, tmp_path):
    out = tmp_path / "pred"
    code = cli.main(["predict", "--model", str(model_dir), "--input", str(data_dir / "cases.jsonl"),
                     "--format", "text", "--out", str(out)])
    assert code == 0
    assert (out / "predictions.txt").read_text(encoding="utf-8").strip()


def test_eval_on_held_out_split(model_dir, data_dir, capsys):
    assert cli.main(["eval", "--model", str(model_dir), "--data", str(data_dir)]) == 0
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    test_ids = json.loads((model_dir / "splits.json").read_text())["test"]
    assert f"on {len(test_ids)} cases" in captured.err
    assert report["macro_f1"] >= 0.0


def test_train_retriever(data_dir, fast_config, tmp_path):
    code = cli.main(["train-retriever", "--data", str(data_dir), "--config", str(fast_config), "--out", str(tmp_path)])
    assert code == 0
    assert 0.0 <= json.loads((tmp_path / "retrieval.json").read_text())["top1_accuracy"] <= 1.0


def test_sweep_data_csv(data_dir, fast_config, tmp_path):
    code = cli.main(["sweep-data", "--data", str(data_dir), "--config", str(fast_config),
                     "--fractions", "0.5,1.0", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "sweep_data.csv").read_text().splitlines()
    assert rows[0].startswith("fraction") and len(rows) == 3


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_bad_fraction_is_usage_error(data_dir):
    assert cli.main(["sweep-data", "--data", str(data_dir), "--fractions", "0,1.5"]) == 1


def test_unknown_config_key_is_data_error(data_dir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 3\n")
    assert cli.main(["train", "--data", str(data_dir), "--config", str(cfg)]) == 2


def test_missing_data_is_data_error(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "missing")]) == 2


def test_missing_model_is_data_error(tmp_path):
    assert cli.main(["predict", "--model", str(tmp_path), "--text", "x"]) == 2


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck", "--samples", "2"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "gru_gates" in out


def test_gradcheck_failure_exits_3(monkeypatch):
    from lawprompt import gradcheck
    bad = [gradcheck.GradCheckResult("attention", "layers.0.wq", 1, 1.0)]
    monkeypatch.setattr(gradcheck, "run_all", lambda seed, samples: bad)
    assert cli.main(["gradcheck"]) == 3


def test_env_endpoint_is_used(monkeypatch):
    monkeypatch.setenv("LLM_ENDPOINT", "http://127.0.0.1:9/v1")
    args = cli.build_parser().parse_args(["gradcheck"])
    assert cli.resolve_config(args).llm_endpoint == "http://127.0.0.1:9/v1"
