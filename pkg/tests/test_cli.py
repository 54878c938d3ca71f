import csv
import json

import numpy as np
import pytest

from covid_tsc.cascade import OUTPUT_CLASSES
from covid_tsc.cli import build_parser, main
from covid_tsc.dataio import STAGE1, STAGE2, read_manifest, scan_directory, write_manifest
from covid_tsc.model import LookupModel

SUBCOMMANDS = ["ingest", "stats", "train", "cascade", "compare", "report"]


def write_config(path, **kw):
    doc = {"conv_filters": [4, 8], "dense_units": 16, "batch_size": 16, "epochs": 1, **kw}
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def manifest_csv(tiny_corpus, tmp_path):
    return write_manifest(scan_directory(tiny_corpus), tmp_path / "m.csv")


class TestIngest:
    def test_counts(self, tiny_corpus, tmp_path, capsys):
        assert main(["ingest", str(tiny_corpus), str(tmp_path / "m.csv")]) == 0
        out = capsys.readouterr().out
        assert "normal\t10" in out and "total\t40" in out
        assert len(read_manifest(tmp_path / "m.csv")) == 40

    def test_balanced(self, tiny_corpus, tmp_path):
        assert main(["ingest", str(tiny_corpus), str(tmp_path / "m.csv"), "--n-per-class", "3", "--seed", "2"]) == 0
        assert set(read_manifest(tmp_path / "m.csv").counts().values()) == {3}

    def test_missing_folder(self, tmp_path, capsys):
        for c in ("normal", "covid", "pneumonia"):
            (tmp_path / c).mkdir()
        assert main(["ingest", str(tmp_path), str(tmp_path / "m.csv")]) == 2
        assert "opacity" in capsys.readouterr().err


class TestTrain:
    def test_success(self, tiny_corpus, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", data_root=str(tiny_corpus))
        out = tmp_path / "run"
        assert main(["train", str(cfg), "--mode", "one-shot", "--k", "2", "--epochs", "2", "--out", str(out)]) == 0
        assert "accuracy" in capsys.readouterr().out
        assert len((out / "history.csv").read_text().splitlines()) == 1 + 2 * 2

    def test_stage1_artifacts(self, tiny_corpus, tmp_path):
        cfg = write_config(tmp_path / "c.json", data_root=str(tiny_corpus))
        assert main(["train", str(cfg), "--mode", "stage1", "--out", str(tmp_path / "r")]) == 0
        assert (tmp_path / "r" / "confusion_stage1.csv").exists()
        assert (tmp_path / "r" / "model_stage1.npz").exists()

    def test_env_output_root(self, tiny_corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("COVID_TSC_OUTPUT_ROOT", str(tmp_path / "root"))
        cfg = write_config(tmp_path / "c.json", data_root=str(tiny_corpus))
        assert main(["train", str(cfg)]) == 0
        assert (tmp_path / "root" / "one_shot" / "history.csv").exists()

    @pytest.mark.parametrize("doc", [
        "{broken",
        json.dumps({"data_root": "x", "mode": "stage1", "loss": "categorical_cross_entropy"}),
        json.dumps({"data_root": "x", "bogus": 1}),
    ])
    def test_malformed_config(self, tmp_path, doc):
        (tmp_path / "c.json").write_text(doc)
        assert main(["train", str(tmp_path / "c.json")]) == 2

    def test_divergence(self, tiny_corpus, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", data_root=str(tiny_corpus), learning_rate=1e12, epochs=5)
        assert main(["train", str(cfg), "--out", str(tmp_path / "r")]) == 3
        assert "loss" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "c.json", "--frobnicate"])
        assert exc.value.code == 2


@pytest.fixture
def oracle_models(manifest_csv, tmp_path):
    m = read_manifest(manifest_csv)
    rng = np.random.default_rng(0)
    # imperfect stage 1 so the threshold matters
    p1 = {s.id: (0.95 if s.label != "normal" else float(rng.uniform(0.0, 0.8))) for s in m}
    s1 = LookupModel(STAGE1, p1, "binary").save(tmp_path / "s1.json")
    s2_labels = {s.id: (s.label if s.label != "normal" else "covid") for s in m}
    s2 = LookupModel.from_labels(STAGE2, s2_labels).save(tmp_path / "s2.json")
    perfect1 = LookupModel.from_labels(STAGE1, {s.id: ("normal" if s.label == "normal" else "disease") for s in m})
    return s1, s2, perfect1.save(tmp_path / "p1.json")


class TestCascade:
    def test_oracles_perfect(self, oracle_models, manifest_csv, tmp_path, capsys):
        _, s2, p1 = oracle_models
        out = tmp_path / "c"
        assert main(["cascade", str(p1), str(s2), str(manifest_csv), "--out", str(out)]) == 0
        assert "accuracy 1.0000" in capsys.readouterr().out
        for name in ("predictions.csv", "confusion_cascade.csv", "report_cascade.txt", "report_stage1.txt",
                     "report_stage2.txt"):
            assert (out / name).exists()

    def normal_count(self, out):
        with (out / "predictions.csv").open(newline="") as fh:
            return sum(r["pred_label"] == "normal" for r in csv.DictReader(fh))

    def test_threshold_monotone(self, oracle_models, manifest_csv, tmp_path):
        s1, s2, _ = oracle_models
        assert main(["cascade", str(s1), str(s2), str(manifest_csv), "--out", str(tmp_path / "a")]) == 0
        assert main(["cascade", str(s1), str(s2), str(manifest_csv), "--threshold", "0.9",
                     "--out", str(tmp_path / "b")]) == 0
        assert self.normal_count(tmp_path / "b") >= self.normal_count(tmp_path / "a")

    def test_soft_is_argmax(self, oracle_models, manifest_csv, tmp_path):
        s1, s2, _ = oracle_models
        assert main(["cascade", str(s1), str(s2), str(manifest_csv), "--soft", "--out", str(tmp_path / "s")]) == 0
        with (tmp_path / "s" / "predictions.csv").open(newline="") as fh:
            for r in csv.DictReader(fh):
                probs = [float(r[f"p_{c}"]) for c in OUTPUT_CLASSES]
                assert r["pred_label"] == OUTPUT_CLASSES[int(np.argmax(probs))]

    def test_schema_mismatch(self, oracle_models, manifest_csv, tmp_path):
        _, s2, _ = oracle_models
        assert main(["cascade", str(s2), str(s2), str(manifest_csv), "--out", str(tmp_path / "x")]) == 2

    def test_missing_model(self, manifest_csv, tmp_path):
        assert main(["cascade", "nope.npz", "nope.npz", str(manifest_csv), "--out", str(tmp_path / "x")]) == 2


class TestStatsReportCompare:
    def test_stats_three_images(self, tiny_corpus, tmp_path):
        m = scan_directory(tiny_corpus).subset(scan_directory(tiny_corpus).ids[:3])
        path = write_manifest(m, tmp_path / "m.csv")
        assert main(["stats", str(path), "--out", str(tmp_path / "st")]) == 0
        assert len((tmp_path / "st" / "scatter.csv").read_text().splitlines()) == 4

    def test_report_curves(self, tiny_corpus, tmp_path):
        cfg = write_config(tmp_path / "c.json", data_root=str(tiny_corpus), k=5, epochs=10)
        assert main(["train", str(cfg), "--out", str(tmp_path / "r")]) == 0
        hist = tmp_path / "r" / "history.csv"
        assert len(hist.read_text().splitlines()) == 51
        assert main(["report", "curves", str(hist), str(tmp_path / "curves.png")]) == 0
        assert [p.name for p in tmp_path.glob("*.png")] == ["curves.png"]

    def test_report_bad_input(self, tmp_path):
        (tmp_path / "bad.csv").write_text(",a,b\na,1\n")
        assert main(["report", "heatmap", str(tmp_path / "bad.csv"), str(tmp_path / "h.png")]) == 2
        assert main(["report", "bars", str(tmp_path / "missing.csv"), str(tmp_path / "b.png")]) == 2

    def test_compare(self, tiny_corpus, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", data_root=str(tiny_corpus))
        for mode in ("one-shot", "cascade"):
            assert main(["train", str(cfg), "--mode", mode, "--out", str(tmp_path / mode)]) == 0
        out = tmp_path / "cmp.csv"
        assert main(["compare", str(tmp_path / "one-shot"), str(tmp_path / "cascade"), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 3
        assert main(["compare", str(tmp_path / "nowhere")]) == 2


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help(name, capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args([name, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--seed" in text and "default" in text
