"""Acceptance criteria, each run at its stated tolerance.

Every test prints a single ``[PASS]``/``[FAIL]`` line (visible with ``-s`` or
in the terminal summary of ``pytest -v``) before asserting.
"""

import itertools
import shutil
import time
from collections import Counter

import numpy as np
import pytest

from covid_tsc.cascade import CascadeModel, compose_batch, evaluate_cascade
from covid_tsc.cli import main as cli_main
from covid_tsc.dataio import FOUR_CLASS, STAGE1, STAGE2, make_folds, split_holdout, split_train_val
from covid_tsc.harness import ExperimentConfig, run_experiment
from covid_tsc.metrics import accuracy, confusion_matrix, precision_recall_f1_support
from covid_tsc.model import ModelSpec, activation, build_transfer_head, conv2d, count_parameters, dense, flatten, maxpool
from covid_tsc.report import render_curves
from covid_tsc.synthetic import make_synthetic_corpus

from .conftest import make_manifest
from .oracles import cascade_oracles, closed_form_parameters, gradient_check, naive_confusion, naive_metrics, random_spec

SCHEMAS = (STAGE1, STAGE2, FOUR_CLASS)


@pytest.fixture
def verdict(capsys, request):
    """Print one pass/fail line for the criterion, then assert."""

    def emit(ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}")
        assert ok, detail

    return emit


def test_metrics_oracle(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = []
    for draw in range(10_000):
        schema = SCHEMAS[draw % 3]
        classes = list(schema.classes)
        n = int(rng.integers(1, 60))
        y_true = [classes[i] for i in rng.integers(0, len(classes), n)]
        y_pred = [classes[i] for i in rng.integers(0, len(classes), n)]
        cm = confusion_matrix(y_true, y_pred, schema)
        grid = naive_confusion(y_true, y_pred, classes)
        rows = precision_recall_f1_support(cm)
        oracle_rows, oracle_acc = naive_metrics(grid)
        ok = cm.to_list() == grid and abs(accuracy(cm) - oracle_acc) <= 1e-12
        for r, (p, rc, f, s) in zip(rows, oracle_rows):
            ok &= r.support == s
            ok &= max(abs(r.precision - p), abs(r.recall - rc), abs(r.f1 - f)) <= 1e-12
        if not ok:
            bad.append(draw)
    elapsed = time.perf_counter() - t0
    verdict(not bad and elapsed < 10, f"10000 draws, {len(bad)} mismatches, {elapsed:.1f}s (limit 10s)")


def test_split_fold_invariants(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    failures = []

    def check(cond, what):
        if not cond:
            failures.append(what)

    fixed = make_manifest({c: 1500 for c in FOUR_CLASS.classes})
    sp = split_holdout(fixed, 0.2, 0)
    check(set(sp.train.counts().values()) == {1200} and set(sp.held_out.counts().values()) == {300}, "1500@0.2")
    fixed = make_manifest({c: 1200 for c in FOUR_CLASS.classes})
    sp = split_train_val(fixed, 0.25, 0)
    check(set(sp.train.counts().values()) == {900} and set(sp.held_out.counts().values()) == {300}, "1200@0.25")

    for i in range(1000):
        counts = {c: int(rng.integers(5, 80)) for c in FOUR_CLASS.classes}
        m = make_manifest(counts)
        seed = int(rng.integers(0, 2**31))
        for fraction, split in ((0.2, split_holdout), (0.25, split_train_val)):
            sp = split(m, fraction, seed)
            train, held = set(sp.train.ids), set(sp.held_out.ids)
            check(not train & held, f"{i}: overlap")
            check(train | held == set(m.ids), f"{i}: not exhaustive")
            for c, n in counts.items():
                want = int(n * fraction + 0.5 + 1e-9)
                check(sp.held_out.counts()[c] == want, f"{i}: count {c}")
            check(split(m, fraction, seed).held_out.ids == sp.held_out.ids, f"{i}: nondeterministic")
        plan = make_folds(m, 5, seed)
        check(sorted(plan.assignments) == sorted(m.ids), f"{i}: folds not a partition")
        sizes = plan.sizes()
        check(max(sizes) - min(sizes) <= 1, f"{i}: fold sizes {sizes}")
        for c in FOUR_CLASS.classes:
            per = Counter(plan.assignments[s.id] for s in m if s.label == c)
            vals = [per.get(f, 0) for f in range(5)]
            check(max(vals) - min(vals) <= 1, f"{i}: class {c} folds {vals}")
    elapsed = time.perf_counter() - t0
    verdict(not failures and elapsed < 30,
            f"1000 manifests, {len(failures)} violations {failures[:3]}, {elapsed:.1f}s (limit 30s)")


def test_cascade_composition(verdict):
    t0 = time.perf_counter()
    p = np.linspace(0, 1, 100)
    p2 = np.random.default_rng(3).dirichlet(np.ones(3), size=100)
    pairs = np.array(list(itertools.product(range(100), range(100))))
    composed = compose_batch(p[pairs[:, 0]], p2[pairs[:, 1]])
    worst = float(np.abs(composed.sum(axis=1) - 1).max())

    plan = {
        "normal": {"normal": 1350, "covid": 50, "opacity": 50, "pneumonia": 50},
        "covid": {"normal": 300, "covid": 1100, "opacity": 60, "pneumonia": 40},
        "opacity": {"normal": 300, "covid": 100, "opacity": 1000, "pneumonia": 100},
        "pneumonia": {"normal": 300, "covid": 25, "opacity": 75, "pneumonia": 1100},
    }
    test, s1, s2 = cascade_oracles(plan)
    got = evaluate_cascade(CascadeModel(s1, s2), test).confusion.to_list()
    # rows: true class; columns: normal, covid, opacity, pneumonia
    analytic = [[1350, 50, 50, 50], [300, 1100, 60, 40], [300, 100, 1000, 100], [300, 25, 75, 1100]]
    elapsed = time.perf_counter() - t0
    ok = composed.shape == (10_000, 4) and worst <= 1e-9 and got == analytic and len(test) == 6000 and elapsed < 30
    verdict(ok, f"grid max |sum-1| = {worst:.1e}; 6000-sample cm exact: {got == analytic}; {elapsed:.1f}s")


def test_parameter_counting(verdict):
    rng = np.random.default_rng(11)
    specs = [random_spec(rng) for _ in range(10)]
    mismatches = [i for i, s in enumerate(specs) if count_parameters(s) != closed_form_parameters(s)]
    head = count_parameters(build_transfer_head(512, FOUR_CLASS, hidden=48))[1]
    verdict(not mismatches and head == 24_820,
            f"10 random specs, {len(mismatches)} mismatches; transfer head trainable = {head} (want 24820)")


def test_gradient_check(verdict):
    rng = np.random.default_rng(0)
    spec = ModelSpec((5, 5, 1), (conv2d(2, 3), activation("relu"), maxpool(2), flatten(), dense(3),
                                 activation("softmax")))
    rel, n = gradient_check(spec, rng.random((4, 5, 5, 1)), rng.integers(0, 3, 4))
    verdict(n <= 50 and rel < 1e-4, f"{n} parameters, relative error {rel:.2e} (limit 1e-4)")


def _deterministic_files(out):
    # result.json and comparison.csv hold wall-clock durations
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())
            if p.is_file() and p.name not in ("result.json", "comparison.csv")}


def _twice(config, base):
    out = base / "run"
    first = run_experiment(config.replace(output_dir=str(out)))
    t_first = first.duration_s
    shutil.move(str(out), str(base / "first"))
    second = run_experiment(config.replace(output_dir=str(out)))
    same = _deterministic_files(base / "first") == _deterministic_files(out)
    return first, second, t_first, same


@pytest.mark.slow
def test_desk_scale_benchmark(verdict, tmp_path_factory):
    root = make_synthetic_corpus(tmp_path_factory.mktemp("bench") / "data", 500, size=64, seed=0)
    base = ExperimentConfig(data_root=str(root), epochs=6, seed=0, output_dir="unused")
    one_dir = tmp_path_factory.mktemp("one_shot")
    casc_dir = tmp_path_factory.mktemp("cascade")
    one, one_b, t_one, one_same = _twice(base.replace(mode="one_shot"), one_dir)
    casc, casc_b, t_casc, casc_same = _twice(base.replace(mode="cascade"), casc_dir)
    ok = (one.accuracy_mean >= 0.95 and max(t_one, one_b.duration_s) <= 300
          and casc.accuracy_mean >= 0.90 and one_same and casc_same
          and one.accuracy_mean == one_b.accuracy_mean and casc.accuracy_mean == casc_b.accuracy_mean)
    verdict(ok, f"one-shot {100 * one.accuracy_mean:.2f}% in {t_one:.0f}s; cascade {100 * casc.accuracy_mean:.2f}% "
                f"in {t_casc:.0f}s; byte-identical reruns: one-shot {one_same}, cascade {casc_same}")


def test_history_contract(verdict, tiny_corpus, tmp_path):
    cfg = ExperimentConfig(data_root=str(tiny_corpus), k=5, epochs=10, conv_filters=(4, 8), dense_units=16,
                           output_dir=str(tmp_path / "run"))
    run_experiment(cfg)
    raw = (tmp_path / "run" / "history.csv").read_bytes()
    lines = raw.decode().splitlines()
    header_ok = raw.startswith(b"fold,epoch,loss,accuracy,val_loss,val_accuracy\n")
    fig = render_curves(tmp_path / "run" / "history.csv", tmp_path / "curves.png")
    verdict(len(lines) == 51 and header_ok and fig.stat().st_size > 0,
            f"{len(lines)} lines (want 51), header exact: {header_ok}, rendered {fig.name}")


def test_cli_exit_codes(verdict, tiny_corpus, tmp_path):
    import json

    good = tmp_path / "good.json"
    good.write_text(json.dumps({"data_root": str(tiny_corpus), "epochs": 1, "conv_filters": [4, 8],
                                "dense_units": 16, "output_dir": str(tmp_path / "ok")}))
    malformed = tmp_path / "bad.json"
    malformed.write_text('{"data_root": "x", "epochs": "many"')
    diverge = tmp_path / "div.json"
    diverge.write_text(json.dumps({"data_root": str(tiny_corpus), "epochs": 5, "learning_rate": 1e12,
                                   "conv_filters": [4, 8], "dense_units": 16, "output_dir": str(tmp_path / "div")}))
    codes = (cli_main(["train", str(good)]), cli_main(["train", str(malformed)]), cli_main(["train", str(diverge)]))
    verdict(codes == (0, 2, 3), f"success/malformed/divergent -> {codes} (want (0, 2, 3))")
