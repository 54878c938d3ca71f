"""Independent reference implementations the library is checked against."""

from __future__ import annotations

import numpy as np

from covid_tsc.model import ModelSpec, Network, activation, conv2d, dense, flatten, global_pool, maxpool


def naive_confusion(y_true, y_pred, classes):
    k = len(classes)
    grid = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        grid[classes.index(t)][classes.index(p)] += 1
    return grid


def naive_metrics(grid):
    """Per-class (precision, recall, f1, support) with zero-division -> 0, plus accuracy."""
    k = len(grid)
    out = []
    for i in range(k):
        tp = grid[i][i]
        col = sum(grid[r][i] for r in range(k))
        row = sum(grid[i])
        p = tp / col if col else 0.0
        r = tp / row if row else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out.append((p, r, f, row))
    total = sum(map(sum, grid))
    acc = sum(grid[i][i] for i in range(k)) / total if total else None
    return out, acc


def closed_form_parameters(spec: ModelSpec) -> tuple[int, int]:
    """Walk the layers with textbook arithmetic."""
    h, w, c = spec.input_shape
    flat = None
    per_layer = []
    for layer in spec.layers:
        n = 0
        if layer.kind == "conv2d":
            kh, kw = layer.kernel
            n = (kh * kw * c + 1) * layer.filters
            h, w, c = h - kh + 1, w - kw + 1, layer.filters
        elif layer.kind == "maxpool":
            h, w = h // layer.pool, w // layer.pool
        elif layer.kind == "flatten":
            flat = h * w * c
        elif layer.kind == "global_pool":
            flat = c
        elif layer.kind == "dense":
            n = (flat + 1) * layer.units
            flat = layer.units
        elif layer.kind == "backbone":
            n = layer.params
            flat = layer.units
        per_layer.append(n)
    return sum(per_layer), sum(per_layer[spec.frozen_prefix:])


def random_spec(rng) -> ModelSpec:
    h = int(rng.integers(6, 20))
    c = int(rng.integers(1, 4))
    layers = []
    size = h
    for _ in range(int(rng.integers(0, 3))):
        k = int(rng.integers(1, 4))
        if size - k + 1 < 2:
            break
        layers.append(conv2d(int(rng.integers(1, 6)), k))
        layers.append(activation("relu"))
        size = size - k + 1
        if rng.random() < 0.5 and size >= 2:
            layers.append(maxpool(2))
            size //= 2
    layers.append(global_pool() if rng.random() < 0.3 else flatten())
    for _ in range(int(rng.integers(1, 3))):
        layers.append(dense(int(rng.integers(1, 10))))
    layers.append(activation("softmax"))
    return ModelSpec((h, h, c), tuple(layers), "multiclass", int(rng.integers(0, len(layers) + 1)))


def gradient_check(spec: ModelSpec, x, y, seed: int = 0, eps: float = 1e-6) -> tuple[float, int]:
    """(relative error, parameter count) of analytic vs central-difference gradients, float64."""
    net = Network(spec, seed=seed, dtype=np.float64)
    _, _, grads = net.loss_and_grads(x, y, from_prefix=False)
    analytic, numeric = [], []
    for (offset, name), g in sorted(grads.items()):
        param = net.body[offset].params()[name]
        flat = param.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = net.loss_and_grads(x, y, from_prefix=False)[0]
            flat[j] = orig - eps
            lm = net.loss_and_grads(x, y, from_prefix=False)[0]
            flat[j] = orig
            numeric.append((lp - lm) / (2 * eps))
        analytic.extend(np.asarray(g, dtype=np.float64).reshape(-1))
    a, n = np.array(analytic), np.array(numeric)
    rel = float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))
    return rel, a.size


def cascade_oracles(plan: dict[str, dict[str, int]]):
    """Test manifest plus lookup stage models realising an exact routing plan.

    ``plan[true_class]`` maps final outcomes to counts: "normal" means stage 1
    keeps the sample (p_disease 0.1); a disease name means stage 1 routes it
    onward (p_disease 0.9) and stage 2 predicts that disease.
    """
    from covid_tsc.dataio import FOUR_CLASS, STAGE1, STAGE2, DatasetManifest, Sample
    from covid_tsc.model import LookupModel

    samples, p1, p2 = [], {}, {}
    for true, outcomes in plan.items():
        i = 0
        for outcome, n in outcomes.items():
            for _ in range(n):
                sid = f"{true}/{i:05d}"
                i += 1
                samples.append(Sample(sid, f"/none/{sid}.png", true))
                routed = outcome != "normal"
                p1[sid] = 0.9 if routed else 0.1
                # stage 2 always answers; it is only consulted for routed samples
                typed = outcome if routed else (true if true != "normal" else "covid")
                p2[sid] = [0.8 if c == typed else 0.1 for c in STAGE2.classes]
    test = DatasetManifest(FOUR_CLASS, tuple(sorted(samples, key=lambda s: s.id)))
    stage1 = LookupModel(STAGE1, p1, "binary")
    stage2 = LookupModel(STAGE2, p2, "multiclass")
    return test, stage1, stage2
