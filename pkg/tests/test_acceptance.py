"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The order ablation runs every order and fold count on seed 0 and the five-seed
trend on 3-fold; set ``LANE_INTRUSION_FULL_ACCEPTANCE=1`` to repeat the whole
grid for all five seeds.
"""

import itertools
import os
import statistics
import time

import numpy as np
import pytest
from scipy.special import log_softmax

from lane_intrusion.cli import main
from lane_intrusion.harness import TrainConfig, ablation_orders, ablation_preproc, crossval, evaluate, train, training_windows
from lane_intrusion.normalize import make_windows, series_from_frames
from lane_intrusion.psrnet import PSRNet, PSRNetConfig
from lane_intrusion.scenegen import LABELS, ScenarioConfig, render_detections, simulate_scene
from lane_intrusion.smoothing import KalmanConfig, kalman_init, kalman_smooth
from lane_intrusion.tracking import hungarian

from conftest import ACCEPTANCE_LINES, CLEAN_SENSOR
from gradcheck import kink_free_check

FULL = os.environ.get("LANE_INTRUSION_FULL_ACCEPTANCE") == "1"
SEEDS = (0, 1, 2, 3, 4)


def record(n, ok, detail, extra=()):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = [line, *(f"    {e}" for e in extra)]
    print(line)
    assert ok, line


def test_criterion_01_default_crossval(default_series):
    t0 = time.perf_counter()
    rep = crossval(default_series, 3)
    took = time.perf_counter() - t0
    ok = rep.mean >= 95.0 and rep.std <= 4.0 and took <= 600.0
    record(1, ok, f"3-fold accuracy {rep.summary()} % (need >= 95, std <= 4) in {took:.0f} s (limit 600 s)")


def test_criterion_02_gradients():
    t0 = time.perf_counter()
    worst, draws = 0.0, []
    for seed in SEEDS:
        errors, attempts = kink_free_check(
            lambda r: PSRNet(PSRNetConfig(), seed=int(r.integers(1 << 30))),
            lambda r: (r.normal(scale=0.5, size=(1, 24)), r.integers(0, 3, size=1)),
            seed=seed, eps=1e-5, min_margin=3e-5,
        )
        assert sum(e.size for e in errors.values()) == PSRNet(PSRNetConfig()).n_parameters
        worst = max(worst, max(float(e.max()) for e in errors.values()))
        draws.append(attempts)
    took = time.perf_counter() - t0
    ok = worst <= 1e-4 and took <= 60.0
    record(2, ok, f"max relative error {worst:.2e} over every parameter, 5 seeds (draws {draws}) in {took:.0f} s")


def _brute_force(c):
    rows, cols = c.shape
    best = None
    for perm in itertools.permutations(range(cols), rows):
        total = 0.0
        for i, j in enumerate(perm):
            total += c[i, j]
        best = total if best is None else min(best, total)
    return best


def _assignment_cost(c, assignment):
    total = 0.0
    for i in sorted(assignment):
        total += c[i, assignment[i]]
    return total


def test_criterion_03_hungarian():
    r = np.random.default_rng(3)
    bad = 0
    cases = [(6, 6)] * 1000 + [(5, 7)] * 500
    for n, (rows, cols) in enumerate(cases):
        # alternate integer costs (many ties) with continuous ones
        c = r.integers(0, 20, size=(rows, cols)).astype(float) if n % 2 else r.uniform(0, 100, size=(rows, cols))
        assignment, total = hungarian(c)
        if len(assignment) != rows or len(set(assignment.values())) != rows:
            bad += 1
        elif _assignment_cost(c, assignment) != _brute_force(c):
            bad += 1
    record(3, bad == 0, f"{len(cases) - bad}/{len(cases)} assignments equal the exhaustive minimum")


def test_criterion_04_kalman():
    t = np.arange(120)
    _, const = kalman_smooth(t, np.full(len(t), -3.25))
    _, ramp = kalman_smooth(t, 0.75 * t + 2.0)
    const_err = np.abs(const - (-3.25))
    ramp_err = np.abs(ramp - (0.75 * t + 2.0))
    # converged: the error stays below 1e-6 from some step to the end
    const_from = int(np.flatnonzero(const_err >= 1e-6).max(initial=-1)) + 1
    ramp_from = int(np.flatnonzero(ramp_err >= 1e-6).max(initial=-1)) + 1
    r = np.random.default_rng(4)
    init_ok = True
    for _ in range(2000):
        vals = r.normal(scale=50, size=3)
        if r.random() < 0.3:
            vals[r.integers(3)] = vals[r.integers(3)]
        s = kalman_init(vals, KalmanConfig())
        init_ok &= s.state[0] == statistics.median(vals.tolist()) and s.state[1] == 0.0
    ok = const_from < 60 and ramp_from < 60 and init_ok
    record(4, ok, f"constant within 1e-6 from step {const_from}, ramp from step {ramp_from}; median-of-three init exact: {init_ok}")


def test_criterion_05_view_invariance():
    r = np.random.default_rng(5)
    worst = {"normalized": 0.0, "filtered": 0.0}
    for i in range(200):
        label = LABELS[i % 3]
        yaw = np.deg2rad(r.uniform(-5.0, 5.0))
        offset = r.uniform(-1.0, 1.0)
        cfg = ScenarioConfig(label=label, yaw_profile=(yaw,) * 32, camera_offset_m=offset)
        scene = simulate_scene(cfg, seed=100 + i % 3)  # same trajectory per label
        oracle = scene.relative_positions()
        frames = render_detections(scene, CLEAN_SENSOR, seed=i)
        for variant in worst:
            s = series_from_frames(frames, variant)
            rms = float(np.sqrt(np.mean((s.values - oracle[s.frame_indices]) ** 2)))
            worst[variant] = max(worst[variant], rms)
    ok = max(worst.values()) <= 0.02
    record(5, ok, f"max RMS vs world oracle over 200 scenes: normalized {worst['normalized']:.2e}, filtered {worst['filtered']:.2e}")


def test_criterion_06_loss_identity(default_series):
    x, y = training_windows(default_series)
    res = train(x, y, TrainConfig(epochs=2), log_steps=True)
    worst = max(abs(s.total - (0.5 * sum(s.recon) + s.ce)) for s in res.steps)
    # components against an independent recomputation on one batch
    model, xb, yb = res.model, x[:32], y[:32]
    lb = model.loss(model.forward(xb), yb)
    cache = model.forward(xb)
    # order k is scored from step k on, where all k lags are real
    mse = [float(np.mean((cache["preds"][:, k - 1, k:] - xb[:, k:]) ** 2)) for k in range(1, 5)]
    ce = float(-np.mean(log_softmax(cache["logits"], axis=1)[np.arange(32), yb]))
    comp = max(max(abs(a - b) for a, b in zip(mse, lb.recon)), abs(ce - lb.ce), abs(lb.total - (0.5 * sum(mse) + ce)))
    ok = worst <= 1e-12 and comp <= 1e-12 and all(s.lam == 0.5 for s in res.steps)
    record(6, ok, f"{len(res.steps)} logged steps, max |total - (lam*sum L1k + L2)| = {worst:.1e}; recomputed components {comp:.1e}")


def test_criterion_07_order_trend(default_series, tmp_path):
    grid = ablation_orders(default_series, orders=(0, 1, 2, 3, 4), folds=(3, 5, 7), seeds=SEEDS if FULL else (0,))
    (tmp_path / "orders.csv").write_text(grid.to_csv())
    lines = grid.to_csv().splitlines()
    emitted = len(lines) == 6 and all(len(row.split(",")) == 8 for row in lines)
    if FULL:
        trend = {n: grid.row_mean(n) for n in (0, 4)}
        scope = "all fold counts"
    else:
        trend = {}
        for n in (0, 4):
            means = [grid.cell(n, 3)[0]]
            for s in SEEDS[1:]:
                means.append(crossval(default_series, 3, TrainConfig(seed=s), PSRNetConfig(n_orders=n)).mean)
            trend[n] = float(np.mean(means))
        scope = "3-fold"
    ok = emitted and trend[4] >= trend[0] - 1.0
    record(
        7, ok,
        f"5-seed {scope} mean: order 4 {trend[4]:.1f} % vs order 0 {trend[0]:.1f} % (need >= order 0 - 1); 5x3 grid emitted: {emitted}",
        grid.table().splitlines(),
    )


def test_criterion_08_preproc_trend(default_samples):
    grid = ablation_preproc(default_samples, folds=(3,), seeds=(0,))
    m = {v: grid.cell(v, 3)[0] for v in grid.rows}
    ok = m["filtered"] >= m["normalized"] - 1.0 and m["normalized"] >= m["raw"] - 1.0 and m["normalized"] - m["raw"] >= 10.0
    record(8, ok, f"3-fold accuracy filtered {m['filtered']:.1f} %, normalized {m['normalized']:.1f} %, raw {m['raw']:.1f} %", grid.table().splitlines())


def test_criterion_09_determinism(default_dataset, tmp_path, capsys):
    outs = [tmp_path / "run1", tmp_path / "run2"]
    codes = [main(["crossval", "--data", str(default_dataset), "--out-dir", str(d)]) for d in outs]
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    ok = codes == [0, 0] and len(names) >= 2 and same == names
    record(9, ok, f"{len(same)}/{len(names)} metric CSVs byte-identical across two crossval runs")


def test_criterion_10_checkpoint(default_series, tmp_path):
    x, y = training_windows(default_series)
    model = train(x, y, TrainConfig(epochs=3)).model
    windows = np.vstack([make_windows(s, stride=1) for s in default_series])[:1000]
    path = tmp_path / "model.json"
    model.save(path)
    loaded = PSRNet.load(path)
    a, b = model.predict_proba(windows), loaded.predict_proba(windows)
    labels = np.zeros(len(windows), dtype=int)
    same_report = evaluate(model, (windows, labels)).confusion.tolist() == evaluate(loaded, (windows, labels)).confusion.tolist()
    ok = len(windows) == 1000 and np.array_equal(a, b) and same_report
    record(10, ok, f"{len(windows)} windows, identical probabilities after save/load: {np.array_equal(a, b)}")
