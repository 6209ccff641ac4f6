"""Acceptance suite: one test, and one PASS/FAIL line, per criterion.

Benchmark criteria read ETTh2.csv and WTH.csv from ``$ODESTREAM_DATA_DIR``
(default: ``<repo>/data``).  A missing file fails the criterion with a
message naming the file; nothing is skipped.
"""

from __future__ import annotations

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from adwin_reference import brute_force_adwin
from conftest import data_dir, record
from gradcheck import check
from odestream import autodiff as ad
from odestream.data import synthesize
from odestream.drift import detect_drifts
from odestream.layers import DynamicsNet, GruCell, Linear, LstmCell
from odestream.model import LatentDistribution, ModelConfig, OdeStreamModel
from odestream.odesolver import integrate
from odestream.pipeline import (RunConfig, ablation_configs, post_shift_rolling_mse, prepare, run_experiment,
                                stream, warmup)
from odestream.stream import run_stream
from odestream.training import kl_loss, l1_loss, reconstruction_loss, regular_grid


# -- 1 ---------------------------------------------------------------------------

def _layer_losses(seed: int):
    rng = np.random.default_rng(seed)
    d_in, hid = 3, 4
    x = ad.Tensor(rng.normal(size=(2, d_in)))
    h0 = ad.Tensor(rng.normal(size=(2, hid)) * 0.5)
    c0 = ad.Tensor(rng.normal(size=(2, hid)) * 0.5)
    w_out = rng.normal(size=(2, hid))

    lin = Linear(d_in, hid, rng, "lin")
    gru = GruCell(d_in, hid, rng, "gru")
    lstm = LstmCell(d_in, hid, rng, "lstm")
    dyn = DynamicsNet(hid, 5, rng, "dyn")
    for layer in (lin, gru, lstm, dyn):  # non-zero biases so their gradients are exercised
        for name, p in layer.parameters().items():
            if name.endswith("bias"):
                p.data = rng.normal(size=p.shape) * 0.3
    proj = ad.Tensor(w_out)

    def weighted(y):
        return ad.sum_(y * proj)

    cases = [
        ("linear", lambda: weighted(lin(x)), [x, *lin.parameters().values()]),
        ("gru", lambda: weighted(gru(x, h0)), [x, h0, *gru.parameters().values()]),
        ("lstm", lambda: (lambda hc: weighted(hc[0]) + ad.sum_(ad.square(hc[1])))(lstm(x, h0, c0)),
         [x, h0, c0, *lstm.parameters().values()]),
        ("dynamics", lambda: weighted(dyn(h0, 0.3)), [h0, *dyn.parameters().values()]),
    ]
    return cases


def _full_warmup_loss(seed: int):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(input_dim=2, hidden_dim=4, latent_dim=3, lag=4, dynamics_width=5, seed=seed)
    model = OdeStreamModel(cfg)
    for name, p in model.parameters().items():
        if name.endswith("bias"):
            p.data = rng.normal(size=p.shape) * 0.1
    batch = rng.normal(size=(3, cfg.lag, cfg.input_dim))
    eps = rng.normal(size=(3, cfg.latent_dim))
    grid = regular_grid(cfg.lag)
    def loss():
        return reconstruction_loss(model, batch, eps, grid)[0]

    return loss, list(model.warmup_parameters().values())


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    worst_layer = worst_full = 0.0
    for seed in range(50):
        for _, fn, tensors in _layer_losses(seed):
            worst_layer = max(worst_layer, check(fn, tensors, rtol=1e-4))
        fn, tensors = _full_warmup_loss(seed)
        worst_full = max(worst_full, check(fn, tensors, rtol=1e-3, max_entries=6,
                                           rng=np.random.default_rng(seed)))
    elapsed = time.perf_counter() - t0
    ok = worst_layer <= 1.0 and worst_full <= 1.0 and elapsed < 60
    record(1, ok, f"50 seeds, worst error/tolerance layers {worst_layer:.3g}, full loss {worst_full:.3g}, "
                  f"{elapsed:.1f}s (< 60s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------

def test_criterion_02_euler_oracle():
    def f(z, t):
        return -z

    def solve(step):
        return integrate(f, ad.Tensor([1.0]), [0.0, 1.0], step)[-1].item()

    z = solve(0.05)
    err1 = abs(z - math.exp(-1))
    err2 = abs(solve(0.025) - math.exp(-1))
    ratio = err2 / err1
    ok = abs(z - 0.95 ** 20) <= 1e-9 and err1 <= 0.012 and 0.4 <= ratio <= 0.6
    record(2, ok, f"z(1)={z:.12f} vs 0.95^20 diff {abs(z - 0.95 ** 20):.1e}, |z-e^-1|={err1:.5f}, "
                  f"halving ratio {ratio:.3f} (0.5 +/- 20%)")
    assert ok


# -- 3 ---------------------------------------------------------------------------

def test_criterion_03_loss_units():
    zero = kl_loss(LatentDistribution(ad.Tensor([0.0]), ad.Tensor([0.0]))).item()
    half = kl_loss(LatentDistribution(ad.Tensor([1.0]), ad.Tensor([0.0]))).item()
    l1 = l1_loss(ad.Tensor([1.0, -2.0, 3.0])).item()
    ok = abs(zero) <= 1e-12 and abs(half - 0.5) <= 1e-12 and abs(l1 - 0.06) <= 1e-12
    record(3, ok, f"kl(0,0)={zero!r}, kl(1,0)={half!r}, l1([1,-2,3])={l1!r}")
    assert ok


# -- 4 ---------------------------------------------------------------------------

def test_criterion_04_prequential_buffer_free():
    """Structural invariants; they do not depend on width, so a narrow model keeps this fast."""
    ds = synthesize("sine", 10_000, {"noise": 0.1}, seed=4)
    cfg = ModelConfig(input_dim=1, hidden_dim=8, latent_dim=4, lag=24, dynamics_width=8)
    model = OdeStreamModel(cfg)

    recording_at_predict = []
    original = model.forecast

    def watched(window, grid, state, eps=None, **kw):
        if eps is None:
            recording_at_predict.append(ad.is_recording())
        return original(window, grid, state, eps, **kw)

    model.forecast = watched
    rep = run_stream(model, ds, horizon=1, seed=0, instrument=True)
    inst = rep.instrumentation

    visits_ok = bool(np.all(inst.visit_counts == 1)) and inst.visit_counts.size == 10_000
    first_seen: dict[tuple[str, int], int] = {}
    for pos, (kind, j, _) in enumerate(inst.events):
        first_seen.setdefault((kind, j), pos)
    order_ok = all(first_seen[("predict", s.index)] < first_seen[("truth", s.index)] for s in rep.steps)
    hash_ok = all(h == s.pred_hash for (kind, _, h), s in
                  zip([e for e in inst.events if e[0] == "truth"], rep.steps))
    no_tape_ok = not any(recording_at_predict) and len(recording_at_predict) == len(rep.steps)
    sizes = np.array(inst.retained_sizes)
    size_ok = sizes.size == len(rep.steps) and int(sizes.max() - sizes.min()) == 0
    ok = visits_ok and order_ok and hash_ok and no_tape_ok and size_ok and len(rep.steps) == 10_000 - 24
    record(4, ok, f"{len(rep.steps)} steps; visits==1 {visits_ok}, predict-before-truth {order_ok}, "
                  f"hash match {hash_ok}, untaped predictions {no_tape_ok}, "
                  f"retained size {sizes.min()}..{sizes.max()}")
    assert ok


# -- 5 ---------------------------------------------------------------------------

MEAN_SHIFT_LENGTH = 2000
MEAN_SHIFT_AT = MEAN_SHIFT_LENGTH // 2


def _mean_shift_spec(seed: int) -> str:
    # mean 0 -> 1 at the midpoint, noise scale 0.1
    return f"synthetic:mean_shift:{MEAN_SHIFT_LENGTH}:at={MEAN_SHIFT_AT},before=0,after=1,sigma=0.1,seed={seed}"


def test_criterion_05_adaptation_property():
    t0 = time.perf_counter()
    wins, details = 0, []
    for seed in range(5):
        cfg = RunConfig(data=_mean_shift_spec(seed), task="uni2uni", seed=seed).validate()
        prep = prepare(cfg)
        model, _ = warmup(cfg, prep)
        frozen_model = OdeStreamModel(model.config)
        frozen_model.load_state_dict(model.state_dict())
        shift_step = MEAN_SHIFT_AT - len(prep.train)
        online = post_shift_rolling_mse(stream(model, cfg, prep, "odestream", annotate=False), shift_step)
        frozen = post_shift_rolling_mse(stream(frozen_model, cfg, prep, "frozen", annotate=False), shift_step)
        gain = 1.0 - online / frozen
        wins += gain >= 0.30
        details.append(f"{gain:.0%}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 4 and elapsed < 300
    record(5, ok, f"post-shift rolling-MSE reduction vs frozen per seed {details}; {wins}/5 >= 30%; {elapsed:.0f}s")
    assert ok


# -- 6, 7, 8: benchmark files ------------------------------------------------------

def _dataset(name: str, criterion: int) -> Path:
    path = data_dir() / name
    if not path.exists():
        record(criterion, False, f"dataset missing: {path} (set ODESTREAM_DATA_DIR)")
        pytest.fail(f"{name} not found in {data_dir()}; criterion {criterion} cannot be evaluated")
    return path


def test_criterion_06_ablation_direction():
    path = _dataset("ETTh2.csv", 6)
    holds, details = 0, []
    for seed in range(3):
        base = RunConfig(data=str(path), task="multi2uni", seed=seed)
        variants = ablation_configs(base)
        full = run_experiment(variants["odestream"])[0].cumulative_mse
        no_til = run_experiment(variants["no_til_mse_kl"])[0].cumulative_mse
        holds += full < no_til
        details.append(f"{full:.4f} vs {no_til:.4f}")
    ok = holds >= 2
    record(6, ok, f"ETTh2 multi2uni full vs no-TIL (MSE+KL) per seed {details}; {holds}/3 hold")
    assert ok


BENCHMARKS = {"ETTh2.csv": (0.164, 6.681), "WTH.csv": (0.0441, 0.3096)}


@pytest.mark.parametrize("name", list(BENCHMARKS))
def test_criterion_07_benchmark_bracket(name):
    published, fsnet = BENCHMARKS[name]
    path = _dataset(name, 7)
    t0 = time.perf_counter()
    mse = run_experiment(RunConfig(data=str(path), task="multi2uni"))[0].cumulative_mse
    elapsed = time.perf_counter() - t0
    ok = mse <= 3 * published and mse < fsnet and elapsed <= 1800
    record(7, ok, f"{name}: cumulative MSE {mse:.4f} (<= {3 * published:.4f} and < {fsnet}), {elapsed:.0f}s")
    assert ok


def test_criterion_08_irregularity_robustness():
    path = _dataset("ETTh2.csv", 8)
    cfg = RunConfig(data=str(path), task="multi2uni")
    regular = run_experiment(cfg)[0].cumulative_mse
    irregular = run_experiment(cfg.replace(cutout=0.3))[0].cumulative_mse
    gap = abs(irregular - regular)
    ok = gap <= 0.05
    record(8, ok, f"ETTh2 regular {regular:.4f}, 30% cutout {irregular:.4f}, |diff| {gap:.4f} (<= 0.05)")
    assert ok


# -- 9 ---------------------------------------------------------------------------

ADWIN_SIGMA = 0.1  # noise scale of the drift oracles


def test_criterion_09_adwin_oracle():
    constant_flags = len(detect_drifts(np.full(10_000, 3.25)))

    detected, delays = 0, []
    for seed in range(20):
        x = synthesize("mean_shift", 10_000, {"at": 5000, "sigma": ADWIN_SIGMA}, seed=seed).values[:, 0]
        flags = [f for f in detect_drifts(x) if f >= 5000]
        if flags and flags[0] - 5000 < 500:
            detected += 1
            delays.append(flags[0] - 5000)

    false_alarms = [len(detect_drifts(np.random.default_rng(100 + s).normal(0.0, ADWIN_SIGMA, 10_000)))
                    for s in range(20)]

    rng = np.random.default_rng(9)
    agree = True
    for n in (2000, 800, 300):
        seq = np.concatenate([rng.normal(0, ADWIN_SIGMA, n // 2), rng.normal(0.3, ADWIN_SIGMA, n - n // 2)])
        agree &= detect_drifts(seq) == brute_force_adwin(seq)
    ramp = np.linspace(0, 1, 1500) + rng.normal(0, ADWIN_SIGMA, 1500)
    agree &= detect_drifts(ramp) == brute_force_adwin(ramp)
    capped = np.concatenate([rng.normal(0, ADWIN_SIGMA, 150), rng.normal(0.5, ADWIN_SIGMA, 150)])
    agree &= detect_drifts(capped, max_window=60) == brute_force_adwin(capped, max_window=60)

    ok = constant_flags == 0 and detected >= 19 and max(false_alarms) <= 5 and agree
    record(9, ok, f"constant flags {constant_flags}; detected {detected}/20 within 500 "
                  f"(median delay {np.median(delays) if delays else float('nan'):.0f}); "
                  f"max false alarms per 10k over 20 seeds {max(false_alarms)}; brute-force agreement {agree}")
    assert ok


# -- 10 --------------------------------------------------------------------------

def _cli(cwd: Path, *args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "odestream", *args], cwd=cwd, capture_output=True, text=True)


def _numeric_leaves(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _numeric_leaves(obj[k], f"{prefix}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _numeric_leaves(v, f"{prefix}[{i}]")
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        yield prefix, repr(obj)


def test_criterion_10_determinism(tmp_path):
    import json

    args = ["--data", "synthetic:sine:700:noise=0.1,seed=3", "--task", "uni2uni", "--seed", "7",
            "--hidden-dim", "16", "--latent-dim", "8", "--max-epochs", "4", "--out-dir", "runs", "--run-id", "r"]
    runs = []
    for name in ("a", "b"):
        cwd = tmp_path / name
        cwd.mkdir()
        w = _cli(cwd, "warmup", *args)
        s = _cli(cwd, "stream", *args[:-1], "s")
        c = _cli(cwd, "baseline", "--method", "frozen", "--checkpoint", "runs/r/checkpoint.odes", *args[:-1], "f")
        assert w.returncode == s.returncode == c.returncode == 0, w.stderr + s.stderr + c.stderr
        runs.append(cwd / "runs")
    a, b = runs
    files = ["r/checkpoint.odes", "s/checkpoint.odes", "s/final.odes", "f/final.odes"]
    ckpt_same = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    summaries = ["r/summary.json", "s/summary.json", "f/summary.json"]
    bytes_same = all((a / f).read_bytes() == (b / f).read_bytes() for f in summaries)
    leaves_same = all(list(_numeric_leaves(json.loads((a / f).read_text()))) ==
                      list(_numeric_leaves(json.loads((b / f).read_text()))) for f in summaries)
    ok = ckpt_same and bytes_same and leaves_same
    record(10, ok, f"rerun of warmup/stream/baseline: checkpoints identical {ckpt_same}, "
                   f"summary.json byte-identical {bytes_same}, numeric fields identical {leaves_same}")
    assert ok
