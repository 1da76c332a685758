"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-8 are exact property checks. Criteria 9-15 are scaled-down
reproductions on the default configuration over seeds 0-4. The trained
models are shared through session fixtures, so every flow is trained
exactly once per seed and strategy.
"""

import itertools
import time

import numpy as np
import pytest

from flowda import codec as C
from flowda import config as cfgmod
from flowda import evaluation as E
from flowda import io
from flowda import pipeline
from flowda import velocity as V
from flowda.coupling import DATA_DEPENDENT, INDEPENDENT, MINIBATCH_OT, STRATEGIES, couple_minibatch_ot, plan_cost
from flowda.interpolant import conditional_velocity, interpolate, make_training_point
from flowda.sampler import BACKWARD, FORWARD, integrate, linear_schedule, sigmoid_schedule

SEEDS = (0, 1, 2, 3, 4)
SWEEP = (10, 25, 50)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return emit


def run_config(seed, weak_p=0.0):
    cfg = cfgmod.RunConfig()
    cfg = cfgmod.set_key(cfg, "data.seed", seed)
    cfg = cfgmod.set_key(cfg, "train.seed", seed)
    return cfgmod.set_key(cfg, "data.weak_p", weak_p)


class TrainCounter:
    """Wraps the pipeline's trainer to count every flow trained in the run."""

    def __init__(self):
        self.calls = 0
        self._orig = None

    def __enter__(self):
        self._orig = pipeline.train

        def counted(*args, **kwargs):
            self.calls += 1
            return self._orig(*args, **kwargs)

        pipeline.train = counted
        return self

    def __exit__(self, *exc):
        pipeline.train = self._orig


@pytest.fixture(scope="session")
def strong_runs():
    runs = {}
    with TrainCounter() as counter:
        for seed in SEEDS:
            t0 = time.time()
            cfg = run_config(seed)
            res = pipeline.run_coupling_ablation(cfg, sweep=SWEEP, sweep_strategies=(DATA_DEPENDENT,))
            runs[seed] = (res, time.time() - t0)
            print(f"\n[seed {seed}] {time.time() - t0:.0f}s\n{res.table()}")
    return runs, counter.calls


@pytest.fixture(scope="session")
def weak_runs():
    runs = {}
    for seed in SEEDS:
        t0 = time.time()
        cfg = run_config(seed, weak_p=0.2)
        res = pipeline.run_coupling_ablation(cfg, strategies=(DATA_DEPENDENT,), directions=(FORWARD,))
        runs[seed] = (res, time.time() - t0)
    return runs


def fwd(res, strategy):
    return next(r for r in res.rows if r["strategy"] == strategy and r["direction"] == FORWARD)


# -- property suites ------------------------------------------------------------

def test_criterion_01_interpolant(verdict):
    rng = np.random.default_rng(1)
    worst_fd, worst_lin, exact = 0.0, 0.0, True
    h = 1e-6
    for _ in range(200):
        d = int(rng.integers(1, 9))
        z0, z1 = rng.normal(size=d) * 3, rng.normal(size=d) * 3
        exact &= np.array_equal(interpolate(z0, z1, 0.0), z0) and np.array_equal(interpolate(z0, z1, 1.0), z1)
        a, t = rng.normal() * 5, rng.uniform(h, 1 - h)
        ref = a * interpolate(z0, z1, t)
        worst_lin = max(worst_lin, np.max(np.abs(interpolate(a * z0, a * z1, t) - ref))
                        / (np.finfo(float).eps * (1 + np.max(np.abs(ref)))))
        fd = (interpolate(z0, z1, t + h) - interpolate(z0, z1, t - h)) / (2 * h)
        u = conditional_velocity(z0, z1)
        worst_fd = max(worst_fd, np.linalg.norm(fd - u) / np.linalg.norm(u))
        p = make_training_point(z0, z1, t)
        exact &= np.array_equal(p.target_velocity, u)
    ok = exact and worst_lin <= 16 and worst_fd < 1e-6
    verdict(1, ok, f"endpoints exact={exact}, linearity {worst_lin:.1f} eps, path derivative rel err {worst_fd:.2e}")


def test_criterion_02_ot_brute_force(verdict):
    rng = np.random.default_rng(2)
    failures, trials = 0, 0
    for n in range(1, 7):
        perms = np.array(list(itertools.permutations(range(n))))
        for _ in range(100):
            b0, b1 = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            costs = np.array([plan_cost(b0, b1, p) for p in perms])
            best = perms[np.argmin(costs)]
            plan = couple_minibatch_ot(b0, b1)
            same_cost = np.isclose(plan.cost, costs.min(), rtol=1e-12, atol=1e-14)
            same_plan = np.array_equal(plan.pairing, best) or np.isclose(
                plan_cost(b0, b1, plan.pairing), plan_cost(b0, b1, best), rtol=1e-12, atol=1e-14)
            failures += not (same_cost and same_plan)
            trials += 1
    verdict(2, failures == 0, f"{trials - failures}/{trials} trials match the brute-force optimum (n=1..6)")


def test_criterion_03_gradient_check(verdict):
    rng = np.random.default_rng(3)
    model = V.init_model(3, (6, 5), 4, seed=3)
    for p in model.params:
        p += 0.3 * rng.normal(size=p.shape)
    pts = [make_training_point(rng.normal(size=3), rng.normal(size=3), rng.random()) for _ in range(8)]
    analytic = V.grad(model, pts)
    h, worst, count = 1e-5, 0.0, 0
    for p, g in zip(model.params, analytic):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = V.fm_loss(model, pts)
            p[idx] = old - h
            down = V.fm_loss(model, pts)
            p[idx] = old
            num = (up - down) / (2 * h)
            rel = abs(num - g[idx]) / max(1e-8, abs(num), abs(g[idx]))
            worst = max(worst, rel)
            count += 1
    verdict(3, worst < 1e-4, f"{count} parameters, max rel err {worst:.2e}")


def test_criterion_04_sigmoid_schedule(verdict):
    checks = {}
    grids = [(n, k, sigmoid_schedule(n, k).times) for n in (1, 2, 5, 10, 25, 50, 101) for k in (0.5, 1, 5, 10, 20)]
    checks["endpoints"] = all(t[0] == 0.0 and t[-1] == 1.0 for _, _, t in grids)
    checks["monotone"] = all(np.all(np.diff(t) > 0) for _, _, t in grids)
    sym = max(np.max(np.abs(t + t[::-1] - 1)) for _, _, t in grids)
    checks["symmetry"] = bool(sym <= 1e-12)
    lim = max(np.max(np.abs(sigmoid_schedule(n, 1e-6).times - np.linspace(0, 1, n + 1))) for n in (4, 10, 50))
    checks["kappa->0"] = bool(lim < 1e-6)
    first = [sigmoid_schedule(50, k).times[1] for k in (0.0, 0.01, 0.5, 1, 2, 5, 10, 15, 20, 30)]
    checks["first step decreasing"] = bool(np.all(np.diff(first) < 0))
    verdict(4, all(checks.values()), f"{checks}, symmetry err {sym:.1e}, limit err {lim:.1e}")


def test_criterion_05_euler(verdict):
    rng = np.random.default_rng(5)
    worst_const = 0.0
    for grid in (linear_schedule(7), sigmoid_schedule(50, 10.0), sigmoid_schedule(13, 3.0)):
        z, c = rng.normal(size=(4, 3)), rng.normal(size=3)
        out, _ = integrate(lambda t, x: np.broadcast_to(c, x.shape), z, grid)
        worst_const = max(worst_const, np.max(np.abs(out - (z + c))))
    errs = {n: abs(integrate(lambda t, z: z, np.array([1.0]), linear_schedule(n))[0][0] - np.e)
            for n in (25, 50, 100, 200, 400)}
    ratios = [errs[n] / errs[2 * n] for n in (25, 50, 100, 200)]
    ok = worst_const < 1e-14 and all(1.6 <= r <= 2.4 for r in ratios)
    verdict(5, ok, f"constant-field err {worst_const:.1e}, N/2N error ratios {np.round(ratios, 3).tolist()}")


def test_criterion_06_ema_and_clip(verdict):
    rng = np.random.default_rng(6)
    ema_ok = True
    for decay in (0.0, 0.5, 0.9, 0.999):
        p = [rng.normal(size=(3, 4)), rng.normal(size=4)]
        e = [rng.normal(size=(3, 4)), rng.normal(size=4)]
        gap0 = [np.abs(a - b) for a, b in zip(e, p)]
        for k in range(1, 51):
            V.ema_update(e, p, decay)
            for a, b, g in zip(e, p, gap0):
                ema_ok &= np.allclose(np.abs(a - b), decay**k * g, rtol=1e-9, atol=1e-15)
    clip_ok = True
    for _ in range(500):
        g = [rng.normal(size=(3, 2)) * rng.uniform(1e-3, 10), rng.normal(size=5) * rng.uniform(1e-3, 10)]
        c = rng.uniform(0.05, 5)
        out = V.clip_gradients(g, c)
        n_in = V.global_norm(g)
        if n_in <= c:
            clip_ok &= all(np.array_equal(a, b) for a, b in zip(g, out))
        else:
            clip_ok &= all(np.allclose(b, a * (c / n_in), rtol=1e-13, atol=0) for a, b in zip(g, out))
            clip_ok &= np.isclose(V.global_norm(out), c, rtol=1e-12)
    clip_ok &= np.allclose(V.clip_gradients([np.array([3.0, 4.0])], 1.0)[0], [0.6, 0.8], rtol=1e-15)
    verdict(6, ema_ok and clip_ok, f"EMA contraction={ema_ok}, clip contract={clip_ok}")


def test_criterion_07_determinism(tmp_path, verdict):
    from flowda import cli

    cfg_text = "data: {n: 512, n_test: 64, seed: 7}\ntrain: {total_steps: 60, seed: 7}\n"
    (tmp_path / "c.yaml").write_text(cfg_text)
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["gen-data", "--config", str(tmp_path / "c.yaml"), "--out", str(out)]) == 0
        assert cli.main(["train", "--config", str(tmp_path / "c.yaml"), "--out", str(out),
                         "--coupling", MINIBATCH_OT]) == 0
        blobs.append((out / "checkpoint.flow").read_bytes())
    ck = io.load_checkpoint(tmp_path / "a" / "checkpoint.flow")
    io.save_checkpoint(tmp_path / "resaved.flow", ck)
    resaved = (tmp_path / "resaved.flow").read_bytes()
    ok = blobs[0] == blobs[1] and resaved == blobs[0] and ck.state.step == 60
    verdict(7, ok, f"two runs identical={blobs[0] == blobs[1]}, save/load/save identical={resaved == blobs[0]}, "
                   f"{len(blobs[0])} bytes")


def test_criterion_08_metrics(verdict):
    fd = {
        "equal sets": E.fd_gaussian(np.arange(10.0), np.arange(10.0)),
        "means 0/1 var 1/1": E.frechet_from_moments(0.0, 1.0, 1.0, 1.0),
        "means 0/0 var 1/4": E.frechet_from_moments(0.0, 1.0, 0.0, 4.0),
        "means 2/-1 var 9/1": E.frechet_from_moments(2.0, 9.0, -1.0, 1.0),
    }
    expected = {"equal sets": 0.0, "means 0/1 var 1/1": 1.0, "means 0/0 var 1/4": 1.0,
                "means 2/-1 var 9/1": 9.0 + (3.0 - 1.0) ** 2}
    fd_ok = all(abs(fd[k] - expected[k]) <= 1e-9 for k in fd)
    counts = [
        E.miou([0, 0, 1, 1], [0, 0, 1, 1], 2) == 1.0,
        E.miou([0, 0, 0, 0], [0, 0, 1, 1], 2) == 0.25,
        E.miou([1, 1], [0, 0], 2) == 0.0,
        E.miou([0, 2, 2, 1], [0, 2, 1, 1], 3) == (1 + 0.5 + 0.5) / 3,
        E.mean_accuracy([0, 1, 1, 1], [0, 0, 1, 1], 2) == 0.75,
        E.mean_accuracy([1, 1, 0, 0], [0, 0, 1, 1], 2) == 0.0,
        E.mean_accuracy([0, 0, 1, 1], [0, 0, 1, 1], 2) == 1.0,
    ]
    verdict(8, fd_ok and all(counts), f"fd closed forms {fd_ok}, hand-counted miou/mAcc {sum(counts)}/{len(counts)}")


# -- scaled-down reproductions -------------------------------------------------------

def test_criterion_09_coupling_ordering(strong_runs, verdict):
    runs, _ = strong_runs
    passes, lines = 0, []
    for seed, (res, _) in runs.items():
        dd, ot, ind = (fwd(res, s) for s in (DATA_DEPENDENT, MINIBATCH_OT, INDEPENDENT))
        ok = (dd["miou"] > ot["miou"] >= ind["miou"] and dd["miou"] - ind["miou"] >= 0.05
              and dd["fd_gaussian"] < ind["fd_gaussian"])
        passes += ok
        lines.append(f"seed {seed}: mIoU DD {100 * dd['miou']:.1f} OT {100 * ot['miou']:.1f} "
                     f"Ind {100 * ind['miou']:.1f}, FD DD {dd['fd_gaussian']:.3f} Ind {ind['fd_gaussian']:.3f}"
                     f" -> {'ok' if ok else 'no'}")
    verdict(9, passes >= 4, f"{passes}/5 seeds\n    " + "\n    ".join(lines))


def test_criterion_10_adaptation_gain(strong_runs, verdict):
    runs, _ = strong_runs
    passes, lines = 0, []
    for seed, (res, _) in runs.items():
        r = fwd(res, DATA_DEPENDENT)
        ok = r["miou"] - r["no_adapt_miou"] >= 0.10 and r["miou"] <= r["upper_miou"]
        passes += ok
        lines.append(f"seed {seed}: no-adapt {100 * r['no_adapt_miou']:.1f} adapted {100 * r['miou']:.1f} "
                     f"upper {100 * r['upper_miou']:.1f}")
    verdict(10, passes >= 4, f"{passes}/5 seeds\n    " + "\n    ".join(lines))


def test_criterion_11_weak_alignment(weak_runs, verdict):
    passes, lines = 0, []
    for seed, (res, _) in weak_runs.items():
        r = fwd(res, DATA_DEPENDENT)
        ok = r["miou"] - r["no_adapt_miou"] >= 0.05
        passes += ok
        lines.append(f"seed {seed}: no-adapt {100 * r['no_adapt_miou']:.1f} adapted {100 * r['miou']:.1f}")
    verdict(11, passes >= 4, f"{passes}/5 seeds (weak_p=0.2)\n    " + "\n    ".join(lines))


def test_criterion_12_quality_proxy(strong_runs, verdict):
    runs, _ = strong_runs
    vals = {seed: (fwd(res, DATA_DEPENDENT)["fd_gaussian"], fwd(res, DATA_DEPENDENT)["no_adapt_fd"])
            for seed, (res, _) in runs.items()}
    ok = all(a < b for a, b in vals.values())
    detail = ", ".join(f"seed {s}: {a:.3f} < {b:.3f}" for s, (a, b) in vals.items())
    verdict(12, ok, f"fd(translated, x1) vs fd(x0, x1): {detail}")


def test_criterion_13_schedule(strong_runs, verdict):
    runs, _ = strong_runs
    gaps = {n: [] for n in SWEEP}
    at10 = True
    for seed, (res, _) in runs.items():
        by = {(r["steps"], r["schedule"]): r["miou"] for r in res.sweep if r["strategy"] == DATA_DEPENDENT}
        for n in SWEEP:
            gaps[n].append(100 * (by[(n, "sigmoid")] - by[(n, "linear")]))
        at10 &= by[(10, "sigmoid")] >= by[(10, "linear")] - 0.005
    mean_gap = [float(np.mean(gaps[n])) for n in SWEEP]
    non_increasing = all(b <= a for a, b in zip(mean_gap, mean_gap[1:]))
    per_seed = {n: np.round(gaps[n], 2).tolist() for n in SWEEP}
    verdict(13, at10 and non_increasing,
            f"N=10 sigmoid >= linear - 0.5 on every seed: {at10}; seed-mean gap (points) "
            f"{dict(zip(SWEEP, [round(g, 3) for g in mean_gap]))} non-increasing: {non_increasing}; per seed {per_seed}")


def test_criterion_14_decoder_refit(verdict):
    from flowda import synthdata as S

    train = S.gen_shapes_pair(2048, seed=0)
    test = S.gen_shapes_pair(512, seed=0, split="test")
    codec = C.fit_pca(np.vstack([train.x0, train.x1]), 32)
    shifted_tr, shifted_te = 10.0 * train.x1, 10.0 * test.x1
    before = C.reconstruction_rmse(codec, shifted_te)
    after = C.reconstruction_rmse(C.refit_decoder(codec, shifted_tr), shifted_te)
    # in-distribution: the pooled distribution the codec was fit on, scored on held-out rows
    pooled_tr, pooled_te = np.vstack([train.x0, train.x1]), np.vstack([test.x0, test.x1])
    in_before = C.reconstruction_rmse(codec, pooled_te)
    in_after = C.reconstruction_rmse(C.refit_decoder(codec, pooled_tr), pooled_te)
    change = abs(in_after - in_before) / in_before
    ok = after < before and change < 0.01
    verdict(14, ok, f"x10 range: RMSE {before:.4f} -> {after:.4f}; in-distribution: {in_before:.5f} -> "
                    f"{in_after:.5f} ({100 * change:.2f}% change)")


def test_criterion_15_bidirectional_single_model(strong_runs, verdict):
    runs, train_calls = strong_runs
    ok = train_calls == len(SEEDS) * len(STRATEGIES)
    details = []
    for seed, (res, _) in runs.items():
        for strategy in STRATEGIES:
            rows = [r for r in res.rows if r["strategy"] == strategy]
            dirs = sorted(r["direction"] for r in rows)
            models = {r["model"] for r in rows}
            ok &= dirs == [BACKWARD, FORWARD] and len(models) == 1
            ok &= pipeline.model_digest(res.states[strategy]) in models
        ok &= res.trained == len(STRATEGIES)
        back = [r for r in res.rows if r["direction"] == BACKWARD and r["strategy"] == DATA_DEPENDENT][0]
        details.append(f"seed {seed}: DD backward mIoU {100 * back['miou']:.1f} "
                       f"(no-adapt {100 * back['no_adapt_miou']:.1f})")
    verdict(15, ok, f"{train_calls} flows trained for {len(SEEDS)} seeds x {len(STRATEGIES)} strategies; "
                    "each scored in both directions from one checkpoint\n    " + "\n    ".join(details))


def test_timing_budget(strong_runs, weak_runs, capsys):
    runs, _ = strong_runs
    with capsys.disabled():
        per_seed = [t for _, t in runs.values()]
        weak = [t for _, t in weak_runs.values()]
        print(f"\ntiming: strong ablation {sum(per_seed) / 60:.1f} min over 5 seeds "
              f"({np.round(per_seed).tolist()} s); weak runs {sum(weak) / 60:.1f} min")
