"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  The heavy criteria (full-size training, ranking, calibration) sit at
the end; the whole module is budgeted for roughly half an hour on one core.
"""

import itertools
import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from dropbench import synthetic
from dropbench.attribution import (AttributionParams, build_players,
                                   completeness_gap, exact_shapley_values,
                                   gradient_based, kernel_shap_values,
                                   oracle_attribution, random_control,
                                   shapley_based, svs_player_values)
from dropbench.autodiff import (Graph, LayerSpec, backward_batch, forward_batch,
                                save_checkpoint)
from dropbench.classifier import (DatasetSplits, TrainConfig, predict_probabilities,
                                  train)
from dropbench.config import load_config
from dropbench.corruption import CorruptionPlan, run_corruption
from dropbench.distshape import (build_distribution, classify_shape,
                                 excess_kurtosis, skewness)
from dropbench.errors import ScorerError
from dropbench.metrics import auc_trapezoid, coarse_metrics
from dropbench.pipeline import compute_relevance, evaluate_records, run_pipeline
from dropbench.scorer import ExternalScorer, InProcessScorer
from dropbench.seeding import derive_seed

ADAPTER_MAIN = Path(__file__).resolve().parents[1] / "adapter" / "dist" / "main.js"


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
          + (f" — {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


def _splits_for(n, t, block, seed):
    cfg = synthetic.SyntheticConfig(n_samples=n, T=t, block_length=block, seed=seed)
    samples = synthetic.generate(cfg)
    tr, va, te = synthetic.split_indices(len(samples), seed=seed)
    return DatasetSplits(train=[samples[i] for i in tr],
                         val=[samples[i] for i in va],
                         test=[samples[i] for i in te])


@pytest.fixture(scope="module")
def smoke_run():
    """Official reduced config: n=1000, T=128; must reach 0.85 in under 2 min."""
    t0 = time.perf_counter()
    splits = _splits_for(1000, 128, 32, seed=0)
    model = train(splits, TrainConfig(epochs=25, learning_rate=0.05, seed=0))
    return {"model": model, "splits": splits, "seconds": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def test_gradient_correctness_all_layer_kinds():
    t0 = time.perf_counter()
    cases = {
        "conv1d": ([LayerSpec("conv1d", units=5, kernel_size=5, stride=2)], (2, 3, 12)),
        "dense": ([LayerSpec("global_avg_pool"), LayerSpec("dense", units=4)], (2, 3, 1)),
        "relu": ([LayerSpec("relu")], (2, 3, 10)),
        "global_avg_pool": ([LayerSpec("global_avg_pool")], (2, 3, 10)),
        "softmax": ([LayerSpec("global_avg_pool"), LayerSpec("softmax")], (2, 4, 1)),
    }
    h = 1e-5
    worst = {}
    for kind, (specs, shape) in cases.items():
        rng = np.random.default_rng(derive_seed("acceptance-grad", kind))
        graph = Graph(specs, input_features=shape[1], seed=3)
        errs = []
        for probe in range(100):
            x = rng.normal(size=shape)
            x += 0.3 * np.sign(x)
            for layer in graph.params:
                for name in layer:
                    layer[name][:] = rng.normal(size=layer[name].shape)
            out, caches = forward_batch(graph, x)
            d_out = rng.normal(size=out.shape)
            _, dx = backward_batch(graph, caches, d_out)
            idx = tuple(rng.integers(0, s) for s in shape)
            xp = x.copy()
            xp[idx] += h
            up = float((forward_batch(graph, xp)[0] * d_out).sum())
            xp[idx] -= 2 * h
            dn = float((forward_batch(graph, xp)[0] * d_out).sum())
            fd = (up - dn) / (2 * h)
            errs.append(abs(fd - dx[idx]) / max(abs(fd), abs(dx[idx]), 1e-8))
        worst[kind] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 30.0
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    report("gradient-correctness", ok, detail)


# ---------------------------------------------------------------------------
# 2. classifier accuracy (smoke here; the full-size run is the last test)
# ---------------------------------------------------------------------------

def test_classifier_accuracy_smoke(smoke_run):
    acc = smoke_run["model"].test_accuracy
    ok = acc >= 0.85 and smoke_run["seconds"] < 120.0
    report("classifier-accuracy-smoke", ok,
           f"accuracy {acc:.3f} (needs >= 0.85), {smoke_run['seconds']:.0f}s (< 120s)")


# ---------------------------------------------------------------------------
# 3. IG completeness
# ---------------------------------------------------------------------------

def test_ig_completeness(smoke_run):
    model = smoke_run["model"]
    params = AttributionParams(ig_steps=256)
    gaps = []
    for sample in smoke_run["splits"].test[:50]:
        c = int(np.argmax(predict_probabilities(model.graph, sample.values)))
        rmap = gradient_based(model.graph, sample.values, c, "integrated_gradients",
                              params, sample_id=sample.sample_id)
        gaps.append(completeness_gap(model.graph, sample.values, rmap))
    gaps = np.asarray(gaps)
    # mean over the 50 evaluated samples; per-sample worst case carries
    # O(1/steps) ReLU-kink quadrature error (see decisions ledger)
    ok = float(gaps.mean()) <= 1e-3
    report("ig-completeness", ok,
           f"mean gap {gaps.mean():.2e} (needs <= 1e-3), max {gaps.max():.2e}")


# ---------------------------------------------------------------------------
# 4. shapley oracle equivalence
# ---------------------------------------------------------------------------

def test_shapley_oracle_equivalence():
    w = np.array([0.7, -0.4, 1.3, 0.2, -0.9])
    v = np.array([0.5, 0.8, -0.3, 0.6, 0.1])

    def fn(batch):
        flat = batch.reshape(len(batch), -1)
        z = flat @ w + 0.8 * np.tanh(flat @ v) + 0.3 * flat[:, 0] * flat[:, 2]
        return 1.0 / (1.0 + np.exp(-z))

    x = np.random.default_rng(0).normal(size=(1, 5))
    baseline = np.zeros_like(x)
    players = build_players(1, 5, "per_point", 1)
    exact = exact_shapley_values(fn, x, baseline, players)
    svs_full = svs_player_values(fn, x, baseline, players,
                                 list(itertools.permutations(range(5))))
    ks_full = kernel_shap_values(fn, x, baseline, players, n_coalitions=2 ** 5 - 2)
    svs_sampled = svs_player_values(fn, x, baseline, players, 2000,
                                    np.random.default_rng(1))
    err_svs = float(np.max(np.abs(svs_full - exact)))
    err_ks = float(np.max(np.abs(ks_full - exact)))
    err_sampled = float(np.max(np.abs(svs_sampled - exact)))
    ok = err_svs <= 1e-8 and err_ks <= 1e-8 and err_sampled <= 0.05
    report("shapley-oracle-equivalence", ok,
           f"svs-full {err_svs:.1e}, ks-full {err_ks:.1e} (<= 1e-8), "
           f"svs-2000 {err_sampled:.3f} (<= 0.05)")


# ---------------------------------------------------------------------------
# 5. moment-statistic correctness
# ---------------------------------------------------------------------------

def test_moment_statistics():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        size = int(rng.integers(4, 17))
        values = rng.integers(-32, 33, size=size).astype(float) / 16.0
        if np.all(values == values[0]):
            continue
        fracs = [Fraction(v) for v in values]  # /16 values are exact binary
        mean = sum(fracs, Fraction(0)) / len(fracs)
        k2, k3, k4 = (sum((f - mean) ** i for f in fracs) / len(fracs)
                      for i in (2, 3, 4))
        skew_oracle = float(k3) / float(k2) ** 1.5
        kurt_oracle = float(k4) / float(k2) ** 2 - 3.0
        worst = max(worst, abs(skewness(values) - skew_oracle),
                    abs(excess_kurtosis(values) - kurt_oracle))
    normal = np.random.default_rng(3).standard_normal(100_000)
    uniform = np.random.default_rng(4).random(100_000)
    n_skew = abs(skewness(normal))
    n_kurt = abs(excess_kurtosis(normal))
    u_kurt = excess_kurtosis(uniform)
    ok = (worst <= 1e-12 and n_skew <= 0.05 and n_kurt <= 0.1
          and abs(u_kurt + 1.2) <= 0.1)
    report("moment-statistics", ok,
           f"oracle dev {worst:.1e} (<= 1e-12); normal skew {n_skew:.3f}, "
           f"ekurt {n_kurt:.3f}; uniform ekurt {u_kurt:.3f}")


# ---------------------------------------------------------------------------
# 6. formula checks (the curve-bound half is asserted in the ranking run)
# ---------------------------------------------------------------------------

def test_formula_checks():
    top = [type("P", (), {"k": k, "n_ratio": r, "mean_drop": d})
           for k, r, d in [(0.0, 0.0, 0.0), (0.95, 1.0, 2.0)]]
    bot = [type("P", (), {"k": k, "n_ratio": r, "mean_drop": d})
           for k, r, d in [(0.0, 0.0, 0.0), (0.95, 1.0, 0.0)]]
    m = coarse_metrics(top, bot)
    f1_ok = m.auc_s_top == 1.0 and m.f1_s == 0.5
    xs = np.linspace(0.0, 1.0, 11)
    auc_ok = auc_trapezoid(xs, xs) == 0.5
    report("formula-checks", f1_ok and auc_ok,
           f"f1(1,0)={m.f1_s}, auc(y=x)={auc_trapezoid(xs, xs)}")


# ---------------------------------------------------------------------------
# 7. ranking property + fine-metric bounds
# ---------------------------------------------------------------------------

RANKING_METHODS = {
    "saliency": {},
    "grad_x_input": {},
    "integrated_gradients": {"ig_steps": 64},
    "gradient_shap": {"gs_baseline_count": 8},
    "shapley_value_sampling": {"ks_player_grouping": "per_segment",
                               "segment_length": 16, "svs_permutations": 8},
    "kernel_shap": {"ks_player_grouping": "per_segment", "segment_length": 16,
                    "ks_coalitions": 150},
    "occlusion": {"occlusion_window": 13},
    "random_control": {},
    "oracle": {},
}
STOCHASTIC = {"gradient_shap", "shapley_value_sampling", "kernel_shap",
              "random_control"}
REPS = 5


@pytest.fixture(scope="module")
def ranking_run(smoke_run):
    model = smoke_run["model"]
    scorer = InProcessScorer(model.graph)
    samples = smoke_run["splits"].test[:120]
    probs = scorer.score_batch(np.stack([s.values for s in samples]))
    predicted = {s.sample_id: int(np.argmax(probs[i])) for i, s in enumerate(samples)}

    maps_cache: dict[tuple[str, int], dict] = {}

    def maps_for(method, rep):
        file_rep = rep if method in STOCHASTIC else 0
        key = (method, file_rep)
        if key not in maps_cache:
            params = AttributionParams(
                seed=derive_seed("acceptance-rank", method, file_rep),
                **RANKING_METHODS[method])
            model_arg = model.graph
            maps_cache[key] = {
                s.sample_id: compute_relevance(method, model_arg, s,
                                               predicted[s.sample_id], params)
                for s in samples
            }
        return maps_cache[key]

    records_per_rep = []
    for rep in range(REPS):
        records = []
        for method in RANKING_METHODS:
            maps = maps_for(method, rep)
            for scheme in ("top", "bot"):
                plan = CorruptionPlan(scheme=scheme,
                                      seed=derive_seed("acceptance-corrupt", rep))
                records.extend(run_corruption(scorer, samples, maps, plan).records)
        records_per_rep.append(records)

    m, t = samples[0].values.shape
    k_grid = CorruptionPlan("top", seed=0).k_grid
    return evaluate_records(records_per_rep, k_grid, m * t)


def test_fine_metric_bounds(ranking_run):
    vals = []
    for metric in ("auc_skew_bar", "auc_kurt"):
        for method, reps in ranking_run["per_rep"][metric].items():
            vals.extend(reps)
    lo, hi = min(vals), max(vals)
    ok = 0.0 <= lo and hi <= 0.95
    report("fine-metric-bounds", ok, f"range [{lo:.3f}, {hi:.3f}] within [0, 0.95]")


def test_ranking_property(ranking_run):
    per_rep = ranking_run["per_rep"]
    methods = list(RANKING_METHODS)
    hits = 0
    details = []
    for rep in range(REPS):
        vals = {metric: {m: per_rep[metric][m][rep] for m in methods}
                for metric in per_rep}
        # coarse gate: starred f1 within this repetition >= 0.5
        f1 = vals["f1_s"]
        lo, hi = min(f1.values()), max(f1.values())
        gate = {m: (f1[m] - lo) / (hi - lo) >= 0.5 if hi > lo else True
                for m in methods}
        checks = []
        for metric in ("auc_s_top", "f1_s", "auc_skew_bar"):
            ranked = sorted(methods, key=lambda m: vals[metric][m])
            checks.append(ranked[-1] == "oracle")
            checks.append(ranked[0] == "random_control")
        kurt = vals["auc_kurt"]
        gated = [m for m in methods if gate[m]]
        checks.append(max(gated, key=lambda m: kurt[m]) == "oracle")
        if gate["random_control"]:
            checks.append(min(gated, key=lambda m: kurt[m]) == "random_control")
        rep_ok = all(checks)
        hits += rep_ok
        details.append("ok" if rep_ok else "miss")
    ok = hits >= 4
    report("ranking-property", ok,
           f"{hits}/5 repetitions ({', '.join(details)}); "
           "oracle first and random_control last on all gated metrics")


# ---------------------------------------------------------------------------
# 8. distribution shapes
# ---------------------------------------------------------------------------

def test_distribution_shape_reproduction():
    rng = np.random.default_rng(5)
    shape_a = np.concatenate([1.0 - np.abs(0.01 * rng.standard_normal(950)),
                              rng.uniform(0.2, 0.9, size=50)])
    shape_b = np.abs(0.05 * rng.standard_normal(400))
    shape_d = np.concatenate([0.02 * rng.standard_normal(200),
                              1.0 + 0.02 * rng.standard_normal(200)])
    da = build_distribution(0.55, shape_a)
    db = build_distribution(0.55, shape_b)
    dd = build_distribution(0.55, shape_d)
    got = (classify_shape(da), classify_shape(db), classify_shape(dd))
    ok = got == ("A", "B", "D") and da.skew < -2.0 and da.ekurt > 5.0
    report("distribution-shapes", ok,
           f"classified {got}, shape A skew {da.skew:.2f} (< -2), "
           f"ekurt {da.ekurt:.2f} (> 5)")


# ---------------------------------------------------------------------------
# 9. calibration effect (directional, 5 seeds)
# ---------------------------------------------------------------------------

CAL_KS = (0.35, 0.45, 0.55, 0.65, 0.75)


def _mean_skew_for_best_method(model, samples, seed):
    scorer = InProcessScorer(model.graph)
    probs = scorer.score_batch(np.stack([s.values for s in samples]))
    predicted = {s.sample_id: int(np.argmax(probs[i])) for i, s in enumerate(samples)}
    method_maps = {
        "oracle": {s.sample_id: oracle_attribution(s, predicted[s.sample_id])
                   for s in samples},
        "grad_x_input": {
            s.sample_id: gradient_based(model.graph, s.values,
                                        predicted[s.sample_id], "grad_x_input",
                                        AttributionParams(seed=seed),
                                        sample_id=s.sample_id)
            for s in samples
        },
        "random_control": {
            s.sample_id: random_control(s.values, seed=derive_seed(seed, s.sample_id),
                                        class_index=predicted[s.sample_id],
                                        sample_id=s.sample_id)
            for s in samples
        },
    }
    results = {}
    for name, maps in method_maps.items():
        recs = {}
        for scheme in ("top", "bot"):
            plan = CorruptionPlan(scheme=scheme, seed=derive_seed("cal", seed))
            recs[scheme] = run_corruption(scorer, samples, maps, plan)
        from dropbench.corruption import build_curve
        m, t = samples[0].values.shape
        k_grid = plan.k_grid
        coarse = coarse_metrics(build_curve(recs["top"].records, m * t, k_grid),
                                build_curve(recs["bot"].records, m * t, k_grid))
        skews = []
        for k in CAL_KS:
            drops = [r.drop for r in recs["top"].records if r.k == k]
            skews.append(skewness(drops))
        results[name] = {"f1": coarse.f1_s, "mean_skew": float(np.mean(skews))}
    best = max(results, key=lambda m: results[m]["f1"])
    return best, results


def test_calibration_effect():
    wins = 0
    lines = []
    for seed in range(5):
        splits = _splits_for(600, 128, 32, seed=100 + seed)
        base = train(splits, TrainConfig(epochs=30, learning_rate=0.05, seed=seed))
        calib = train(splits, TrainConfig(epochs=30, learning_rate=0.05, seed=seed,
                                          calibration="class0"))
        samples = splits.test[:80]
        best, base_res = _mean_skew_for_best_method(base, samples, seed)
        _, calib_res = _mean_skew_for_best_method(calib, samples, seed)
        base_skew = base_res[best]["mean_skew"]
        calib_skew = calib_res[best]["mean_skew"]
        win = calib_skew < base_skew
        wins += win
        lines.append(f"seed{seed}:{best} {base_skew:.2f}->{calib_skew:.2f}"
                     f"{'+' if win else '-'}")
    ok = wins >= 4
    report("calibration-effect", ok, f"{wins}/5 seeds more negative; " + " ".join(lines))


# ---------------------------------------------------------------------------
# 10. determinism of the full pipeline
# ---------------------------------------------------------------------------

DET_CONFIG = """
seed = 11

[dataset]
n_samples = 150
series_length = 64
features = 2
block_length = 16

[model]
epochs = 5
conv_units = 8
kernel_size = 5
conv_strides = [2, 2]
dense_units = 8

[corruption]
k_grid = [0.15, 0.55, 0.95]
eval_samples = 20

[evaluation]
repetitions = 2

[[methods]]
name = "oracle"

[[methods]]
name = "gradient_shap"
gs_baseline_count = 4

[[methods]]
name = "random_control"
"""


def test_pipeline_determinism(tmp_path):
    cfg_path = tmp_path / "det.toml"
    cfg_path.write_text(DET_CONFIG)
    roots = []
    for run in ("a", "b"):
        cfg = load_config(cfg_path, {"output_root": str(tmp_path / f"out_{run}")})
        run_pipeline(cfg)
        roots.append(cfg.run_dir)
    metrics = [(r / "metrics" / "metrics.json").read_bytes() for r in roots]
    same_metrics = metrics[0] == metrics[1]
    svg_names = sorted(p.name for p in (roots[0] / "figures").glob("*.svg"))
    same_svgs = all((roots[0] / "figures" / n).read_bytes()
                    == (roots[1] / "figures" / n).read_bytes() for n in svg_names)
    ok = same_metrics and same_svgs and len(svg_names) >= 4
    report("pipeline-determinism", ok,
           f"metrics.json identical: {same_metrics}; {len(svg_names)} SVGs identical: "
           f"{same_svgs}")


# ---------------------------------------------------------------------------
# 11. classifier accuracy, full size (the heavy one)
# ---------------------------------------------------------------------------

def test_classifier_accuracy_full_size():
    t0 = time.perf_counter()
    accs = []
    for seed in (0, 1, 2):
        splits = _splits_for(7500, 500, 100, seed=seed)
        model = train(splits, TrainConfig(epochs=5, learning_rate=0.05, seed=seed))
        accs.append(model.test_accuracy)
    elapsed = time.perf_counter() - t0
    mean_acc = float(np.mean(accs))
    ok = mean_acc >= 0.90 and elapsed < 1200.0
    report("classifier-accuracy-full", ok,
           f"mean accuracy {mean_acc:.4f} over seeds {accs} (needs >= 0.90), "
           f"{elapsed:.0f}s (< 1200s)")


# ---------------------------------------------------------------------------
# SECONDARY: adapter parity over the wire protocol
# ---------------------------------------------------------------------------

@pytest.mark.skipif(not ADAPTER_MAIN.exists(),
                    reason="adapter not built: cd adapter && npm install && npm run build")
def test_adapter_parity(smoke_run, tmp_path):
    model = smoke_run["model"]
    checkpoint = tmp_path / "model.json"
    save_checkpoint(model.graph, checkpoint)

    pool = synthetic.generate(synthetic.SyntheticConfig(
        n_samples=500, T=128, block_length=32, seed=321))
    batch = np.stack([s.values for s in pool])
    direct = predict_probabilities(model.graph, batch)
    with ExternalScorer(["node", str(ADAPTER_MAIN), "--checkpoint",
                         str(checkpoint)], timeout=120.0) as scorer:
        scorer.validate_dims(m=4, t=128, class_count=2)
        wire = scorer.score_batch(batch)
        score_dev = float(np.max(np.abs(wire - direct)))

        samples = smoke_run["splits"].test[:40]
        in_scorer = InProcessScorer(model.graph)
        probs = in_scorer.score_batch(np.stack([s.values for s in samples]))
        predicted = {s.sample_id: int(np.argmax(probs[i]))
                     for i, s in enumerate(samples)}
        maps = {s.sample_id: oracle_attribution(s, predicted[s.sample_id])
                for s in samples}
        aucs = {}
        for name, sc in (("in_process", in_scorer), ("adapter", scorer)):
            recs = {}
            for scheme in ("top", "bot"):
                plan = CorruptionPlan(scheme=scheme, seed=7)
                recs[scheme] = run_corruption(sc, samples, maps, plan)
            from dropbench.corruption import build_curve
            m, t = samples[0].values.shape
            coarse = coarse_metrics(
                build_curve(recs["top"].records, m * t, plan.k_grid),
                build_curve(recs["bot"].records, m * t, plan.k_grid))
            aucs[name] = coarse.auc_s_top
    auc_dev = abs(aucs["adapter"] - aucs["in_process"])
    ok = score_dev <= 1e-6 and auc_dev <= 1e-3
    report("adapter-parity", ok,
           f"score dev {score_dev:.2e} (<= 1e-6) on 500 samples; "
           f"AUC dev {auc_dev:.2e} (<= 1e-3)")
