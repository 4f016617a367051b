"""Stage orchestration: generate -> train -> attribute -> corrupt -> evaluate
-> report, with hash-checked artifacts under out/<config-hash>/.

Every stage reads its inputs from the run directory and refuses artifacts
whose embedded config hash differs from the active config (unless forced).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import synthetic
from .attribution import (GRADIENT_METHODS, AttributionParams, RelevanceMap,
                          gradient_based, occlusion, oracle_attribution,
                          random_control, shapley_based)
from .autodiff import load_checkpoint, save_checkpoint
from .classifier import DatasetSplits, TrainedModel, train
from .config import PipelineConfig
from .corruption import (CorruptionPlan, CurvePoint, build_curve, read_records_csv,
                         run_corruption, write_records_csv)
from .distshape import build_distribution
from .errors import ArtifactError, ConfigurationError
from .metrics import FineCurves, coarse_metrics, fine_metrics, standardize
from .report import (RidgePlotSpec, drop_curves_figure, emit_tables,
                     per_sample_report, render_curves, render_ridgeline,
                     write_density_csv)
from .scorer import ExternalScorer, InProcessScorer
from .seeding import derive_seed, rng_for

STAGES = ("generate", "train", "attribute", "corrupt", "evaluate", "report")


@dataclass
class RunPaths:
    root: Path

    @property
    def dataset_npz(self) -> Path:
        return self.root / "dataset" / "data.npz"

    @property
    def dataset_meta(self) -> Path:
        return self.root / "dataset" / "meta.json"

    @property
    def checkpoint(self) -> Path:
        return self.root / "model" / "checkpoint.json"

    @property
    def training_report(self) -> Path:
        return self.root / "model" / "training_report.json"

    @property
    def relevance_dir(self) -> Path:
        return self.root / "relevance"

    @property
    def drops_dir(self) -> Path:
        return self.root / "drops"

    @property
    def metrics_dir(self) -> Path:
        return self.root / "metrics"

    @property
    def figures_dir(self) -> Path:
        return self.root / "figures"


def paths_for(cfg: PipelineConfig) -> RunPaths:
    return RunPaths(root=cfg.run_dir)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}; run the '{producer}' stage first")
    return path


def _check_hash(found: Optional[str], cfg: PipelineConfig, what: str, force: bool) -> None:
    if force:
        return
    if found != cfg.config_hash:
        raise ArtifactError(
            f"{what} was produced with config hash {found!r}, current is "
            f"{cfg.config_hash!r}; rerun earlier stages or pass --force")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def stage_generate(cfg: PipelineConfig, force: bool = False) -> Path:
    out = paths_for(cfg)
    out.dataset_npz.parent.mkdir(parents=True, exist_ok=True)

    if cfg.dataset["kind"] == "synthetic":
        samples = synthetic.generate(cfg.synthetic_config())
        if cfg.dataset["snr_db"] is not None:
            samples = synthetic.add_noise(samples, float(cfg.dataset["snr_db"]),
                                          seed=derive_seed(cfg.seed, "noise"))
    else:
        schema = synthetic.CsvSchema(m=cfg.dataset["features"],
                                     t=cfg.dataset["series_length"],
                                     label_column=cfg.dataset["label_column"])
        samples = synthetic.load_csv(cfg.dataset["path"], schema)

    n = len(samples)
    train_idx, val_idx, test_idx = synthetic.split_indices(
        n, tuple(cfg.dataset["split"]), seed=derive_seed(cfg.seed, "split"))

    values = np.stack([s.values for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    arrays = {"values": values, "labels": labels,
              "config_hash": np.array(cfg.config_hash)}
    if samples[0].block_mask is not None:
        arrays["block_mask"] = np.stack([s.block_mask for s in samples])
        arrays["f1"] = np.array([s.f1 for s in samples])
        arrays["f2"] = np.array([s.f2 for s in samples])
    np.savez(out.dataset_npz, **arrays)

    meta = {
        "config_hash": cfg.config_hash,
        "n_samples": n,
        "splits": {"train": train_idx, "val": val_idx, "test": test_idx},
        "samples": [
            {"sample_id": s.sample_id, "label": int(s.label), "f1": s.f1, "f2": s.f2,
             "block_offsets": list(s.block_offsets) if s.block_offsets else None}
            for s in samples
        ],
    }
    out.dataset_meta.write_text(json.dumps(meta), encoding="utf-8")
    return out.dataset_npz.parent


def load_dataset(cfg: PipelineConfig, force: bool = False
                 ) -> tuple[list[synthetic.TimeSeriesSample], dict]:
    out = paths_for(cfg)
    _require(out.dataset_npz, "generate")
    _require(out.dataset_meta, "generate")
    data = np.load(out.dataset_npz, allow_pickle=False)
    meta = json.loads(out.dataset_meta.read_text(encoding="utf-8"))
    _check_hash(meta.get("config_hash"), cfg, "dataset", force)
    values = data["values"]
    labels = data["labels"]
    has_mask = "block_mask" in data
    samples = []
    for i in range(len(values)):
        samples.append(synthetic.TimeSeriesSample(
            values=values[i], label=int(labels[i]), sample_id=i,
            f1=float(data["f1"][i]) if has_mask else None,
            f2=float(data["f2"][i]) if has_mask else None,
            block_mask=data["block_mask"][i] if has_mask else None))
    return samples, meta


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def stage_train(cfg: PipelineConfig, force: bool = False) -> Path:
    out = paths_for(cfg)
    out.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    if cfg.model["kind"] == "external":
        (out.checkpoint.parent / "external.json").write_text(json.dumps({
            "config_hash": cfg.config_hash,
            "command": cfg.model["command"],
        }), encoding="utf-8")
        return out.checkpoint.parent

    samples, meta = load_dataset(cfg, force)
    splits = meta["splits"]
    ds = DatasetSplits(train=[samples[i] for i in splits["train"]],
                       val=[samples[i] for i in splits["val"]],
                       test=[samples[i] for i in splits["test"]])
    model = train(ds, cfg.train_config(seed=derive_seed(cfg.seed, "train")))
    save_checkpoint(model.graph, out.checkpoint, extra={
        "config_hash": cfg.config_hash,
        "class_count": model.class_count,
        "test_accuracy": model.test_accuracy,
    })
    out.training_report.write_text(json.dumps({
        "config_hash": cfg.config_hash,
        "test_accuracy": model.test_accuracy,
        "epochs": model.training_report,
    }, indent=2), encoding="utf-8")
    return out.checkpoint.parent


def load_model(cfg: PipelineConfig, force: bool = False):
    out = paths_for(cfg)
    _require(out.checkpoint, "train")
    doc = json.loads(out.checkpoint.read_text(encoding="utf-8"))
    _check_hash(doc.get("config_hash"), cfg, "model checkpoint", force)
    return load_checkpoint(out.checkpoint)


def make_scorer(cfg: PipelineConfig, force: bool = False):
    if cfg.model["kind"] == "external":
        return ExternalScorer(cfg.model["command"], timeout=float(cfg.model["timeout"]))
    return InProcessScorer(load_model(cfg, force))


# ---------------------------------------------------------------------------
# attribute
# ---------------------------------------------------------------------------

def eval_sample_ids(cfg: PipelineConfig, meta: dict) -> list[int]:
    test_ids = list(meta["splits"]["test"])
    cap = int(cfg.corruption["eval_samples"])
    if cap and cap < len(test_ids):
        rng = rng_for(cfg.seed, "eval_subset")
        picked = rng.choice(len(test_ids), size=cap, replace=False)
        test_ids = sorted(test_ids[i] for i in picked)
    return test_ids


def compute_relevance(method: str, model_or_scorer, sample, class_index: int,
                      params: AttributionParams) -> RelevanceMap:
    """Dispatch one method for one sample; deterministic given params.seed."""
    if method in GRADIENT_METHODS:
        return gradient_based(model_or_scorer, sample.values, class_index, method,
                              params, sample_id=sample.sample_id)
    if method in ("shapley_value_sampling", "kernel_shap"):
        return shapley_based(model_or_scorer, sample.values, class_index, method,
                             params, sample_id=sample.sample_id)
    if method == "occlusion":
        return occlusion(model_or_scorer, sample.values, class_index,
                         params.occlusion_window, sample_id=sample.sample_id)
    if method == "random_control":
        return random_control(sample.values,
                              seed=derive_seed(params.seed, sample.sample_id),
                              class_index=class_index, sample_id=sample.sample_id)
    if method == "oracle":
        return oracle_attribution(sample, class_index=class_index)
    raise ConfigurationError(f"unknown method {method!r}")


def _attribute_one(args):
    method, model_or_scorer, sample, class_index, params = args
    rmap = compute_relevance(method, model_or_scorer, sample, class_index, params)
    return sample.sample_id, rmap.scores


def stage_attribute(cfg: PipelineConfig, force: bool = False,
                    jobs: Optional[int] = None) -> Path:
    out = paths_for(cfg)
    samples, meta = load_dataset(cfg, force)
    ids = eval_sample_ids(cfg, meta)
    subset = [samples[i] for i in ids]

    scorer = make_scorer(cfg, force)
    graph_model = scorer.graph if isinstance(scorer, InProcessScorer) else None
    if isinstance(scorer, ExternalScorer):
        m, t = subset[0].values.shape
        scorer.validate_dims(m, t)
    probs = scorer.score_batch(np.stack([s.values for s in subset]))
    predicted = {s.sample_id: int(np.argmax(probs[i])) for i, s in enumerate(subset)}

    jobs = jobs or cfg.jobs
    try:
        for spec in cfg.methods:
            method_dir = out.relevance_dir / spec.name
            method_dir.mkdir(parents=True, exist_ok=True)
            reps = list(range(cfg.repetitions)) if spec.stochastic else [0]
            for rep in reps:
                params = spec.attribution_params(
                    seed=derive_seed(cfg.seed, "attr", spec.name, rep))
                model_arg = graph_model if spec.name in GRADIENT_METHODS else scorer
                if spec.name in GRADIENT_METHODS and graph_model is None:
                    raise ConfigurationError(
                        f"{spec.name} needs the built-in model, not an external scorer")
                tasks = [(spec.name, model_arg, s, predicted[s.sample_id], params)
                         for s in subset]
                if jobs > 1 and isinstance(scorer, InProcessScorer):
                    with ProcessPoolExecutor(max_workers=jobs) as pool:
                        results = dict(pool.map(_attribute_one, tasks, chunksize=4))
                else:
                    results = dict(_attribute_one(t) for t in tasks)
                scores = np.stack([results[s.sample_id] for s in subset])
                np.save(method_dir / f"rep{rep}.npy", scores)
            header = {
                "config_hash": cfg.config_hash,
                "method": spec.name,
                "params": spec.params,
                "stochastic": spec.stochastic,
                "reps": reps,
                "sample_ids": ids,
                "predicted_class": [predicted[i] for i in ids],
            }
            (method_dir / "header.json").write_text(json.dumps(header), encoding="utf-8")
    finally:
        scorer.close()
    return out.relevance_dir


def load_relevance(cfg: PipelineConfig, method: str, rep: int, samples,
                   force: bool = False) -> dict[int, RelevanceMap]:
    out = paths_for(cfg)
    method_dir = out.relevance_dir / method
    header_path = _require(method_dir / "header.json", "attribute")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    _check_hash(header.get("config_hash"), cfg, f"relevance/{method}", force)
    file_rep = rep if header["stochastic"] else 0
    arr_path = _require(method_dir / f"rep{file_rep}.npy", "attribute")
    scores = np.load(arr_path)
    maps = {}
    for row, (sid, cls) in enumerate(zip(header["sample_ids"],
                                         header["predicted_class"])):
        maps[sid] = RelevanceMap(scores=scores[row], method=method,
                                 class_index=int(cls), sample_id=int(sid))
    return maps


# ---------------------------------------------------------------------------
# corrupt
# ---------------------------------------------------------------------------

def stage_corrupt(cfg: PipelineConfig, force: bool = False) -> Path:
    out = paths_for(cfg)
    samples, meta = load_dataset(cfg, force)
    ids = eval_sample_ids(cfg, meta)
    subset = [samples[i] for i in ids]
    _require(out.relevance_dir, "attribute")
    out.drops_dir.mkdir(parents=True, exist_ok=True)

    scorer = make_scorer(cfg, force)
    diagnostics: dict = {"config_hash": cfg.config_hash, "reps": {}}
    try:
        for rep in range(cfg.repetitions):
            records = []
            rep_diag = {}
            for spec in cfg.methods:
                maps = load_relevance(cfg, spec.name, rep, subset, force)
                for scheme in ("top", "bot"):
                    plan = CorruptionPlan(
                        scheme=scheme, k_grid=cfg.k_grid,
                        seed=derive_seed(cfg.seed, "corrupt", rep))
                    result = run_corruption(
                        scorer, subset, maps, plan,
                        restrict_correct=bool(cfg.corruption["restrict_correct"]))
                    records.extend(result.records)
                    rep_diag[f"{spec.name}/{scheme}"] = result.diagnostics
            write_records_csv(records, out.drops_dir / f"rep{rep}.csv",
                              config_hash=cfg.config_hash)
            diagnostics["reps"][str(rep)] = rep_diag
    finally:
        scorer.close()
    (out.drops_dir / "diagnostics.json").write_text(
        json.dumps(diagnostics, indent=2, sort_keys=True), encoding="utf-8")
    return out.drops_dir


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _records_by_method_scheme(records) -> dict[tuple[str, str], list]:
    grouped: dict[tuple[str, str], list] = {}
    for r in records:
        grouped.setdefault((r.method, r.scheme), []).append(r)
    return grouped


def evaluate_records(records_per_rep: list[list], k_grid: Sequence[float],
                     n_positions: int) -> dict:
    """Per-rep coarse/fine metrics for every method present in the records."""
    per_rep: dict[str, dict[str, list[float]]] = {
        "auc_s_top": {}, "f1_s": {}, "auc_skew_bar": {}, "auc_kurt": {}}
    curves_rep0: dict[str, dict[str, list[CurvePoint]]] = {}
    distributions_rep0: dict[str, list] = {}
    fine_curves_per_rep: list[dict[str, FineCurves]] = []

    for rep, records in enumerate(records_per_rep):
        grouped = _records_by_method_scheme(records)
        methods = sorted({m for m, _ in grouped})
        fine_in: dict[str, FineCurves] = {}
        for method in methods:
            top = grouped.get((method, "top"), [])
            bot = grouped.get((method, "bot"), [])
            top_curve = build_curve(top, n_positions, k_grid)
            bot_curve = build_curve(bot, n_positions, k_grid)
            coarse = coarse_metrics(top_curve, bot_curve)
            per_rep["auc_s_top"].setdefault(method, []).append(coarse.auc_s_top)
            per_rep["f1_s"].setdefault(method, []).append(coarse.f1_s)

            by_k: dict[float, list[float]] = {}
            for r in top:
                by_k.setdefault(r.k, []).append(r.drop)
            ks = [k for k in k_grid if k in by_k]
            dists = [build_distribution(k, by_k[k]) for k in ks]
            fine_in[method] = FineCurves(
                ks=tuple(ks),
                skew=tuple(d.skew for d in dists),
                kurt=tuple(d.ekurt for d in dists))
            if rep == 0:
                curves_rep0[method] = {"top": top_curve, "bot": bot_curve}
                distributions_rep0[method] = dists
        fine = fine_metrics(fine_in)
        fine_curves_per_rep.append(fine_in)
        for method, fm in fine.items():
            per_rep["auc_skew_bar"].setdefault(method, []).append(fm.auc_skew_bar)
            per_rep["auc_kurt"].setdefault(method, []).append(fm.auc_kurt)

    return {
        "per_rep": per_rep,
        "curves_rep0": curves_rep0,
        "distributions_rep0": distributions_rep0,
        "fine_curves_per_rep": fine_curves_per_rep,
    }


def stage_evaluate(cfg: PipelineConfig, force: bool = False) -> Path:
    out = paths_for(cfg)
    samples, meta = load_dataset(cfg, force)
    m, t = samples[0].values.shape
    records_per_rep = []
    for rep in range(cfg.repetitions):
        path = _require(out.drops_dir / f"rep{rep}.csv", "corrupt")
        records, found_hash = read_records_csv(path)
        _check_hash(found_hash, cfg, f"drops rep{rep}", force)
        records_per_rep.append(records)

    result = evaluate_records(records_per_rep, cfg.k_grid, m * t)
    table = standardize(result["per_rep"])

    out.metrics_dir.mkdir(parents=True, exist_ok=True)
    emit_tables(table, out.metrics_dir / "metrics.csv",
                out.metrics_dir / "metrics.json", config_hash=cfg.config_hash)

    dist_dir = out.metrics_dir / "distributions"
    dist_dir.mkdir(exist_ok=True)
    for method, dists in result["distributions_rep0"].items():
        for d in dists:
            write_density_csv(
                d, dist_dir / f"{method}_k{int(round(d.k * 100)):03d}.csv",
                config_hash=cfg.config_hash)

    curves_doc = {
        "config_hash": cfg.config_hash,
        "k_grid": list(cfg.k_grid),
        "methods": {
            method: {
                scheme: [{"k": p.k, "n_ratio": p.n_ratio, "mean_drop": p.mean_drop}
                         for p in pts]
                for scheme, pts in schemes.items()
            }
            for method, schemes in result["curves_rep0"].items()
        },
    }
    (out.metrics_dir / "curves.json").write_text(
        json.dumps(curves_doc, sort_keys=True), encoding="utf-8")
    return out.metrics_dir


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def stage_report(cfg: PipelineConfig, force: bool = False) -> Path:
    out = paths_for(cfg)
    samples, meta = load_dataset(cfg, force)
    m, t = samples[0].values.shape
    path = _require(out.drops_dir / "rep0.csv", "corrupt")
    records, found_hash = read_records_csv(path)
    _check_hash(found_hash, cfg, "drops rep0", force)
    grouped = _records_by_method_scheme(records)
    methods = sorted({mth for mth, _ in grouped})
    out.figures_dir.mkdir(parents=True, exist_ok=True)

    ridge_spec = RidgePlotSpec(k_levels=tuple(cfg.k_grid))
    skew_curves = {}
    kurt_curves = {}
    drop_curves = {"top": {}, "bot": {}}
    for method in methods:
        top = grouped.get((method, "top"), [])
        by_k: dict[float, list[float]] = {}
        for r in top:
            by_k.setdefault(r.k, []).append(r.drop)
        dists = [build_distribution(k, by_k[k]) for k in cfg.k_grid if k in by_k]
        svg = render_ridgeline(dists, ridge_spec, title=f"{method}: score-drop densities")
        (out.figures_dir / f"ridgeline_{method}.svg").write_text(svg, encoding="utf-8")
        ks = [d.k for d in dists]
        skew_curves[method] = (ks, [d.skew for d in dists])
        kurt_curves[method] = (ks, [d.ekurt for d in dists])
        for scheme in ("top", "bot"):
            pts = build_curve(grouped.get((method, scheme), []), m * t, cfg.k_grid)
            drop_curves[scheme][method] = pts

    (out.figures_dir / "skew_curves.svg").write_text(
        render_curves(skew_curves, title="skewness of drop distribution per k",
                      x_label="k", y_label="skew"), encoding="utf-8")
    (out.figures_dir / "kurt_curves.svg").write_text(
        render_curves(kurt_curves, title="excess kurtosis of drop distribution per k",
                      x_label="k", y_label="ekurt"), encoding="utf-8")
    for scheme in ("top", "bot"):
        (out.figures_dir / f"drop_curves_{scheme}.svg").write_text(
            drop_curves_figure(drop_curves[scheme], scheme), encoding="utf-8")

    # per-sample panel: first four evaluated samples, top-15% markers
    ids = eval_sample_ids(cfg, meta)[:4]
    k_mark = 0.15 if 0.15 in cfg.k_grid else cfg.k_grid[0]
    first_method = cfg.methods[0].name
    maps = load_relevance(cfg, first_method, 0, samples, force)
    drops = {r.sample_id: r.drop
             for r in grouped.get((first_method, "top"), []) if r.k == k_mark}
    chosen = [samples[i] for i in ids]
    svg = per_sample_report(chosen, maps, drops, k_mark)
    (out.figures_dir / f"samples_{first_method}_top{int(k_mark * 100):02d}.svg"
     ).write_text(svg, encoding="utf-8")
    return out.figures_dir


def run_pipeline(cfg: PipelineConfig, force: bool = False,
                 jobs: Optional[int] = None) -> Path:
    stage_generate(cfg, force)
    stage_train(cfg, force)
    stage_attribute(cfg, force, jobs=jobs)
    stage_corrupt(cfg, force)
    stage_evaluate(cfg, force)
    stage_report(cfg, force)
    return paths_for(cfg).root
