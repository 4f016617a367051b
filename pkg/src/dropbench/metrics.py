"""Coarse and fine evaluation metrics plus cross-method standardization.

Coarse metrics summarize mean-drop curves: the area under the top-scheme
drop/corruption-ratio curve, and an F1-style harmonic combination of the top
and bottom areas.  Fine metrics integrate the skewness and excess-kurtosis
curves over k after a joint min-max rescale across the compared methods;
lower rescaled skew and higher rescaled kurtosis mean a more robust method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 fallback

from .corruption import CurvePoint
from .errors import ParameterError

METRIC_NAMES = ("auc_s_top", "f1_s", "auc_skew_bar", "auc_kurt")


def auc_trapezoid(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Plain trapezoid rule; xs must be strictly increasing."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 2:
        raise ParameterError(f"need at least 2 points to integrate, got {x.size}")
    if x.size != y.size:
        raise ParameterError("xs and ys must have equal length")
    if np.any(np.diff(x) <= 0):
        raise ParameterError("xs must be strictly increasing")
    return float(_trapezoid(y, x))


@dataclass
class CoarseMetrics:
    auc_s_top: float
    f1_s: float
    degenerate: bool = False


def _curve_auc(points: Sequence[CurvePoint]) -> tuple[float, bool]:
    """Span-normalized area of a mean-drop curve anchored at (0, 0).

    The integral runs to the method's own final corruption ratio and is
    divided by that span, so methods with different positive-relevance counts
    stay comparable.  Consecutive points with equal ratio (tiny |R+|) are
    merged by averaging their drops.
    """
    xs: list[float] = []
    ys: list[float] = []
    for p in points:
        if xs and p.n_ratio == xs[-1]:
            ys[-1] = 0.5 * (ys[-1] + p.mean_drop)
            continue
        xs.append(p.n_ratio)
        ys.append(p.mean_drop)
    if len(xs) < 2 or xs[-1] <= xs[0]:
        return 0.0, True
    span = xs[-1] - xs[0]
    return auc_trapezoid(xs, ys) / span, False


def coarse_metrics(top_curve: Sequence[CurvePoint],
                   bot_curve: Sequence[CurvePoint]) -> CoarseMetrics:
    """AUC of the top curve and the top/bot harmonic combination.

    f1 = auc_top * (1 - auc_bot) / (auc_top + (1 - auc_bot)); a zero (or
    negative) denominator yields f1 = 0 with the degenerate flag set.
    """
    top_ks = [p.k for p in top_curve]
    bot_ks = [p.k for p in bot_curve]
    if top_ks != bot_ks:
        raise ParameterError("top and bot curves must share the same k grid")
    auc_top, deg_top = _curve_auc(top_curve)
    auc_bot, deg_bot = _curve_auc(bot_curve)
    denom = auc_top + (1.0 - auc_bot)
    if denom <= 0.0:
        return CoarseMetrics(auc_s_top=auc_top, f1_s=0.0, degenerate=True)
    f1 = auc_top * (1.0 - auc_bot) / denom
    return CoarseMetrics(auc_s_top=auc_top, f1_s=f1, degenerate=deg_top or deg_bot)


@dataclass
class FineCurves:
    ks: tuple[float, ...]
    skew: tuple[float, ...]
    kurt: tuple[float, ...]


@dataclass
class FineMetrics:
    auc_skew_bar: float
    auc_kurt: float
    degenerate: bool = False


def _joint_rescale(values_by_method: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], bool]:
    """Min-max over the whole curve set (all methods, all k) to [0, 1]."""
    allv = np.concatenate(list(values_by_method.values()))
    lo, hi = float(allv.min()), float(allv.max())
    if hi <= lo:
        return {m: np.full_like(v, 0.5) for m, v in values_by_method.items()}, True
    return {m: (v - lo) / (hi - lo) for m, v in values_by_method.items()}, False


def fine_metrics(curves_by_method: dict[str, FineCurves]) -> dict[str, FineMetrics]:
    """Integrated rescaled skew/kurt curves for a context of methods.

    auc_skew_bar inverts the skew area (lower skew is better) against the
    grid span, so both metrics live in [0, k_max - k_min] and larger is more
    robust.  If every method is identical at every k the rescale is
    degenerate: all curves become the 0.5 constant and results are flagged.
    """
    if not curves_by_method:
        raise ParameterError("fine_metrics needs at least one method")
    grids = {c.ks for c in curves_by_method.values()}
    if len(grids) != 1:
        raise ParameterError("all methods must share the same k grid")
    ks = np.asarray(next(iter(grids)), dtype=np.float64)
    if ks.size < 2:
        raise ParameterError("need at least 2 k values")
    span = float(ks[-1] - ks[0])

    skew_scaled, deg_s = _joint_rescale(
        {m: np.asarray(c.skew, dtype=np.float64) for m, c in curves_by_method.items()})
    kurt_scaled, deg_k = _joint_rescale(
        {m: np.asarray(c.kurt, dtype=np.float64) for m, c in curves_by_method.items()})

    out = {}
    for m in curves_by_method:
        out[m] = FineMetrics(
            auc_skew_bar=span - auc_trapezoid(ks, skew_scaled[m]),
            auc_kurt=auc_trapezoid(ks, kurt_scaled[m]),
            degenerate=deg_s or deg_k)
    return out


# ---------------------------------------------------------------------------
# standardization across methods (starred metrics)
# ---------------------------------------------------------------------------

def standardize_values(values_by_method: dict[str, float]) -> dict[str, float]:
    """Min-max across methods: best 1.0, worst 0.0 (0.5 everywhere when flat)."""
    if len(values_by_method) < 2:
        raise ParameterError("standardization needs at least 2 methods")
    vals = np.array(list(values_by_method.values()), dtype=np.float64)
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        return {m: 0.5 for m in values_by_method}
    return {m: (v - lo) / (hi - lo) for m, v in values_by_method.items()}


@dataclass
class MetricCell:
    mean: float
    std: float
    starred_mean: float
    starred_std: float


@dataclass
class MetricTable:
    methods: list[str]
    metrics: tuple[str, ...]
    cells: dict[str, dict[str, MetricCell]]          # metric -> method -> cell
    per_rep: dict[str, dict[str, list[float]]]       # metric -> method -> raw values
    starred_per_rep: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    repetitions: int = 1


def standardize(per_rep: dict[str, dict[str, list[float]]],
                metrics: Sequence[str] = METRIC_NAMES) -> MetricTable:
    """Aggregate per-repetition raw metrics into a starred table.

    Starred means come from a min-max over the method means; the standard
    deviations are rescaled by the same factor.  A per-repetition starred
    value (min-max within each repetition) is kept as well, which is what
    per-repetition method rankings use.
    """
    methods = sorted({m for metric in per_rep.values() for m in metric})
    if len(methods) < 2:
        raise ParameterError("standardization needs at least 2 methods")
    cells: dict[str, dict[str, MetricCell]] = {}
    starred_per_rep: dict[str, dict[str, list[float]]] = {}
    reps = 1
    for metric in metrics:
        values = per_rep[metric]
        means = {m: float(np.mean(values[m])) for m in methods}
        stds = {m: float(np.std(values[m])) for m in methods}
        lo, hi = min(means.values()), max(means.values())
        scale = (hi - lo) if hi > lo else 0.0
        cells[metric] = {}
        for m in methods:
            starred = 0.5 if scale == 0.0 else (means[m] - lo) / scale
            starred_std = 0.0 if scale == 0.0 else stds[m] / scale
            cells[metric][m] = MetricCell(mean=means[m], std=stds[m],
                                          starred_mean=starred, starred_std=starred_std)
        reps = max(reps, max(len(values[m]) for m in methods))
        starred_per_rep[metric] = {m: [] for m in methods}
        for r in range(reps):
            rep_vals = {m: values[m][r] for m in methods if r < len(values[m])}
            if len(rep_vals) >= 2:
                rep_starred = standardize_values(rep_vals)
                for m, v in rep_starred.items():
                    starred_per_rep[metric][m].append(v)
    return MetricTable(methods=methods, metrics=tuple(metrics), cells=cells,
                       per_rep=per_rep, starred_per_rep=starred_per_rep,
                       repetitions=reps)


def table_to_dict(table: MetricTable) -> dict:
    return {
        "methods": table.methods,
        "metrics": list(table.metrics),
        "repetitions": table.repetitions,
        "cells": {
            metric: {
                m: {"mean": c.mean, "std": c.std,
                    "starred_mean": c.starred_mean, "starred_std": c.starred_std}
                for m, c in by_method.items()
            }
            for metric, by_method in table.cells.items()
        },
        "per_rep": table.per_rep,
        "starred_per_rep": table.starred_per_rep,
    }
