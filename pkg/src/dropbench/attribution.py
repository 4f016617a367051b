"""Post-hoc relevance maps: gradient, Shapley, occlusion and control methods.

All methods attribute the softmax probability of a chosen class (the
corruption loop passes the predicted class).  Gradient methods need the
built-in differentiable graph; Shapley methods, occlusion and the controls
only need batched scores, so they also run against an external scorer.

Every method is deterministic given (model, input, params, seed); per-sample
streams are derived from (params.seed, sample_id).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Graph, forward_batch, input_gradient_batch, softmax
from .errors import ConfigurationError, ParameterError
from .seeding import rng_for

GRADIENT_METHODS = ("saliency", "grad_x_input", "integrated_gradients", "gradient_shap")
SHAPLEY_METHODS = ("shapley_value_sampling", "kernel_shap")
CONTROL_METHODS = ("occlusion", "random_control", "oracle")
ALL_METHODS = GRADIENT_METHODS + SHAPLEY_METHODS + CONTROL_METHODS

_SCORE_CHUNK = 64


@dataclass
class RelevanceMap:
    scores: np.ndarray  # [M, T], signed
    method: str
    class_index: int
    sample_id: int


@dataclass(frozen=True)
class AttributionParams:
    baseline: str = "zeros"  # zeros | gaussian_noise
    ig_steps: int = 64
    gs_baseline_count: int = 8
    gs_noise_std: float = 1.0
    svs_permutations: int = 25
    ks_coalitions: Optional[int] = None  # None -> 2 * players + 2048, capped
    ks_player_grouping: str = "per_segment"  # per_point | per_segment
    segment_length: int = 10
    occlusion_window: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.baseline not in ("zeros", "gaussian_noise"):
            raise ParameterError(f"unknown baseline {self.baseline!r}")
        if self.ig_steps < 2:
            raise ParameterError(f"ig_steps must be >= 2, got {self.ig_steps}")
        if self.gs_baseline_count < 1:
            raise ParameterError("gs_baseline_count must be >= 1")
        if self.svs_permutations < 1:
            raise ParameterError("svs_permutations must be >= 1 (zero permutations "
                                 "cannot estimate anything)")
        if self.ks_coalitions is not None and self.ks_coalitions < 1:
            raise ParameterError("ks_coalitions must be >= 1 when given")
        if self.ks_player_grouping not in ("per_point", "per_segment"):
            raise ParameterError(f"unknown grouping {self.ks_player_grouping!r}")
        if self.segment_length < 1:
            raise ParameterError("segment_length must be >= 1")
        if self.occlusion_window < 1:
            raise ParameterError("occlusion_window must be >= 1")


def _graph_of(model) -> Graph:
    graph = getattr(model, "graph", model)
    if not isinstance(graph, Graph):
        raise ConfigurationError("gradient-based attribution needs the built-in model")
    return graph


def make_score_fn(model, class_index: int) -> Callable[[np.ndarray], np.ndarray]:
    """Batched [B, M, T] -> probability of `class_index` per row.

    Accepts a Graph / TrainedModel, or any scorer with score_batch().
    """
    scorer_like = getattr(model, "score_batch", None)
    if scorer_like is not None:
        return lambda batch: np.asarray(scorer_like(batch))[:, class_index]
    graph = _graph_of(model)

    def fn(batch: np.ndarray) -> np.ndarray:
        logits, _ = forward_batch(graph, batch)
        return softmax(logits)[:, class_index]

    return fn


def _score_chunked(fn, inputs: np.ndarray) -> np.ndarray:
    outs = [fn(inputs[i:i + _SCORE_CHUNK]) for i in range(0, len(inputs), _SCORE_CHUNK)]
    return np.concatenate(outs)


def _baseline_for(x: np.ndarray, params: AttributionParams, sample_id: int,
                  label: str) -> np.ndarray:
    if params.baseline == "zeros":
        return np.zeros_like(x)
    rng = rng_for(params.seed, label, "baseline", sample_id)
    return rng.normal(0.0, params.gs_noise_std, size=x.shape)


# ---------------------------------------------------------------------------
# gradient-based methods
# ---------------------------------------------------------------------------

def gradient_based(model, x: np.ndarray, class_index: int, method: str,
                   params: AttributionParams, sample_id: int = 0,
                   target: str = "probability") -> RelevanceMap:
    graph = _graph_of(model)
    x = np.asarray(x, dtype=np.float64)
    if method not in GRADIENT_METHODS:
        raise ParameterError(f"unknown gradient method {method!r}")

    if method == "saliency":
        scores = input_gradient_batch(graph, x[None], np.array([class_index]),
                                      target=target)[0]
    elif method == "grad_x_input":
        grad = input_gradient_batch(graph, x[None], np.array([class_index]),
                                    target=target)[0]
        scores = grad * x
    elif method == "integrated_gradients":
        baseline = _baseline_for(x, params, sample_id, "ig")
        scores = _integrated_gradients(graph, x, baseline, class_index,
                                       params.ig_steps, target)
    else:  # gradient_shap
        rng = rng_for(params.seed, "gs", sample_id)
        baselines = rng.normal(0.0, params.gs_noise_std,
                               size=(params.gs_baseline_count,) + x.shape)
        alphas = rng.random(params.gs_baseline_count)
        points = baselines + alphas[:, None, None] * (x[None] - baselines)
        grads = _grads_chunked(graph, points, class_index, target)
        scores = np.mean(grads * (x[None] - baselines), axis=0)

    return RelevanceMap(scores=scores, method=method, class_index=class_index,
                        sample_id=sample_id)


def _grads_chunked(graph: Graph, points: np.ndarray, class_index: int,
                   target: str = "probability") -> np.ndarray:
    outs = []
    for i in range(0, len(points), _SCORE_CHUNK):
        chunk = points[i:i + _SCORE_CHUNK]
        idx = np.full(len(chunk), class_index)
        outs.append(input_gradient_batch(graph, chunk, idx, target=target))
    return np.concatenate(outs, axis=0)


def _integrated_gradients(graph: Graph, x: np.ndarray, baseline: np.ndarray,
                          class_index: int, steps: int,
                          target: str = "probability") -> np.ndarray:
    # Midpoint rule along the straight path; exact for linear models.
    alphas = (np.arange(steps) + 0.5) / steps
    path = baseline[None] + alphas[:, None, None] * (x - baseline)[None]
    grads = _grads_chunked(graph, path, class_index, target)
    return grads.mean(axis=0) * (x - baseline)


def completeness_gap(model, x: np.ndarray, relevance: RelevanceMap,
                     baseline: Optional[np.ndarray] = None) -> float:
    """|sum(scores) - (S(x) - S(baseline))| for the map's class."""
    x = np.asarray(x, dtype=np.float64)
    if baseline is None:
        baseline = np.zeros_like(x)
    fn = make_score_fn(model, relevance.class_index)
    s = fn(np.stack([x, baseline]))
    return float(abs(relevance.scores.sum() - (s[0] - s[1])))


# ---------------------------------------------------------------------------
# shapley-based methods
# ---------------------------------------------------------------------------

def build_players(m: int, t: int, grouping: str, segment_length: int) -> list[np.ndarray]:
    """Flat position-index groups acting as Shapley players."""
    if grouping == "per_point":
        return [np.array([i]) for i in range(m * t)]
    players = []
    for feat in range(m):
        for start in range(0, t, segment_length):
            stop = min(start + segment_length, t)
            players.append(feat * t + np.arange(start, stop))
    return players


def svs_player_values(score_fn, x: np.ndarray, baseline: np.ndarray,
                      players: Sequence[np.ndarray],
                      permutations: int | Sequence[Sequence[int]],
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Mean marginal contribution per player over permutations.

    `permutations` is either a count of random permutations (needs `rng`) or
    an explicit iterable of player orderings (used by the exhaustive tests).
    """
    n_players = len(players)
    x_flat = x.reshape(-1)
    base_flat = baseline.reshape(-1)
    if isinstance(permutations, int):
        if permutations < 1:
            raise ParameterError("need at least one permutation")
        perm_list = [rng.permutation(n_players) for _ in range(permutations)]
    else:
        perm_list = [np.asarray(p) for p in permutations]
        if not perm_list:
            raise ParameterError("need at least one permutation")

    totals = np.zeros(n_players)
    for order in perm_list:
        inputs = np.empty((n_players + 1, x.size))
        cur = base_flat.copy()
        inputs[0] = cur
        for step, player in enumerate(order):
            cur[players[player]] = x_flat[players[player]]
            inputs[step + 1] = cur
        scores = _score_chunked(score_fn, inputs.reshape((n_players + 1,) + x.shape))
        marginals = np.diff(scores)
        totals[order] += marginals
    return totals / len(perm_list)


def shapley_kernel_weight(n_players: int, size: int) -> float:
    from math import comb
    return (n_players - 1) / (comb(n_players, size) * size * (n_players - size))


def kernel_shap_values(score_fn, x: np.ndarray, baseline: np.ndarray,
                       players: Sequence[np.ndarray], n_coalitions: int,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Weighted least squares with the Shapley kernel over sampled coalitions.

    Efficiency is enforced exactly by eliminating the last player through the
    constraint sum(phi) = v(full) - v(empty).  When the budget covers every
    nonempty proper coalition the result equals the exact Shapley values.
    """
    n_players = len(players)
    if n_coalitions < 1:
        raise ParameterError("need at least one coalition")
    x_flat = x.reshape(-1)
    base_flat = baseline.reshape(-1)

    ends = np.stack([baseline, x])
    s_empty, s_full = _score_chunked(score_fn, ends)
    delta = s_full - s_empty
    if n_players == 1:
        return np.array([delta])

    total_proper = 2 ** n_players - 2 if n_players <= 30 else None
    if total_proper is not None and n_coalitions >= total_proper:
        masks = np.array([[(c >> p) & 1 for p in range(n_players)]
                          for c in range(1, 2 ** n_players - 1)], dtype=bool)
        weights = np.array([shapley_kernel_weight(n_players, int(row.sum()))
                            for row in masks])
    else:
        if rng is None:
            raise ParameterError("sampled kernel_shap needs an rng")
        sizes = np.arange(1, n_players)
        size_mass = (n_players - 1) / (sizes * (n_players - sizes))
        size_mass = size_mass / size_mass.sum()
        counts: dict[tuple, int] = {}
        drawn_sizes = rng.choice(sizes, size=n_coalitions, p=size_mass)
        for s in drawn_sizes:
            members = tuple(sorted(rng.choice(n_players, size=int(s), replace=False)))
            counts[members] = counts.get(members, 0) + 1
        masks = np.zeros((len(counts), n_players), dtype=bool)
        weights = np.empty(len(counts))
        for row, (members, cnt) in enumerate(sorted(counts.items())):
            masks[row, list(members)] = True
            weights[row] = cnt

    member_matrix = np.zeros((n_players, x.size), dtype=bool)
    for p, positions in enumerate(players):
        member_matrix[p, positions] = True
    inputs = np.where(masks @ member_matrix, x_flat[None, :], base_flat[None, :])
    v = _score_chunked(score_fn, inputs.reshape((len(masks),) + x.shape))

    z = masks.astype(np.float64)
    y = v - s_empty - z[:, -1] * delta
    a = z[:, :-1] - z[:, -1:]
    sw = np.sqrt(weights)
    phi_head, *_ = np.linalg.lstsq(a * sw[:, None], y * sw, rcond=None)
    phi = np.empty(n_players)
    phi[:-1] = phi_head
    phi[-1] = delta - phi_head.sum()
    return phi


def shapley_based(model, x: np.ndarray, class_index: int, method: str,
                  params: AttributionParams, sample_id: int = 0) -> RelevanceMap:
    if method not in SHAPLEY_METHODS:
        raise ParameterError(f"unknown shapley method {method!r}")
    x = np.asarray(x, dtype=np.float64)
    m, t = x.shape
    players = build_players(m, t, params.ks_player_grouping, params.segment_length)
    baseline = _baseline_for(x, params, sample_id, method)
    score_fn = make_score_fn(model, class_index)

    if method == "shapley_value_sampling":
        rng = rng_for(params.seed, "svs", sample_id)
        phi = svs_player_values(score_fn, x, baseline, players,
                                params.svs_permutations, rng)
    else:
        n_coal = params.ks_coalitions
        if n_coal is None:
            n_coal = 2 * len(players) + 2048
            if len(players) <= 30:
                n_coal = min(n_coal, 2 ** len(players) - 2)
        rng = rng_for(params.seed, "ks", sample_id)
        phi = kernel_shap_values(score_fn, x, baseline, players, n_coal, rng)

    scores = np.zeros(m * t)
    for p, positions in enumerate(players):
        scores[positions] = phi[p]  # broadcast uniformly within a segment
    return RelevanceMap(scores=scores.reshape(m, t), method=method,
                        class_index=class_index, sample_id=sample_id)


def exact_shapley_values(score_fn, x: np.ndarray, baseline: np.ndarray,
                         players: Sequence[np.ndarray]) -> np.ndarray:
    """Direct subset enumeration; exponential, for small player counts only."""
    n_players = len(players)
    if n_players > 20:
        raise ParameterError("exact enumeration is limited to 20 players")
    from math import factorial
    x_flat = x.reshape(-1)
    base_flat = baseline.reshape(-1)
    inputs = np.empty((2 ** n_players, x.size))
    for mask in range(2 ** n_players):
        cur = base_flat.copy()
        for p in range(n_players):
            if (mask >> p) & 1:
                cur[players[p]] = x_flat[players[p]]
        inputs[mask] = cur
    v = _score_chunked(score_fn, inputs.reshape((2 ** n_players,) + x.shape))
    phi = np.zeros(n_players)
    fact = [factorial(i) for i in range(n_players + 1)]
    for p in range(n_players):
        for mask in range(2 ** n_players):
            if (mask >> p) & 1:
                continue
            s = bin(mask).count("1")
            w = fact[s] * fact[n_players - s - 1] / fact[n_players]
            phi[p] += w * (v[mask | (1 << p)] - v[mask])
    return phi


# ---------------------------------------------------------------------------
# occlusion and controls
# ---------------------------------------------------------------------------

def occlusion(model, x: np.ndarray, class_index: int, window: int,
              sample_id: int = 0) -> RelevanceMap:
    """Zero-replacement occlusion, one feature at a time.

    A length-`window` zero patch slides with stride 1 over each feature; the
    score at a position is the mean drop over all windows covering it.
    """
    x = np.asarray(x, dtype=np.float64)
    m, t = x.shape
    if window > t:
        raise ParameterError(f"occlusion window {window} exceeds series length {t}")
    score_fn = make_score_fn(model, class_index)
    s_orig = float(score_fn(x[None])[0])
    n_windows = t - window + 1
    scores = np.zeros((m, t))
    for feat in range(m):
        variants = np.repeat(x[None], n_windows, axis=0)
        for start in range(n_windows):
            variants[start, feat, start:start + window] = 0.0
        drops = s_orig - _score_chunked(score_fn, variants)
        # position j is covered by windows max(0, j-window+1) .. min(j, n_windows-1)
        csum = np.concatenate([[0.0], np.cumsum(drops)])
        for j in range(t):
            lo = max(0, j - window + 1)
            hi = min(j, n_windows - 1)
            scores[feat, j] = (csum[hi + 1] - csum[lo]) / (hi - lo + 1)
    return RelevanceMap(scores=scores, method="occlusion", class_index=class_index,
                        sample_id=sample_id)


def random_control(x: np.ndarray, seed: int, class_index: int = 0,
                   sample_id: int = 0) -> RelevanceMap:
    """I.i.d. N(0,1) relevance; the floor any informative method must beat."""
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal(np.asarray(x).shape)
    return RelevanceMap(scores=scores, method="random_control",
                        class_index=class_index, sample_id=sample_id)


def oracle_attribution(sample, class_index: int = 0) -> RelevanceMap:
    """+1 on the generator's block positions, -1 elsewhere (synthetic only)."""
    if getattr(sample, "block_mask", None) is None:
        raise ConfigurationError(
            "oracle attribution needs a synthetic sample with block_mask")
    scores = np.where(sample.block_mask, 1.0, -1.0)
    return RelevanceMap(scores=scores, method="oracle", class_index=class_index,
                        sample_id=sample.sample_id)
