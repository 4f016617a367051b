"""Percentile corruption of positive-relevance positions and score drops.

Positions with positive relevance are ranked, the top (or bottom) k fraction
is replaced with N(0,1) draws, the classifier re-scores the corrupted input,
and the normalized score drop (S - S_corrupted) / S is recorded per sample
and per k.  The noise value for a position depends only on
(seed, sample_id, k), never on the ranking scheme, so top and bot corruption
at k=1.0 produce byte-identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, ScorerError
from .seeding import rng_for

DEFAULT_K_GRID = (0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95)
SCORE_FLOOR = 1e-6
SCHEMES = ("top", "bot")


def round_half_up(x: float) -> int:
    """round(2.5) -> 3 semantics; numpy/python round-half-even is not wanted here."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class CorruptionPlan:
    scheme: str
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        ks = tuple(self.k_grid)
        if not ks:
            raise ParameterError("k_grid must not be empty")
        if any(not (0.0 < k <= 1.0) for k in ks):
            raise ParameterError(f"k values must be in (0,1], got {ks}")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ParameterError(f"k values must be strictly increasing, got {ks}")


@dataclass
class ScoreDropRecord:
    sample_id: int
    method: str
    scheme: str
    k: float
    corrupted_count: int
    original_score: float
    corrupted_score: float
    drop: float


@dataclass
class CurvePoint:
    k: float
    n_ratio: float   # mean corrupted count / (M*T)
    mean_drop: float


@dataclass
class CorruptionResult:
    records: list[ScoreDropRecord]
    curves: dict[str, list[CurvePoint]]  # method -> points (with the (0,0) anchor)
    diagnostics: dict


def rank_positive(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of positions with positive relevance, (descending, ascending).

    Ordered by score; ties broken by flat (feature-major) position index
    ascending in both lists, so the ascending list is the reverse of the
    descending one up to tie groups.
    """
    flat = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.flatnonzero(flat > 0.0)
    if len(pos) == 0:
        return pos.copy(), pos.copy()
    desc = pos[np.lexsort((pos, -flat[pos]))]
    asc = pos[np.lexsort((pos, flat[pos]))]
    return desc, asc


def corrupt(x: np.ndarray, ranked_positions: np.ndarray, k: float,
            rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Replace the first round(|R+| * k) ranked positions with N(0,1) draws.

    Returns (corrupted copy, count).  count == 0 is the degenerate case: the
    original array is returned unchanged (same object, no copy).  The noise
    is drawn as one canonical value per position of the full array, so which
    value a position receives is independent of the ranking order.
    """
    if not (0.0 < k <= 1.0):
        raise ParameterError(f"k must be in (0,1], got {k}")
    count = round_half_up(len(ranked_positions) * k)
    if count == 0:
        return x, 0
    noise = rng.standard_normal(x.size)
    selected = ranked_positions[:count]
    out = x.copy()
    out.reshape(-1)[selected] = noise[selected]
    return out, count


def normalized_score_drop(s_orig: float, s_corr: float) -> float:
    """(S(X) - S(corrupted)) / S(X); caller must pre-filter s_orig <= 1e-6."""
    if s_orig <= SCORE_FLOOR:
        raise ParameterError(
            f"original score {s_orig} at or below the {SCORE_FLOOR} floor; "
            "such records are excluded, not divided")
    return (s_orig - s_corr) / s_orig


def run_corruption(scorer, samples: Sequence, relevance_maps: dict,
                   plan: CorruptionPlan, *, restrict_correct: bool = False,
                   batch_size: int = 64) -> CorruptionResult:
    """Score drops for every (sample, k) under one ranking scheme.

    `scorer` needs a `score_batch([B, M, T]) -> [B, C]` method.  The score is
    the probability of the class predicted on the uncorrupted input, held
    fixed across k.  `relevance_maps` maps sample_id -> RelevanceMap.
    Samples whose original score is at or below the 1e-6 floor are excluded
    and tallied in diagnostics.
    """
    samples = list(samples)
    values = np.stack([s.values for s in samples])
    n_positions = values.shape[1] * values.shape[2]
    try:
        orig_probs = _score_chunked(scorer, values, batch_size)
    except ScorerError:
        raise
    except Exception as exc:  # scorer implementations may raise anything
        raise ScorerError(f"scoring original inputs failed: {exc}") from exc
    # the score is the probability of the class the relevance map explains
    # (the class predicted when attribution ran), held fixed across k
    predicted = np.array([relevance_maps[s.sample_id].class_index for s in samples])
    s_orig = orig_probs[np.arange(len(samples)), predicted]

    excluded_low_score = 0
    excluded_misclassified = 0
    included: list[int] = []
    for i, sample in enumerate(samples):
        if restrict_correct and predicted[i] != sample.label:
            excluded_misclassified += 1
            continue
        if s_orig[i] <= SCORE_FLOOR:
            excluded_low_score += 1
            continue
        included.append(i)

    records: list[ScoreDropRecord] = []
    pending_inputs: list[np.ndarray] = []
    pending_meta: list[tuple[int, str, float, int]] = []  # (sample idx, method, k, count)

    def flush() -> None:
        if not pending_inputs:
            return
        batch = np.stack(pending_inputs)
        try:
            probs = _score_chunked(scorer, batch, batch_size)
        except ScorerError:
            raise
        except Exception as exc:
            ids = sorted({samples[i].sample_id for i, _, _, _ in pending_meta})
            raise ScorerError(f"scoring corrupted inputs failed for samples {ids}: {exc}") from exc
        for row, (i, method, k, count) in enumerate(pending_meta):
            s_corr = float(probs[row, predicted[i]])
            records.append(ScoreDropRecord(
                sample_id=samples[i].sample_id, method=method, scheme=plan.scheme,
                k=k, corrupted_count=count, original_score=float(s_orig[i]),
                corrupted_score=s_corr,
                drop=normalized_score_drop(float(s_orig[i]), s_corr)))
        pending_inputs.clear()
        pending_meta.clear()

    for i in included:
        sample = samples[i]
        rmap = relevance_maps[sample.sample_id]
        desc, asc = rank_positive(rmap.scores)
        ranked = desc if plan.scheme == "top" else asc
        for k in plan.k_grid:
            rng = rng_for(plan.seed, "corrupt", sample.sample_id, round(k * 1000))
            corrupted, count = corrupt(sample.values, ranked, k, rng)
            if count == 0:
                records.append(ScoreDropRecord(
                    sample_id=sample.sample_id, method=rmap.method, scheme=plan.scheme,
                    k=k, corrupted_count=0, original_score=float(s_orig[i]),
                    corrupted_score=float(s_orig[i]), drop=0.0))
                continue
            pending_inputs.append(corrupted)
            pending_meta.append((i, rmap.method, k, count))
            if len(pending_inputs) >= batch_size:
                flush()
    flush()

    curves = {}
    if records:
        curves[records[0].method] = build_curve(records, n_positions, plan.k_grid)
    diagnostics = {
        "excluded_low_score": excluded_low_score,
        "excluded_misclassified": excluded_misclassified,
        "included": len(included),
        "scheme": plan.scheme,
    }
    return CorruptionResult(records=records, curves=curves, diagnostics=diagnostics)


def build_curve(records: Sequence[ScoreDropRecord], n_positions: int,
                k_grid: Sequence[float]) -> list[CurvePoint]:
    """Mean drop and mean corruption ratio per k, anchored at (0, 0)."""
    points = [CurvePoint(k=0.0, n_ratio=0.0, mean_drop=0.0)]
    by_k: dict[float, list[ScoreDropRecord]] = {}
    for rec in records:
        by_k.setdefault(rec.k, []).append(rec)
    for k in k_grid:
        recs = by_k.get(k, [])
        if not recs:
            continue
        points.append(CurvePoint(
            k=k,
            n_ratio=float(np.mean([r.corrupted_count for r in recs])) / n_positions,
            mean_drop=float(np.mean([r.drop for r in recs])),
        ))
    return points


def _score_chunked(scorer, values: np.ndarray, batch_size: int) -> np.ndarray:
    outs = []
    for start in range(0, len(values), batch_size):
        outs.append(np.asarray(scorer.score_batch(values[start:start + batch_size])))
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# record persistence
# ---------------------------------------------------------------------------

_CSV_HEADER = "sample_id,method,scheme,k,corrupted_count,original_score,corrupted_score,drop"


def write_records_csv(records: Sequence[ScoreDropRecord], path: str | Path,
                      config_hash: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(_CSV_HEADER + "\n")
        for r in records:
            fh.write(f"{r.sample_id},{r.method},{r.scheme},{r.k:.17g},"
                     f"{r.corrupted_count},{r.original_score:.17g},"
                     f"{r.corrupted_score:.17g},{r.drop:.17g}\n")


def read_records_csv(path: str | Path) -> tuple[list[ScoreDropRecord], Optional[str]]:
    records = []
    config_hash = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            if line.startswith("# config_hash="):
                config_hash = line.split("=", 1)[1]
            continue
        body.append(line)
    if not body or body[0] != _CSV_HEADER:
        raise ParameterError(f"{path}: unexpected records header")
    for line in body[1:]:
        if not line:
            continue
        sid, method, scheme, k, count, s0, s1, drop = line.split(",")
        records.append(ScoreDropRecord(
            sample_id=int(sid), method=method, scheme=scheme, k=float(k),
            corrupted_count=int(count), original_score=float(s0),
            corrupted_score=float(s1), drop=float(drop)))
    return records, config_hash
