"""Synthetic frequency-sum classification dataset, noise variants, CSV I/O.

Each sample is M sine waves over T steps at a shared low base frequency
(independent phases per feature), with two higher-frequency wave pockets of
`block_length` steps superimposed on all features at non-overlapping random
offsets.  The label says whether the two pocket frequencies sum to at least
`threshold`.  The pocket positions are recorded as a boolean mask so tests
can use a ground-truth attribution oracle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import GenerationError, ParseError
from .seeding import rng_for


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int
    T: int = 500
    M: int = 4
    base_freq_range: tuple[float, float] = (2.0, 5.0)
    block_freq_range: tuple[float, float] = (10.0, 50.0)
    block_length: int = 100
    threshold: float = 60.0
    seed: int = 0

    def __post_init__(self) -> None:
        if 2 * self.block_length > self.T:
            raise GenerationError(
                f"two blocks of {self.block_length} steps cannot fit in T={self.T}")
        lo, hi = self.block_freq_range
        if not (2 * lo <= self.threshold <= 2 * hi):
            raise GenerationError(
                f"threshold {self.threshold} outside achievable sum range "
                f"[{2 * lo}, {2 * hi}]")


@dataclass
class TimeSeriesSample:
    values: np.ndarray                      # [M, T] float64
    label: int
    sample_id: int = 0
    f1: Optional[float] = None
    f2: Optional[float] = None
    block_mask: Optional[np.ndarray] = None  # [M, T] bool
    block_offsets: Optional[tuple[int, int]] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


_REJECTION_CAP_PER_SAMPLE = 200


def _wave(config: SyntheticConfig, f1: float, f2: float, rng: np.random.Generator):
    """Build one [M, T] series plus its block mask and offsets."""
    m, t_len, length = config.M, config.T, config.block_length
    t = np.arange(t_len) / t_len
    f0 = rng.uniform(*config.base_freq_range)
    base_phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
    values = np.sin(2.0 * np.pi * f0 * t[None, :] + base_phases[:, None])

    # Non-overlapping placement via the gap construction: it always succeeds,
    # unlike pairwise rejection, which can live-lock when 2*length == T.
    free = t_len - 2 * length
    g1 = int(rng.integers(0, free + 1))
    g2 = int(rng.integers(0, free - g1 + 1))
    first, second = g1, g1 + length + g2
    if rng.random() < 0.5:
        offsets = (first, second)
    else:
        offsets = (second, first)

    mask = np.zeros((m, t_len), dtype=bool)
    for start, freq in zip(offsets, (f1, f2)):
        phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
        window = slice(start, start + length)
        values[:, window] += np.sin(
            2.0 * np.pi * freq * t[None, window] + phases[:, None])
        mask[:, window] = True
    return values, mask, offsets


def generate(config: SyntheticConfig) -> list[TimeSeriesSample]:
    """Balanced dataset, deterministic per seed.

    Balance comes from quota sampling on the (f1, f2) pairs: each class is
    filled to its half of n_samples and surplus draws for a full class are
    rejected.  Labels use the convention f1 + f2 >= threshold -> class 1.
    """
    n = config.n_samples
    quota = {0: n // 2 + (n % 2), 1: n // 2}
    rng = np.random.default_rng(config.seed)
    lo, hi = config.block_freq_range
    samples: list[TimeSeriesSample] = []
    attempts = 0
    cap = _REJECTION_CAP_PER_SAMPLE * max(n, 1)
    while len(samples) < n:
        attempts += 1
        if attempts > cap:
            raise GenerationError(
                f"could not balance classes after {cap} draws "
                f"(threshold {config.threshold} too extreme?)")
        f1 = float(rng.uniform(lo, hi))
        f2 = float(rng.uniform(lo, hi))
        label = int(f1 + f2 >= config.threshold)
        if quota[label] == 0:
            continue
        quota[label] -= 1
        idx = len(samples)
        values, mask, offsets = _wave(config, f1, f2, rng_for(config.seed, "sample", idx))
        samples.append(TimeSeriesSample(
            values=values, label=label, sample_id=idx,
            f1=f1, f2=f2, block_mask=mask, block_offsets=offsets))
    return samples


def label_for(f1: float, f2: float, threshold: float = 60.0) -> int:
    """Pure label rule; the class-1 boundary convention is f1 + f2 >= threshold."""
    return int(f1 + f2 >= threshold)


def add_noise(samples: Sequence[TimeSeriesSample], snr_db: float,
              seed: int = 0) -> list[TimeSeriesSample]:
    """Additive white Gaussian noise at a fixed per-sample signal-to-noise ratio."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    out = []
    for s in samples:
        rng = rng_for(seed, "noise", s.sample_id)
        p_signal = float(np.mean(s.values ** 2))
        sigma = np.sqrt(p_signal * 10.0 ** (-snr_db / 10.0))
        noisy = s.values + rng.normal(0.0, sigma, size=s.values.shape)
        out.append(TimeSeriesSample(
            values=noisy, label=s.label, sample_id=s.sample_id,
            f1=s.f1, f2=s.f2, block_mask=s.block_mask, block_offsets=s.block_offsets))
    return out


def split_indices(n: int, fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
                  seed: int = 0) -> tuple[list[int], list[int], list[int]]:
    """Deterministic shuffled train/val/test split (counts rounded, test takes rest)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train = order[:n_train]
    val = order[n_train:n_train + n_val]
    test = order[n_train + n_val:]
    return train.tolist(), val.tolist(), test.tolist()


# ---------------------------------------------------------------------------
# CSV interface (header: m0_t0 ... m{M-1}_t{T-1}, label)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    m: int
    t: int
    label_column: str = "label"
    labels: Optional[tuple] = None  # if set, any other label is a parse error


def feature_columns(m: int, t: int) -> list[str]:
    return [f"m{i}_t{j}" for i in range(m) for j in range(t)]


def save_csv(samples: Sequence[TimeSeriesSample], path: str | Path) -> None:
    if not samples:
        raise ValueError("cannot save an empty dataset")
    m, t = samples[0].shape
    header = feature_columns(m, t) + ["label"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for s in samples:
            row = s.values.reshape(-1)
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write(f",{s.label}\n")


def save_metadata(samples: Sequence[TimeSeriesSample], path: str | Path,
                  extra: Optional[dict] = None) -> None:
    """JSON sidecar with the generator's per-sample ground truth."""
    doc = {
        "samples": [
            {
                "sample_id": s.sample_id,
                "label": s.label,
                "f1": s.f1,
                "f2": s.f2,
                "block_offsets": list(s.block_offsets) if s.block_offsets else None,
            }
            for s in samples
        ],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_csv(path: str | Path, schema: CsvSchema) -> list[TimeSeriesSample]:
    expected = feature_columns(schema.m, schema.t)
    n_features = len(expected)
    samples: list[TimeSeriesSample] = []
    label_values: list = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row is mandatory") from None
        if header[:n_features] != expected:
            raise ParseError(
                f"{path}: line 1: header does not match schema "
                f"(expected {schema.m}x{schema.t} feature columns m0_t0...)")
        try:
            label_idx = header.index(schema.label_column)
        except ValueError:
            raise ParseError(
                f"{path}: line 1: missing label column {schema.label_column!r}") from None
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: line {line_no}: expected {len(header)} cells, got {len(row)}")
            try:
                values = np.array([float(c) for c in row[:n_features]])
            except ValueError as exc:
                raise ParseError(f"{path}: line {line_no}: non-numeric cell ({exc})") from None
            raw_label = row[label_idx]
            if schema.labels is not None and _coerce_label(raw_label) not in schema.labels:
                raise ParseError(
                    f"{path}: line {line_no}: unknown label {raw_label!r} "
                    f"(expected one of {list(schema.labels)})")
            label_values.append(_coerce_label(raw_label))
            samples.append(TimeSeriesSample(
                values=values.reshape(schema.m, schema.t),
                label=-1, sample_id=len(samples)))
    mapping = {lab: i for i, lab in enumerate(sorted(set(label_values), key=repr))}
    for s, raw in zip(samples, label_values):
        s.label = mapping[raw]
    return samples


def _coerce_label(cell: str):
    try:
        as_float = float(cell)
    except ValueError:
        return cell
    if as_float == int(as_float):
        return int(as_float)
    return as_float
