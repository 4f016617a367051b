"""Score-drop distribution statistics: KDE, skewness, excess kurtosis, shapes.

Skewness and kurtosis use biased sample central moments
kappa_i = mean((s - mean(s))^i): skew = kappa_3 / kappa_2^1.5 and
ekurt = kappa_4 / kappa_2^2 - 3.  Negative skew means the mass sits at high
drops with a left tail; positive excess kurtosis means a peaked distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 fallback

from .errors import ParameterError

KDE_GRID_SIZE = 512
BANDWIDTH_FLOOR = 1e-3
GRID_MARGIN_BANDWIDTHS = 3.0
MODE_THRESHOLD = 0.10       # local maxima below 10% of the peak are ignored
BIMODAL_SEPARATION = 0.40


def central_moments(samples: np.ndarray, orders: Sequence[int]) -> list[float]:
    s = np.asarray(samples, dtype=np.float64)
    centered = s - s.mean()
    return [float(np.mean(centered ** i)) for i in orders]


def skewness(samples: Sequence[float]) -> float:
    """Fisher-Pearson coefficient kappa_3 / kappa_2^(3/2); 0 when degenerate."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 3:
        raise ParameterError(f"skewness needs at least 3 samples, got {s.size}")
    k2, k3 = central_moments(s, (2, 3))
    if k2 == 0.0:
        return 0.0
    return k3 / k2 ** 1.5


def excess_kurtosis(samples: Sequence[float]) -> float:
    """kappa_4 / kappa_2^2 - 3; 0 for a normal population in the limit."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 4:
        raise ParameterError(f"excess kurtosis needs at least 4 samples, got {s.size}")
    k2, k4 = central_moments(s, (2, 4))
    if k2 == 0.0:
        return 0.0
    return k4 / k2 ** 2 - 3.0


def is_degenerate(samples: Sequence[float]) -> bool:
    s = np.asarray(samples, dtype=np.float64)
    return bool(s.size == 0 or np.all(s == s[0]))


def scott_bandwidth(samples: np.ndarray) -> float:
    s = np.asarray(samples, dtype=np.float64)
    return max(float(s.std()) * s.size ** (-0.2), BANDWIDTH_FLOOR)


def kde(samples: Sequence[float], bandwidth: Optional[float] = None,
        grid_size: int = KDE_GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel density on a uniform grid spanning the data +/- 3h.

    The curve is renormalized to integrate to exactly 1 over the grid
    (trapezoid), which keeps the unit-mass invariant even for near-spike
    inputs where the 3-bandwidth margin would clip tail mass.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 1:
        raise ParameterError("kde needs at least one sample")
    h = scott_bandwidth(s) if bandwidth is None else max(bandwidth, BANDWIDTH_FLOOR)
    lo = s.min() - GRID_MARGIN_BANDWIDTHS * h
    hi = s.max() + GRID_MARGIN_BANDWIDTHS * h
    grid = np.linspace(lo, hi, grid_size)
    z = (grid[None, :] - s[:, None]) / h
    density = np.exp(-0.5 * z ** 2).mean(axis=0) / (h * np.sqrt(2.0 * np.pi))
    mass = _trapezoid(density, grid)
    if mass > 0:
        density = density / mass
    return grid, density


@dataclass
class DropDistribution:
    k: float
    samples: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    skew: float
    ekurt: float
    degenerate: bool


def build_distribution(k: float, drops: Sequence[float]) -> DropDistribution:
    s = np.asarray(drops, dtype=np.float64)
    grid, density = kde(s)
    degenerate = is_degenerate(s)
    return DropDistribution(
        k=k, samples=s, grid=grid, density=density,
        skew=0.0 if degenerate else skewness(s),
        ekurt=0.0 if degenerate else excess_kurtosis(s),
        degenerate=degenerate)


def density_modes(grid: np.ndarray, density: np.ndarray,
                  threshold: float = MODE_THRESHOLD) -> list[float]:
    """Grid locations of local maxima above `threshold` * global max."""
    d = np.asarray(density)
    if d.size == 0 or d.max() <= 0:
        return []
    floor = threshold * d.max()
    modes = []
    for i in range(d.size):
        left = d[i - 1] if i > 0 else -np.inf
        right = d[i + 1] if i < d.size - 1 else -np.inf
        if d[i] > left and d[i] >= right and d[i] >= floor:
            modes.append(float(grid[i]))
    return modes


def classify_shape(dist: DropDistribution) -> str:
    """Taxonomy of drop distributions.

    A: unimodal with the mode above 0.8 and negative skew (robustly large
    drops); B: unimodal below 0.2 with positive skew (robustly small drops);
    C: unimodal mid-range; D: at least two modes separated by more than 0.4
    (polarized); anything else is 'other'.
    """
    modes = density_modes(dist.grid, dist.density)
    if len(modes) >= 2 and (max(modes) - min(modes)) > BIMODAL_SEPARATION:
        return "D"
    mode = float(dist.grid[int(np.argmax(dist.density))])
    if mode > 0.8 and dist.skew < 0:
        return "A"
    if mode < 0.2 and dist.skew > 0:
        return "B"
    if 0.2 <= mode <= 0.8:
        return "C"
    return "other"
