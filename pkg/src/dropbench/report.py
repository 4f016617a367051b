"""Self-contained SVG rendering: ridge-line plots, curve plots, sample panels.

No graphics dependency: documents are assembled from path/line/text elements
with fixed-precision coordinates, so identical inputs produce byte-identical
files and tests can assert on path geometry directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corruption import CurvePoint, round_half_up, rank_positive
from .distshape import DropDistribution
from .errors import ParameterError
from .metrics import MetricTable, table_to_dict

# Layout constants (exported so tests can invert the coordinate transform).
MARGIN_LEFT = 60.0
MARGIN_RIGHT = 20.0
MARGIN_TOP = 34.0
MARGIN_BOTTOM = 42.0

PALETTE = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4",
           "#8c613c", "#dc7ec0", "#797979", "#d5bb67", "#82c6e2")


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


class _Svg:
    def __init__(self, width: float, height: float, comment: Optional[str] = None):
        self.width = width
        self.height = height
        self.parts: list[str] = [
            '<?xml version="1.0" encoding="UTF-8"?>\n',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{_fmt(width)}" height="{_fmt(height)}" '
            f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">\n',
        ]
        if comment:
            self.parts.append(f"<!-- {_esc(comment)} -->\n")
        self.parts.append(
            f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" '
            f'fill="#ffffff"/>\n')

    def line(self, x1, y1, x2, y2, color="#333333", width=1.0):
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{_fmt(width)}"/>\n')

    def path(self, points: Sequence[tuple[float, float]], fill: str = "none",
             stroke: str = "#333333", stroke_width: float = 1.0,
             opacity: float = 1.0, close: bool = False):
        if not points:
            return
        d = "M" + " L".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        if close:
            d += " Z"
        self.parts.append(
            f'<path d="{d}" fill="{fill}" stroke="{stroke}" '
            f'stroke-width="{_fmt(stroke_width)}" opacity="{_fmt(opacity)}"/>\n')

    def circle(self, x, y, r, fill="#d62728"):
        self.parts.append(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}" fill="{fill}"/>\n')

    def text(self, x, y, s, size=11.0, anchor="start", color="#222222"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="Helvetica,Arial,sans-serif" '
            f'font-size="{_fmt(size)}" text-anchor="{anchor}" fill="{color}">{_esc(s)}</text>\n')

    def render(self) -> str:
        return "".join(self.parts) + "</svg>\n"


@dataclass(frozen=True)
class RidgePlotSpec:
    k_levels: tuple[float, ...]
    x_window: tuple[float, float] = (-0.25, 1.25)
    overlap: float = 0.5           # fraction of the row step a curve may spill upward
    width: float = 480.0
    row_step: float = 34.0
    color: str = PALETTE[0]


def render_ridgeline(distributions: Sequence[DropDistribution],
                     spec: RidgePlotSpec, title: str = "") -> str:
    """Stacked per-k densities, smallest k at the bottom.

    Every k in spec.k_levels must come with a non-empty density; the display
    window clips the drawn range but never the underlying data.
    """
    by_k = {d.k: d for d in distributions}
    for k in spec.k_levels:
        if k not in by_k:
            raise ParameterError(f"no distribution supplied for k={k}")
        if by_k[k].density.size == 0 or float(np.max(by_k[k].density)) <= 0.0:
            raise ParameterError(f"empty density for k={k}")

    n_rows = len(spec.k_levels)
    plot_w = spec.width - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = n_rows * spec.row_step
    height = MARGIN_TOP + plot_h + MARGIN_BOTTOM
    svg = _Svg(spec.width, height)
    if title:
        svg.text(MARGIN_LEFT, MARGIN_TOP - 14.0, title, size=13.0)

    x_lo, x_hi = spec.x_window

    def px(value: float) -> float:
        return MARGIN_LEFT + (value - x_lo) / (x_hi - x_lo) * plot_w

    peak = max(float(np.max(by_k[k].density)) for k in spec.k_levels)
    amp = spec.row_step * (1.0 + spec.overlap)

    # draw top row first so lower (later) rows overlap it
    for row, k in enumerate(reversed(spec.k_levels)):
        dist = by_k[k]
        base_y = MARGIN_TOP + (row + 1) * spec.row_step
        inside = (dist.grid >= x_lo) & (dist.grid <= x_hi)
        xs = dist.grid[inside]
        ys = dist.density[inside]
        if xs.size == 0:
            xs = np.array([x_lo, x_hi])
            ys = np.zeros(2)
        pts = [(px(float(x)), base_y - float(y) / peak * amp)
               for x, y in zip(xs, ys)]
        outline = [(px(float(xs[0])), base_y)] + pts + [(px(float(xs[-1])), base_y)]
        svg.path(outline, fill=spec.color, stroke="#1f3c78", stroke_width=0.8,
                 opacity=0.85, close=True)
        svg.text(MARGIN_LEFT - 8.0, base_y - 2.0, f"k={k:.2f}", size=10.0, anchor="end")

    axis_y = MARGIN_TOP + plot_h
    svg.line(MARGIN_LEFT, axis_y, MARGIN_LEFT + plot_w, axis_y)
    for tick in np.linspace(x_lo, x_hi, 7):
        tx = px(float(tick))
        svg.line(tx, axis_y, tx, axis_y + 4.0)
        svg.text(tx, axis_y + 16.0, f"{tick:.2f}", size=10.0, anchor="middle")
    svg.text(MARGIN_LEFT + plot_w / 2.0, axis_y + 32.0,
             "normalized score drop", size=11.0, anchor="middle")
    svg.text(14.0, MARGIN_TOP + plot_h / 2.0, "k", size=11.0, anchor="middle")
    return svg.render()


def render_curves(curves: dict[str, tuple[Sequence[float], Sequence[float]]],
                  title: str = "", x_label: str = "", y_label: str = "",
                  width: float = 480.0, height: float = 320.0,
                  y_window: Optional[tuple[float, float]] = None) -> str:
    """Multi-series line plot with a legend; series are drawn in sorted order."""
    if not curves:
        raise ParameterError("no curves to draw")
    lengths = {len(xs) for xs, _ in curves.values()}
    grids = {tuple(xs) for xs, _ in curves.values()}
    if len(grids) != 1:
        raise ParameterError("all curves must share the same x grid")

    plot_w = width - MARGIN_LEFT - MARGIN_RIGHT - 120.0  # room for legend
    plot_h = height - MARGIN_TOP - MARGIN_BOTTOM
    xs0 = np.asarray(next(iter(grids)), dtype=np.float64)
    all_y = np.concatenate([np.asarray(ys, dtype=np.float64) for _, ys in curves.values()])
    if y_window is None:
        y_lo, y_hi = float(all_y.min()), float(all_y.max())
        if y_hi <= y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        y_lo, y_hi = y_window
    x_lo, x_hi = float(xs0.min()), float(xs0.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    svg = _Svg(width, height)
    if title:
        svg.text(MARGIN_LEFT, MARGIN_TOP - 14.0, title, size=13.0)

    def px(x: float) -> float:
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    svg.line(MARGIN_LEFT, MARGIN_TOP + plot_h, MARGIN_LEFT + plot_w, MARGIN_TOP + plot_h)
    svg.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, MARGIN_TOP + plot_h)
    for tick in np.linspace(x_lo, x_hi, 6):
        tx = px(float(tick))
        svg.line(tx, MARGIN_TOP + plot_h, tx, MARGIN_TOP + plot_h + 4.0)
        svg.text(tx, MARGIN_TOP + plot_h + 16.0, f"{tick:.2f}", size=10.0, anchor="middle")
    for tick in np.linspace(y_lo, y_hi, 5):
        ty = py(float(tick))
        svg.line(MARGIN_LEFT - 4.0, ty, MARGIN_LEFT, ty)
        svg.text(MARGIN_LEFT - 8.0, ty + 3.0, f"{tick:.2f}", size=10.0, anchor="end")
    if x_label:
        svg.text(MARGIN_LEFT + plot_w / 2.0, height - 10.0, x_label, size=11.0, anchor="middle")
    if y_label:
        svg.text(14.0, MARGIN_TOP - 14.0, y_label, size=11.0)

    legend_y = MARGIN_TOP + 6.0
    for idx, name in enumerate(sorted(curves)):
        xs, ys = curves[name]
        color = PALETTE[idx % len(PALETTE)]
        pts = [(px(float(x)), py(float(np.clip(y, y_lo, y_hi))))
               for x, y in zip(xs, ys)]
        svg.path(pts, stroke=color, stroke_width=1.6)
        lx = MARGIN_LEFT + plot_w + 12.0
        svg.line(lx, legend_y - 4.0, lx + 18.0, legend_y - 4.0, color=color, width=2.0)
        svg.text(lx + 24.0, legend_y, name, size=10.0)
        legend_y += 16.0
    return svg.render()


def drop_curves_figure(curves_by_method: dict[str, Sequence[CurvePoint]],
                       scheme: str) -> str:
    """Mean-drop vs corruption-ratio curves for one scheme across methods."""
    series = {}
    for method, points in sorted(curves_by_method.items()):
        series[method] = ([p.n_ratio for p in points], [p.mean_drop for p in points])
    # methods have different ratio grids; render each against its own axis by
    # resampling onto a shared [0, max] grid would distort; draw raw instead.
    svg_curves: dict[str, tuple[list[float], list[float]]] = {}
    grid = None
    for method, (xs, ys) in series.items():
        if grid is None:
            grid = xs
        if xs != grid:
            # fall back to k-indexed drawing when ratio grids differ
            return render_curves(
                {m: (list(range(len(x))), y) for m, (x, y) in series.items()},
                title=f"mean normalized score drop ({scheme} scheme)",
                x_label="k index", y_label="mean drop")
        svg_curves[method] = (xs, ys)
    return render_curves(
        svg_curves, title=f"mean normalized score drop ({scheme} scheme)",
        x_label="mean corruption ratio", y_label="mean drop")


def per_sample_report(samples: Sequence, relevance_maps: dict, drops: dict,
                      k: float, width: float = 900.0) -> str:
    """Figure with one panel per sample: traces, top-k markers, drop in title.

    `drops` maps sample_id -> normalized score drop at this k; markers are
    the top round(|R+| * k) positions of the sample's relevance map.
    """
    if not samples:
        raise ParameterError("no samples to draw")
    panel_h = 120.0
    height = MARGIN_TOP + len(samples) * (panel_h + 28.0) + MARGIN_BOTTOM
    svg = _Svg(width, height)
    plot_w = width - MARGIN_LEFT - MARGIN_RIGHT

    y_cursor = MARGIN_TOP
    for sample in samples:
        m, t = sample.values.shape
        rmap = relevance_maps[sample.sample_id]
        desc, _ = rank_positive(rmap.scores)
        count = round_half_up(len(desc) * k)
        marked = set(desc[:count].tolist())
        drop = drops.get(sample.sample_id)
        title = f"sample {sample.sample_id}: drop {drop:.3f} at top-{int(round(k * 100))}%"
        svg.text(MARGIN_LEFT, y_cursor, title, size=11.0)
        lane_h = panel_h / m
        vmax = float(np.max(np.abs(sample.values))) or 1.0
        for feat in range(m):
            base = y_cursor + 10.0 + feat * lane_h + lane_h / 2.0
            pts = []
            for j in range(t):
                x = MARGIN_LEFT + j / max(t - 1, 1) * plot_w
                y = base - sample.values[feat, j] / vmax * (lane_h * 0.45)
                pts.append((x, y))
            svg.path(pts, stroke="#555555", stroke_width=0.8)
            for j in range(t):
                if feat * t + j in marked:
                    svg.circle(pts[j][0], pts[j][1], 1.6)
        y_cursor += panel_h + 28.0
    return svg.render()


# ---------------------------------------------------------------------------
# table and density exports
# ---------------------------------------------------------------------------

def emit_tables(table: MetricTable, csv_path: str | Path, json_path: str | Path,
                config_hash: Optional[str] = None) -> None:
    import json as _json

    doc = table_to_dict(table)
    doc["schema_version"] = 1
    if config_hash is not None:
        doc["config_hash"] = config_hash
    Path(json_path).write_text(_json.dumps(doc, indent=2, sort_keys=True),
                               encoding="utf-8")

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("method,metric,mean,std,starred_mean,starred_std\n")
        for metric in table.metrics:
            for method in table.methods:
                c = table.cells[metric][method]
                fh.write(f"{method},{metric},{c.mean:.17g},{c.std:.17g},"
                         f"{c.starred_mean:.17g},{c.starred_std:.17g}\n")


def read_table_csv(path: str | Path) -> dict[tuple[str, str], tuple[float, float, float, float]]:
    """Parse emit_tables output back into (method, metric) -> cell values."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("method,"):
            continue
        method, metric, mean, std, sm, ss = line.split(",")
        out[(method, metric)] = (float(mean), float(std), float(sm), float(ss))
    return out


def write_density_csv(dist: DropDistribution, path: str | Path,
                      config_hash: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("grid,density\n")
        for g, d in zip(dist.grid, dist.density):
            fh.write(f"{g:.17g},{d:.17g}\n")
