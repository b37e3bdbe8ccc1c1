"""Self-contained SVG rendering for embeddings, null histograms, heatmaps.

No plotting dependency: the outputs are small hand-built XML documents,
deterministic for fixed inputs so they can be diffed in tests. Scatter plots
put exactly one circle per data row. Axis captions name the strongest input
contributions of each projection column, keeping the axes interpretable.
"""

from __future__ import annotations

from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError

# Anchor colors of a perceptually uniform dark-to-bright map, interpolated
# linearly in RGB between stops.
_CONTINUOUS_STOPS = (
    (68, 1, 84),
    (72, 40, 120),
    (62, 74, 137),
    (49, 104, 142),
    (38, 130, 142),
    (31, 158, 137),
    (53, 183, 121),
    (109, 205, 89),
    (180, 222, 44),
    (253, 231, 37),
)

CATEGORICAL_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def color_continuous(t: float) -> str:
    """Map t in [0,1] to a hex color; out-of-range values are clipped."""
    if not np.isfinite(t):
        return "#cccccc"
    t = min(max(float(t), 0.0), 1.0)
    pos = t * (len(_CONTINUOUS_STOPS) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(_CONTINUOUS_STOPS) - 1)
    frac = pos - lo
    rgb = [
        round(_CONTINUOUS_STOPS[lo][c] + frac * (_CONTINUOUS_STOPS[hi][c] - _CONTINUOUS_STOPS[lo][c]))
        for c in range(3)
    ]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def color_categorical(label: int) -> str:
    return CATEGORICAL_PALETTE[int(label) % len(CATEGORICAL_PALETTE)]


def axis_annotations(projection, column_names: Optional[Sequence[str]] = None, top: int = 3):
    """Top-weighted input names per projection axis, e.g. 'x3 +0.71, x1 -0.52'."""
    p = np.asarray(projection, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValidationError("projection must be D x 2")
    d = p.shape[0]
    if column_names is None:
        column_names = [f"x{i}" for i in range(d)]
    if len(column_names) != d:
        raise ValidationError("column_names length must equal D")
    labels = []
    for axis in range(2):
        order = np.argsort(-np.abs(p[:, axis]), kind="stable")[: min(top, d)]
        parts = [f"{column_names[i]} {p[i, axis]:+.2f}" for i in order]
        labels.append(", ".join(parts))
    return labels[0], labels[1]


def _point_colors(values, kind: str, n: int) -> List[str]:
    if values is None:
        return ["#31688e"] * n
    v = np.asarray(values)
    if v.shape[0] != n:
        raise ValidationError("color values must match the point count")
    if kind == "categorical":
        return [color_categorical(int(c)) for c in v]
    v = v.astype(np.float64)
    finite = v[np.isfinite(v)]
    lo = finite.min() if finite.size else 0.0
    hi = finite.max() if finite.size else 1.0
    span = hi - lo
    if span == 0.0:
        return [color_continuous(0.5)] * n
    return [color_continuous((x - lo) / span) for x in v]


def _panel(points, colors, x0, y0, width, height, title, xlabel, ylabel):
    """Markup for one scatter panel anchored at (x0, y0)."""
    pts = np.asarray(points, dtype=np.float64)
    pad = 0.05
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo == 0.0, 1.0, hi - lo)
    lo = lo - pad * span
    span = span * (1 + 2 * pad)
    parts = [
        f'<rect x="{x0}" y="{y0}" width="{width}" height="{height}" '
        'fill="white" stroke="#888888"/>'
    ]
    if title:
        parts.append(
            f'<text x="{x0 + width / 2:.1f}" y="{y0 - 8}" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif">{escape(title)}</text>'
        )
    for i in range(pts.shape[0]):
        cx = x0 + (pts[i, 0] - lo[0]) / span[0] * width
        cy = y0 + height - (pts[i, 1] - lo[1]) / span[1] * height
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2.5" fill="{colors[i]}"/>')
    if xlabel:
        parts.append(
            f'<text x="{x0 + width / 2:.1f}" y="{y0 + height + 26}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{escape(xlabel)}</text>'
        )
    if ylabel:
        cx, cy = x0 - 26, y0 + height / 2
        parts.append(
            f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif" transform="rotate(-90 {cx} {cy:.1f})">'
            f"{escape(ylabel)}</text>"
        )
    return parts


def _document(width, height, body) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head] + body + ["</svg>"]) + "\n"


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValidationError("points must be n x 2 with n >= 1")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite coordinates")
    return pts


def scatter_svg(
    points,
    color_values=None,
    color_kind: str = "continuous",
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """One circle mark per row of points, colored by the response values."""
    pts = _check_points(points)
    colors = _point_colors(color_values, color_kind, pts.shape[0])
    body = _panel(pts, colors, 60, 30, 420, 420, title, xlabel, ylabel)
    return _document(540, 500, body)


def scatter_pair_svg(
    left_points,
    right_points,
    left_colors=None,
    right_colors=None,
    color_kind: str = "continuous",
    left_title: str = "train",
    right_title: str = "test",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Two scatter panels side by side (train-vs-test comparison)."""
    lp = _check_points(left_points)
    rp = _check_points(right_points)
    lc = _point_colors(left_colors, color_kind, lp.shape[0])
    rc = _point_colors(right_colors, color_kind, rp.shape[0])
    body = _panel(lp, lc, 60, 40, 380, 380, left_title, xlabel, ylabel)
    body += _panel(rp, rc, 490, 40, 380, 380, right_title, xlabel, "")
    return _document(930, 480, body)


def histogram_svg(
    values,
    marker: Optional[float] = None,
    bins: int = 30,
    title: str = "",
    xlabel: str = "",
) -> str:
    """Bar histogram with an optional vertical line at an observed value."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ValidationError("values must be a nonempty 1-D array")
    lo = float(v.min())
    hi = float(v.max())
    if marker is not None:
        lo = min(lo, float(marker))
        hi = max(hi, float(marker))
    if hi == lo:
        hi = lo + 1.0
    span = hi - lo
    lo -= 0.05 * span
    hi += 0.05 * span
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    x0, y0, width, height = 60, 30, 420, 380
    peak = max(int(counts.max()), 1)
    body = [
        f'<rect x="{x0}" y="{y0}" width="{width}" height="{height}" '
        'fill="white" stroke="#888888"/>'
    ]
    if title:
        body.append(
            f'<text x="{x0 + width / 2}" y="{y0 - 8}" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif">{escape(title)}</text>'
        )
    scale_x = width / (hi - lo)
    for i, c in enumerate(counts):
        if c == 0:
            continue
        bx = x0 + (edges[i] - lo) * scale_x
        bw = (edges[i + 1] - edges[i]) * scale_x
        bh = height * (int(c) / peak)
        body.append(
            f'<rect x="{bx:.2f}" y="{y0 + height - bh:.2f}" width="{bw:.2f}" '
            f'height="{bh:.2f}" fill="#31688e"/>'
        )
    if marker is not None:
        mx = x0 + (float(marker) - lo) * scale_x
        body.append(
            f'<line x1="{mx:.2f}" y1="{y0}" x2="{mx:.2f}" y2="{y0 + height}" '
            'stroke="#d62728" stroke-width="2"/>'
        )
    if xlabel:
        body.append(
            f'<text x="{x0 + width / 2}" y="{y0 + height + 26}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{escape(xlabel)}</text>'
        )
    return _document(540, 470, body)


def heatmap_svg(
    matrix,
    row_labels: Sequence,
    col_labels: Sequence,
    title: str = "",
    clamp: Optional[float] = None,
    cell_format: str = "{:.2f}",
) -> str:
    """Matrix as colored cells with printed values.

    clamp caps the color scale (values above it saturate); the printed
    numbers keep their true values.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError("matrix must be 2-D")
    rows, cols = m.shape
    if len(row_labels) != rows or len(col_labels) != cols:
        raise ValidationError("label counts must match the matrix shape")
    shown = np.minimum(m, clamp) if clamp is not None else m
    finite = shown[np.isfinite(shown)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    span = hi - lo if hi > lo else 1.0
    cell = 64
    x0, y0 = 90, 50
    width, height = cols * cell, rows * cell
    body = []
    if title:
        body.append(
            f'<text x="{x0 + width / 2}" y="{y0 - 24}" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif">{escape(title)}</text>'
        )
    for j, label in enumerate(col_labels):
        body.append(
            f'<text x="{x0 + j * cell + cell / 2}" y="{y0 - 6}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{escape(str(label))}</text>'
        )
    for i, label in enumerate(row_labels):
        body.append(
            f'<text x="{x0 - 8}" y="{y0 + i * cell + cell / 2 + 4}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{escape(str(label))}</text>'
        )
    for i in range(rows):
        for j in range(cols):
            value = m[i, j]
            if np.isfinite(value):
                fill = color_continuous((shown[i, j] - lo) / span)
                text = cell_format.format(value)
            else:
                fill = "#cccccc"
                text = "nan"
            x = x0 + j * cell
            y = y0 + i * cell
            body.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="#ffffff"/>'
            )
            body.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                f'font-size="10" font-family="sans-serif" fill="#ffffff">{escape(text)}</text>'
            )
    return _document(x0 + width + 30, y0 + height + 30, body)
