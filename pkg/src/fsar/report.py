"""Plain-SVG training reports from metrics CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import DataError, FormatError
from .engine import METRICS_HEADER


def load_metrics(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"metrics file {path} is empty")
    if rows[0] != METRICS_HEADER:
        raise FormatError(f"metrics file {path} has header {rows[0]}, expected {METRICS_HEADER}")
    if len(rows) == 1:
        raise DataError(f"metrics file {path} has a header but no rows")
    out = []
    for raw in rows[1:]:
        out.append({key: float(value) for key, value in zip(METRICS_HEADER, raw)})
    return out


def _polyline(points: list[tuple[float, float]], color: str) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>'


def render_svg(rows: list[dict], path: str | Path) -> None:
    """Accuracy and total-loss curves over training episodes."""
    width, height = 720, 400
    left, right, top, bottom = 60, 60, 30, 50
    plot_w = width - left - right
    plot_h = height - top - bottom

    episodes = [r["episode"] for r in rows]
    accuracy = [r["accuracy"] for r in rows]
    loss = [r["total"] for r in rows]
    x0, x1 = min(episodes), max(episodes)
    x_span = max(x1 - x0, 1.0)
    loss_max = max(max(loss), 1e-9)

    def x_px(e):
        return left + (e - x0) / x_span * plot_w

    def acc_px(a):
        return top + (1.0 - a) * plot_h

    def loss_px(l):
        return top + (1.0 - l / loss_max) * plot_h

    acc_points = [(x_px(e), acc_px(a)) for e, a in zip(episodes, accuracy)]
    loss_points = [(x_px(e), loss_px(l)) for e, l in zip(episodes, loss)]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#888"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + (1.0 - frac) * plot_h
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" '
            'stroke="#ddd" stroke-width="0.5"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" font-size="11" text-anchor="end" '
            f'fill="#1f77b4">{frac:.2f}</text>'
        )
        parts.append(
            f'<text x="{left + plot_w + 8}" y="{y + 4:.1f}" font-size="11" '
            f'fill="#d62728">{frac * loss_max:.2f}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        e = x0 + frac * x_span
        parts.append(
            f'<text x="{x_px(e):.1f}" y="{height - bottom + 18}" font-size="11" '
            f'text-anchor="middle" fill="#333">{e:.0f}</text>'
        )
    parts.append(_polyline(acc_points, "#1f77b4"))
    parts.append(_polyline(loss_points, "#d62728"))
    parts.append(
        f'<text x="{left}" y="{top - 10}" font-size="12" fill="#1f77b4">accuracy (left)</text>'
    )
    parts.append(
        f'<text x="{left + 140}" y="{top - 10}" font-size="12" fill="#d62728">total loss (right)</text>'
    )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" text-anchor="middle" '
        'fill="#333">episode</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def summarize(rows: list[dict]) -> str:
    n = len(rows)
    window = rows[-min(100, n):]
    lines = [
        f"{'metric':<12}{'first':>12}{'last':>12}{'tail mean':>12}",
        "-" * 48,
    ]
    for key in ("L_CE", "L_H", "L_S", "total", "accuracy"):
        first = rows[0][key]
        last = rows[-1][key]
        tail = sum(r[key] for r in window) / len(window)
        lines.append(f"{key:<12}{first:>12.4f}{last:>12.4f}{tail:>12.4f}")
    lines.append(f"episodes: {n}")
    return "\n".join(lines)
