"""Minimal deterministic SVG line charts."""

from __future__ import annotations

from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=160, top=30, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo, hi, count=5):
    return np.linspace(lo, hi, count)


def _normalise(series):
    items = [(k, *v) for k, v in series.items()] if isinstance(series, dict) else list(series)
    out = []
    for label, times, values in items:
        t = np.asarray(times, dtype=float).ravel()
        y = np.asarray(values, dtype=float).ravel()
        if t.shape != y.shape:
            raise ValueError(f"series {label!r}: {t.size} times but {y.size} values")
        if t.size == 0:
            raise ValueError(f"series {label!r} is empty")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError(f"series {label!r} has non-finite points")
        out.append((str(label), t, y))
    if not out:
        raise ValueError("nothing to plot: no series given")
    return out


def render_svg(series, title: str = "", xlabel: str = "t", ylabel: str = "") -> str:
    """SVG text for ``series``: a mapping ``label -> (times, values)`` or a list of
    ``(label, times, values)``."""
    data = _normalise(series)
    t_all = np.concatenate([t for _, t, _ in data])
    y_all = np.concatenate([y for _, _, y in data])
    x0, x1 = float(t_all.min()), float(t_all.max())
    y0, y1 = float(y_all.min()), float(y_all.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = max(abs(y0) * 0.1, 0.5)
        y0, y1 = y0 - pad, y1 + pad
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    sx = lambda x: left + (x - x0) / (x1 - x0) * pw
    sy = lambda y: top + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    bottom = top + ph
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{left + pw}" y2="{bottom}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>')
    for xv in _ticks(x0, x1):
        x = sx(xv)
        out.append(f'<line x1="{_fmt(x)}" y1="{bottom}" x2="{_fmt(x)}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{bottom + 18}" text-anchor="middle">{xv:.4g}</text>')
    for yv in _ticks(y0, y1):
        y = sy(yv)
        out.append(f'<line x1="{left - 5}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_fmt(y + 4)}" text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2:.2f})">{_esc(ylabel)}</text>')

    for j, (label, t, y) in enumerate(data):
        color = PALETTE[j % len(PALETTE)]
        order = np.argsort(t, kind="stable")
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(t[order], y[order]))
        if t.size == 1:
            out.append(f'<circle cx="{_fmt(sx(t[0]))}" cy="{_fmt(sy(y[0]))}" r="3.5" fill="{color}"/>')
        else:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = top + 14 + 18 * j
        lx = left + pw + 14
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_plot(series, path, title: str = "", xlabel: str = "t", ylabel: str = "") -> Path:
    """Write an SVG line chart; single-point series are drawn as a marker."""
    path = Path(path)
    text = render_svg(series, title, xlabel, ylabel)
    path.write_text(text, encoding="utf-8")
    return path
