"""Minimal deterministic SVG line plots and heatmaps for run reports."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

W, H = 640, 420
MARGIN = dict(left=78, right=24, top=36, bottom=56)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _tick_label(v: float, log: bool) -> str:
    if log:
        return f"1e{int(round(v))}"
    return f"{v:.4g}"


def line_plot(series: Sequence[tuple], xlabel: str = "", ylabel: str = "", title: str = "",
              logx: bool = False, logy: bool = False) -> str:
    """``series`` is a list of (label, x, y).  Non-finite or (on log axes) non-positive points are dropped."""
    pts = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        x, y = x[ok], y[ok]
        if logx:
            x = np.log10(x)
        if logy:
            y = np.log10(y)
        pts.append((label, x, y))
    allx = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0, 1.0])
    ally = np.concatenate([p[2] for p in pts]) if pts else np.array([0.0, 1.0])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = W - MARGIN["left"] - MARGIN["right"]
    ph = H - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_fmt(sx(t))}" y1="{MARGIN["top"] + ph}" x2="{_fmt(sx(t))}" '
                   f'y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(sx(t))}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">'
                   f'{_tick_label(t, logx)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_fmt(sy(t))}" x2="{MARGIN["left"]}" '
                   f'y2="{_fmt(sy(t))}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_fmt(sy(t) + 4)}" text-anchor="end">'
                   f'{_tick_label(t, logy)}</text>')
    for k, (label, x, y) in enumerate(pts):
        color = PALETTE[k % len(PALETTE)]
        if len(x):
            path = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, y))
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>')
            for a, b in zip(x, y):
                out.append(f'<circle cx="{_fmt(sx(a))}" cy="{_fmt(sy(b))}" r="2.5" fill="{color}"/>')
        out.append(f'<text x="{MARGIN["left"] + 10}" y="{MARGIN["top"] + 16 + 15 * k}" '
                   f'fill="{color}">{_esc(str(label))}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 14}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {H / 2})">{_esc(ylabel)}</text>')
    out.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color(t: float, cyclic: bool) -> str:
    if not np.isfinite(t):
        return "#bbbbbb"
    t = min(max(t, 0.0), 1.0)
    if cyclic:
        # hue wheel, so +pi and -pi get the same colour
        h = 6.0 * t
        i = int(h) % 6
        f = h - int(h)
        rgb = [(1, f, 0), (1 - f, 1, 0), (0, 1, f), (0, 1 - f, 1), (f, 0, 1), (1, 0, 1 - f)][i]
    else:
        # dark blue -> yellow
        rgb = (t ** 0.8, 0.15 + 0.8 * t, 0.45 * (1 - t) + 0.1)
    return "#%02x%02x%02x" % tuple(int(round(255 * c)) for c in rgb)


def heatmap(values: np.ndarray, x: Sequence[float], y: Sequence[float], title: str = "",
            xlabel: str = "", ylabel: str = "", vmin: float | None = None,
            vmax: float | None = None, cyclic: bool = False, colorbar_label: str = "") -> str:
    """Cell heatmap of ``values[iy, ix]``; y increases upward.  NaN cells are grey (gaps)."""
    v = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    finite = v[np.isfinite(v)]
    lo = float(finite.min()) if vmin is None and finite.size else (vmin if vmin is not None else 0.0)
    hi = float(finite.max()) if vmax is None and finite.size else (vmax if vmax is not None else 1.0)
    if hi <= lo:
        hi = lo + 1.0
    pw = W - MARGIN["left"] - MARGIN["right"] - 70
    ph = H - MARGIN["top"] - MARGIN["bottom"]
    ny, nx = v.shape
    cw, ch = pw / nx, ph / ny
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    for i in range(ny):
        for j in range(nx):
            c = _color((v[i, j] - lo) / (hi - lo), cyclic)
            out.append(f'<rect x="{_fmt(MARGIN["left"] + j * cw)}" '
                       f'y="{_fmt(MARGIN["top"] + (ny - 1 - i) * ch)}" width="{_fmt(cw + 0.3)}" '
                       f'height="{_fmt(ch + 0.3)}" fill="{c}"/>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{_fmt(pw)}" '
               f'height="{_fmt(ph)}" fill="none" stroke="black"/>')
    for t in _ticks(x[0], x[-1]):
        px = MARGIN["left"] + (t - x[0]) / (x[-1] - x[0]) * pw
        out.append(f'<text x="{_fmt(px)}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y[0], y[-1]):
        py = MARGIN["top"] + (1 - (t - y[0]) / (y[-1] - y[0])) * ph
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_fmt(py + 4)}" text-anchor="end">{t:.4g}</text>')
    # colour bar
    bx = MARGIN["left"] + pw + 20
    for k in range(50):
        t = k / 49
        out.append(f'<rect x="{bx}" y="{_fmt(MARGIN["top"] + (1 - t) * (ph - ph / 50))}" width="16" '
                   f'height="{_fmt(ph / 50 + 0.3)}" fill="{_color(t, cyclic)}"/>')
    out.append(f'<text x="{bx + 20}" y="{MARGIN["top"] + 10}">{hi:.3g}</text>')
    out.append(f'<text x="{bx + 20}" y="{MARGIN["top"] + ph}">{lo:.3g}</text>')
    if colorbar_label:
        out.append(f'<text x="{bx + 8}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">'
                   f'{_esc(colorbar_label)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{H - 14}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {H / 2})">{_esc(ylabel)}</text>')
    out.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
