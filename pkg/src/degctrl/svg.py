"""Minimal SVG output: line plots with optional log axes and a shaded field map."""

from __future__ import annotations

import numpy as np

W, H = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 80, 20, 40, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, log: bool) -> list:
    if log:
        return [10.0**k for k in range(int(np.floor(lo)), int(np.ceil(hi)) + 1)]
    return list(np.linspace(lo, hi, 5))


def _label(v: float, log: bool) -> str:
    return f"1e{int(round(np.log10(v)))}" if log else f"{v:.3g}"


def line_plot(series: dict, xlabel: str, ylabel: str, title: str = "", logx: bool = False, logy: bool = False) -> str:
    """``series`` maps a legend name to an (x, y) pair. Nonpositive values are dropped on log axes."""
    cleaned = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0
        if logy:
            keep &= y > 0
        cleaned[name] = (x[keep], y[keep])
    tx = (lambda v: np.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: np.log10(v)) if logy else (lambda v: v)
    allx = np.concatenate([tx(x) for x, _ in cleaned.values()] or [np.array([0.0, 1.0])])
    ally = np.concatenate([ty(y) for _, y in cleaned.values()] or [np.array([0.0, 1.0])])
    if allx.size == 0:
        allx = np.array([0.0, 1.0])
    if ally.size == 0:
        ally = np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if logx:
        x0, x1 = np.floor(x0), np.ceil(x1)
    if logy:
        y0, y1 = np.floor(y0), np.ceil(y1)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1, logx):
        v = np.log10(t) if logx else t
        out.append(f'<line x1="{_fmt(px(v))}" y1="{TOP + ph}" x2="{_fmt(px(v))}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(v))}" y="{TOP + ph + 20}" text-anchor="middle">{_label(t, logx)}</text>')
    for t in _ticks(y0, y1, logy):
        v = np.log10(t) if logy else t
        out.append(f'<line x1="{LEFT - 5}" y1="{_fmt(py(v))}" x2="{LEFT}" y2="{_fmt(py(v))}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_fmt(py(v) + 4)}" text-anchor="end">{_label(t, logy)}</text>')
    for i, (name, (x, y)) in enumerate(cleaned.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(tx(x), ty(y)))
        if pts:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for a, b in zip(tx(x), ty(y)):
                out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="2.5" fill="{color}"/>')
        out.append(f'<text x="{LEFT + pw - 10}" y="{TOP + 16 + 16 * i}" text-anchor="end" fill="{color}">{_escape(name)}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" transform="rotate(-90 18 {TOP + ph / 2})">{_escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="14">{_escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def field_map(values: np.ndarray, xlabel: str, ylabel: str, title: str = "", extent=(0.0, 1.0, 0.0, 1.0)) -> str:
    """Shaded cells for a 2-D array (rows along y), signed log scale so blow-ups stay readable."""
    v = np.asarray(values, float)
    s = np.sign(v) * np.log10(1.0 + np.abs(v))
    lo, hi = float(np.nanmin(s)), float(np.nanmax(s))
    span = hi - lo if hi > lo else 1.0
    ny, nx = v.shape
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    cw, ch = pw / nx, ph / ny
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">']
    for i in range(ny):
        for j in range(nx):
            q = (s[i, j] - lo) / span
            r, g, b = int(255 * q), int(80 + 100 * (1 - abs(2 * q - 1))), int(255 * (1 - q))
            out.append(f'<rect x="{_fmt(LEFT + j * cw)}" y="{_fmt(TOP + ph - (i + 1) * ch)}" '
                       f'width="{_fmt(cw + 0.5)}" height="{_fmt(ch + 0.5)}" fill="rgb({r},{g},{b})"/>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    x0, x1, y0, y1 = extent
    out.append(f'<text x="{LEFT}" y="{TOP + ph + 20}" text-anchor="middle">{x0:.3g}</text>')
    out.append(f'<text x="{LEFT + pw}" y="{TOP + ph + 20}" text-anchor="middle">{x1:.3g}</text>')
    out.append(f'<text x="{LEFT - 8}" y="{TOP + ph}" text-anchor="end">{y0:.3g}</text>')
    out.append(f'<text x="{LEFT - 8}" y="{TOP + 10}" text-anchor="end">{y1:.3g}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" transform="rotate(-90 18 {TOP + ph / 2})">{_escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="14">{_escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
