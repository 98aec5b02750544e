"""Static SVG charts: line, mean/std band, bar, and heatmap.

Output is plain SVG text with fixed-precision coordinates, so the same
data always renders to the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import sliding_average

KINDS = ("line", "band", "bar", "heatmap")
WIDTH, HEIGHT = 720, 440
MARGIN = dict(left=72, right=28, top=44, bottom=58)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
BACKGROUND = "#ffffff"
# viridis anchor colours, low to high
_VIRIDIS = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]


@dataclass
class PlotSpec:
    kind: str
    columns: list[str] = field(default_factory=list)
    window: int | None = None
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    output: str | Path = "plot.svg"
    labels: list[str] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; expected one of {KINDS}")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")


def _f(v: float) -> str:
    return f"{v:.2f}"


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        raise ValueError("non-finite axis range")
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(t, 12))
    return ticks


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect class="background" x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="{BACKGROUND}"/>',
        ]
        if title:
            self.text(WIDTH / 2, 24, title, anchor="middle", size=15)

    def text(self, x, y, s, anchor="start", size=12, rotate=None, cls="label"):
        rot = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text class="{cls}" x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" '
            f'font-size="{size}"{rot}>{escape(str(s))}</text>'
        )

    def add(self, element: str):
        self.parts.append(element)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Axes:
    """Maps data coordinates into the plot rectangle and draws the frame."""

    def __init__(self, canvas: _Canvas, xlim, ylim, xlabel="", ylabel="", xticks=None):
        self.c = canvas
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
        self.xt = xticks if xticks is not None else nice_ticks(*xlim)
        self.yt = nice_ticks(*ylim)
        self.xlim = (min(self.xt[0], xlim[0]), max(self.xt[-1], xlim[1]))
        self.ylim = (self.yt[0], self.yt[-1])
        self._frame(xlabel, ylabel, draw_xticks=xticks is None)

    def sx(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / ((hi - lo) or 1.0) * (self.x1 - self.x0)

    def sy(self, y):
        lo, hi = self.ylim
        return self.y0 - (y - lo) / ((hi - lo) or 1.0) * (self.y0 - self.y1)

    def _frame(self, xlabel, ylabel, draw_xticks=True):
        c = self.c
        c.add(
            f'<rect class="frame" x="{_f(self.x0)}" y="{_f(self.y1)}" width="{_f(self.x1 - self.x0)}" '
            f'height="{_f(self.y0 - self.y1)}" fill="none" stroke="#444"/>'
        )
        for t in self.yt:
            y = self.sy(t)
            c.add(f'<line class="tick" x1="{_f(self.x0 - 5)}" y1="{_f(y)}" x2="{_f(self.x0)}" y2="{_f(y)}" stroke="#444"/>')
            c.add(f'<line class="grid" x1="{_f(self.x0)}" y1="{_f(y)}" x2="{_f(self.x1)}" y2="{_f(y)}" stroke="#e5e5e5"/>')
            c.text(self.x0 - 8, y + 4, _fmt_tick(t), anchor="end", cls="ticklabel")
        if draw_xticks:
            for t in self.xt:
                x = self.sx(t)
                c.add(f'<line class="tick" x1="{_f(x)}" y1="{_f(self.y0)}" x2="{_f(x)}" y2="{_f(self.y0 + 5)}" stroke="#444"/>')
                c.text(x, self.y0 + 19, _fmt_tick(t), anchor="middle", cls="ticklabel")
        if xlabel:
            c.text((self.x0 + self.x1) / 2, HEIGHT - 16, xlabel, anchor="middle")
        if ylabel:
            c.text(18, (self.y0 + self.y1) / 2, ylabel, anchor="middle", rotate=-90)

    def points(self, xs, ys) -> str:
        return " ".join(f"{_f(self.sx(x))},{_f(self.sy(y))}" for x, y in zip(xs, ys))


def _legend(canvas: _Canvas, labels: Sequence[str], colors: Sequence[str]):
    x = WIDTH - MARGIN["right"] - 150
    for k, (label, color) in enumerate(zip(labels, colors)):
        y = MARGIN["top"] + 14 + 16 * k
        canvas.add(f'<line class="legend" x1="{_f(x)}" y1="{_f(y - 4)}" x2="{_f(x + 18)}" y2="{_f(y - 4)}" stroke="{color}" stroke-width="2"/>')
        canvas.text(x + 24, y, label, cls="legendlabel")


def _series(data: dict, name: str) -> np.ndarray:
    if name not in data:
        raise KeyError(f"column {name!r} not in plot data (have {sorted(data)})")
    arr = np.asarray(data[name], dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"column {name!r} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"column {name!r} has non-finite values")
    return arr


def _x_for(data: dict, n: int) -> np.ndarray:
    if "x" in data:
        x = np.asarray(data["x"], dtype=np.float64)
        if x.size != n:
            raise ValueError("x column length does not match series length")
        return x
    return np.arange(1, n + 1, dtype=np.float64)


def _line(spec: PlotSpec, data: dict) -> str:
    cols = spec.columns or [k for k in data if k != "x"]
    ys = [_series(data, c) for c in cols]
    if spec.window:
        ys = [sliding_average(y, spec.window) for y in ys]
    x = _x_for(data, ys[0].size)
    canvas = _Canvas(spec.title)
    ymin = min(float(y.min()) for y in ys)
    ymax = max(float(y.max()) for y in ys)
    ax = _Axes(canvas, (float(x.min()), float(x.max())), (ymin, ymax), spec.xlabel, spec.ylabel)
    colors = [PALETTE[k % len(PALETTE)] for k in range(len(ys))]
    for y, color, name in zip(ys, colors, cols):
        canvas.add(
            f'<polyline class="series" data-column="{escape(name)}" fill="none" stroke="{color}" '
            f'stroke-width="1.8" points="{ax.points(x, y)}"/>'
        )
    _legend(canvas, spec.labels or cols, colors)
    return canvas.render()


def _band(spec: PlotSpec, data: dict) -> str:
    """Columns come in (mean, std) pairs; each pair is one shaded series."""
    cols = spec.columns
    if not cols or len(cols) % 2:
        raise ValueError("band plots need columns as (mean, std) pairs")
    pairs = [(_series(data, cols[k]), _series(data, cols[k + 1])) for k in range(0, len(cols), 2)]
    if spec.window:
        pairs = [(sliding_average(m, spec.window), sliding_average(s, spec.window)) for m, s in pairs]
    x = _x_for(data, pairs[0][0].size)
    canvas = _Canvas(spec.title)
    ymin = min(float((m - s).min()) for m, s in pairs)
    ymax = max(float((m + s).max()) for m, s in pairs)
    ax = _Axes(canvas, (float(x.min()), float(x.max())), (ymin, ymax), spec.xlabel, spec.ylabel)
    colors = [PALETTE[k % len(PALETTE)] for k in range(len(pairs))]
    for (m, s), color in zip(pairs, colors):
        upper = ax.points(x, m + s)
        lower = ax.points(x[::-1], (m - s)[::-1])
        canvas.add(
            f'<polygon class="band" fill="{color}" fill-opacity="0.22" stroke="none" points="{upper} {lower}"/>'
        )
        canvas.add(
            f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.8" points="{ax.points(x, m)}"/>'
        )
    _legend(canvas, spec.labels or [cols[k] for k in range(0, len(cols), 2)], colors)
    return canvas.render()


def _bar(spec: PlotSpec, data: dict) -> str:
    """``columns[0]`` holds bar heights, optional ``columns[1]`` error half-widths."""
    if not spec.columns:
        raise ValueError("bar plots need at least a value column")
    values = _series(data, spec.columns[0])
    errs = _series(data, spec.columns[1]) if len(spec.columns) > 1 else np.zeros_like(values)
    labels = spec.labels or [str(v) for v in data.get("labels", range(values.size))]
    if len(labels) != values.size:
        raise ValueError("bar labels do not match the number of values")
    canvas = _Canvas(spec.title)
    n = values.size
    ymin = min(0.0, float((values - errs).min()))
    ymax = max(float((values + errs).max()), ymin + 1e-9)
    ax = _Axes(canvas, (0.0, float(n)), (ymin, ymax), spec.xlabel, spec.ylabel, xticks=[0.0, float(n)])
    slot = (ax.x1 - ax.x0) / n
    for k, (v, e, label) in enumerate(zip(values, errs, labels)):
        x = ax.x0 + slot * (k + 0.15)
        top, base = ax.sy(max(v, 0.0)), ax.sy(min(v, 0.0))
        canvas.add(
            f'<rect class="bar" x="{_f(x)}" y="{_f(top)}" width="{_f(slot * 0.7)}" '
            f'height="{_f(base - top)}" fill="{PALETTE[0]}"/>'
        )
        cx = x + slot * 0.35
        if e > 0:
            canvas.add(
                f'<line class="errorbar" x1="{_f(cx)}" y1="{_f(ax.sy(v - e))}" x2="{_f(cx)}" '
                f'y2="{_f(ax.sy(v + e))}" stroke="#222" stroke-width="1.5"/>'
            )
        canvas.text(cx, ax.y0 + 19, label, anchor="middle", cls="ticklabel")
    return canvas.render()


def colormap(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_VIRIDIS) - 1)
    k = min(int(t), len(_VIRIDIS) - 2)
    frac = t - k
    a, b = _VIRIDIS[k], _VIRIDIS[k + 1]
    rgb = [round(a[j] + (b[j] - a[j]) * frac) for j in range(3)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _heatmap(spec: PlotSpec, data: dict) -> str:
    """``data['counts'][ix][iy]``; zero cells show the background."""
    counts = np.asarray(data["counts"], dtype=np.float64)
    if counts.ndim != 2 or counts.size == 0:
        raise ValueError("heatmap needs a non-empty 2-D counts matrix")
    bound = float(data.get("bound", 1.0))
    nx, ny = counts.shape
    canvas = _Canvas(spec.title)
    side = min(WIDTH - MARGIN["left"] - 140, HEIGHT - MARGIN["top"] - MARGIN["bottom"])
    x0, y0 = MARGIN["left"], MARGIN["top"]
    cw, ch = side / nx, side / ny
    canvas.add(
        f'<rect class="plotarea" x="{_f(x0)}" y="{_f(y0)}" width="{_f(side)}" height="{_f(side)}" '
        f'fill="{BACKGROUND}" stroke="#444"/>'
    )
    vmax = float(counts.max()) or 1.0
    for ix in range(nx):
        for iy in range(ny):
            v = counts[ix, iy]
            if v <= 0:
                continue
            # row iy=0 is the bottom of the world
            x = x0 + ix * cw
            y = y0 + (ny - 1 - iy) * ch
            canvas.add(
                f'<rect class="cell" x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" '
                f'fill="{colormap(v / vmax)}"/>'
            )
    for frac, label in ((0.0, -bound), (0.5, 0.0), (1.0, bound)):
        canvas.text(x0 + frac * side, y0 + side + 18, _fmt_tick(label), anchor="middle", cls="ticklabel")
        canvas.text(x0 - 8, y0 + (1 - frac) * side + 4, _fmt_tick(label), anchor="end", cls="ticklabel")
    if spec.xlabel:
        canvas.text(x0 + side / 2, HEIGHT - 16, spec.xlabel, anchor="middle")
    if spec.ylabel:
        canvas.text(18, y0 + side / 2, spec.ylabel, anchor="middle", rotate=-90)
    # colour legend
    lx = x0 + side + 30
    steps = 20
    for k in range(steps):
        y = y0 + side - (k + 1) * side / steps
        canvas.add(
            f'<rect class="legend" x="{_f(lx)}" y="{_f(y)}" width="16" height="{_f(side / steps)}" '
            f'fill="{colormap((k + 0.5) / steps)}"/>'
        )
    canvas.text(lx + 22, y0 + side, "0", cls="legendlabel")
    canvas.text(lx + 22, y0 + 10, _fmt_tick(vmax), cls="legendlabel")
    return canvas.render()


_RENDERERS = {"line": _line, "band": _band, "bar": _bar, "heatmap": _heatmap}


def render_plot(spec: PlotSpec, data: dict) -> Path:
    if not data:
        raise ValueError("no data to plot")
    svg = _RENDERERS[spec.kind](spec, data)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    return out
