"""Bare-bones SVG line and bar charts.

Every drawn point carries its source numbers as ``data-x``/``data-y``
attributes (the exact strings it was given), so a chart can be checked
against the CSV it came from.
"""

from __future__ import annotations

from html import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _nice_range(lo, hi):
    if hi == lo:
        pad = abs(hi) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


class Canvas:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = []

    def add(self, s):
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="start", rotate=None, weight="normal"):
        tr = f' transform="rotate({rotate} {x:.1f} {y:.1f})"' if rotate else ""
        self.add(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}" '
                 f'font-weight="{weight}" font-family="sans-serif"{tr}>{escape(s)}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">')
        bg = f'<rect width="{self.width}" height="{self.height}" fill="white"/>'
        return "\n".join([head, bg, *self.parts, "</svg>"]) + "\n"


class Axes:
    """Maps data coordinates into a rectangle of a Canvas."""

    def __init__(self, canvas, x0, y0, w, h, xlim, ylim):
        self.c = canvas
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / (hi - lo) * self.h

    def frame(self, xlabel="", ylabel="", title="", xticks=True):
        c = self.c
        c.add(f'<rect x="{self.x0:.1f}" y="{self.y0:.1f}" width="{self.w:.1f}" '
              f'height="{self.h:.1f}" fill="none" stroke="#444"/>')
        for t in _ticks(*self.ylim):
            y = self.py(t)
            c.add(f'<line x1="{self.x0:.1f}" x2="{self.x0 + self.w:.1f}" y1="{y:.1f}" '
                  f'y2="{y:.1f}" stroke="#ddd"/>')
            c.text(self.x0 - 4, y + 4, f"{t:.3g}", size=9, anchor="end")
        if xticks:
            for t in _ticks(*self.xlim):
                x = self.px(t)
                c.text(x, self.y0 + self.h + 13, f"{t:.4g}", size=9, anchor="middle")
        if title:
            c.text(self.x0 + self.w / 2, self.y0 - 8, title, size=12, anchor="middle",
                   weight="bold")
        if xlabel:
            c.text(self.x0 + self.w / 2, self.y0 + self.h + 30, xlabel, anchor="middle")
        if ylabel:
            c.text(self.x0 - 42, self.y0 + self.h / 2, ylabel, anchor="middle", rotate=-90)


def line_chart(series, title, xlabel, ylabel, width=720, height=420) -> str:
    """``series``: list of dicts with keys label, xs, ys (strings or numbers),
    and optional color, opacity, width, legend (bool)."""
    c = Canvas(width, height)
    xs = [float(x) for s in series for x in s["xs"]]
    ys = [float(y) for s in series for y in s["ys"]]
    if not xs:
        c.text(20, 30, "no data")
        return c.render()
    ax = Axes(c, 70, 40, width - 230, height - 90,
              _nice_range(min(xs), max(xs)), _nice_range(min(ys), max(ys)))
    ax.frame(xlabel, ylabel, title)
    legend_y = 50
    for i, s in enumerate(series):
        color = s.get("color", PALETTE[i % len(PALETTE)])
        op = s.get("opacity", 1.0)
        sw = s.get("width", 2)
        pts = [(ax.px(float(x)), ax.py(float(y))) for x, y in zip(s["xs"], s["ys"])]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        c.add(f'<g class="series" data-label="{escape(s["label"])}">')
        c.add(f'<polyline points="{path}" fill="none" stroke="{color}" '
              f'stroke-width="{sw}" stroke-opacity="{op}"/>')
        for (px, py), x, y in zip(pts, s["xs"], s["ys"]):
            c.add(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{1.5 if op < 1 else 2.2}" '
                  f'fill="{color}" fill-opacity="{op}" data-x="{x}" data-y="{y}"/>')
        c.add("</g>")
        if s.get("legend", True):
            lx = ax.x0 + ax.w + 15
            c.add(f'<line x1="{lx}" x2="{lx + 20}" y1="{legend_y}" y2="{legend_y}" '
                  f'stroke="{color}" stroke-width="3"/>')
            c.text(lx + 26, legend_y + 4, s["label"], size=11)
            legend_y += 18
    return c.render()


def bar_panels(panels, title, width=None, panel_w=170, panel_h=150, ymax=None) -> str:
    """Small multiples of bar charts. ``panels``: list of (subtitle, counts)."""
    n = max(len(panels), 1)
    width = width or 40 + n * (panel_w + 20)
    height = panel_h + 90
    c = Canvas(width, height)
    c.text(width / 2, 18, title, size=13, anchor="middle", weight="bold")
    top = ymax or max((max(cnt) for _, cnt in panels if len(cnt)), default=1) or 1
    for i, (sub, counts) in enumerate(panels):
        x0 = 45 + i * (panel_w + 20)
        ax = Axes(c, x0, 45, panel_w, panel_h, (0, max(len(counts), 1)), (0, top))
        ax.frame(title=sub, xticks=False)
        bw = panel_w / max(len(counts), 1)
        for j, cnt in enumerate(counts):
            y = ax.py(cnt)
            c.add(f'<rect x="{x0 + j * bw + 0.5:.2f}" y="{y:.2f}" width="{max(bw - 1, 0.5):.2f}" '
                  f'height="{ax.y0 + ax.h - y:.2f}" fill="{PALETTE[0]}" data-bin="{j}" '
                  f'data-count="{cnt}"/>')
    return c.render()
