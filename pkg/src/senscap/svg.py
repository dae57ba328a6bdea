"""Minimal line-plot SVG renderer with byte-stable output."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=55)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _num(x: float) -> str:
    return f"{x:.4g}"


def line_plot(series, xlabel: str, ylabel: str, title: str = "", vlines=(), notes=()) -> str:
    """Render ``series`` = [(label, xs, ys)] as an SVG document string.

    ``vlines`` = [(x, label)] draws dashed verticals; ``notes`` = [(x, y, text)]
    marks a point with a label.
    """
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys)
           if math.isfinite(x) and math.isfinite(y)]
    xs_all = [p[0] for p in pts] + [v[0] for v in vlines]
    ys_all = [p[1] for p in pts]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y0, y1 = (min(ys_all + [0.0]), max(ys_all)) if ys_all else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH),
                     height=str(HEIGHT), viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    if title:
        t = ET.SubElement(svg, "text", x=str(WIDTH / 2), y="22", attrib={"text-anchor": "middle"})
        t.text = title
    ET.SubElement(svg, "rect", x=_num(MARGIN["left"]), y=_num(MARGIN["top"]), width=_num(pw),
                  height=_num(ph), fill="none", stroke="black")
    for tx in _ticks(x0, x1):
        lab = ET.SubElement(svg, "text", x=_num(sx(tx)), y=_num(HEIGHT - MARGIN["bottom"] + 18),
                            attrib={"text-anchor": "middle", "font-size": "11"})
        lab.text = _num(tx)
    for ty in _ticks(y0, y1):
        lab = ET.SubElement(svg, "text", x=_num(MARGIN["left"] - 6), y=_num(sy(ty) + 4),
                            attrib={"text-anchor": "end", "font-size": "11"})
        lab.text = _num(ty)
    xl = ET.SubElement(svg, "text", x=_num(MARGIN["left"] + pw / 2), y=_num(HEIGHT - 12),
                       attrib={"text-anchor": "middle"})
    xl.text = xlabel
    yl = ET.SubElement(svg, "text", x="16", y=_num(MARGIN["top"] + ph / 2),
                       transform=f"rotate(-90 16 {_num(MARGIN['top'] + ph / 2)})",
                       attrib={"text-anchor": "middle"})
    yl.text = ylabel

    for i, (label, xs, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in zip(xs, ys)
                          if math.isfinite(x) and math.isfinite(y))
        ET.SubElement(svg, "polyline", points=coords, fill="none", stroke=color,
                      attrib={"stroke-width": "1.5"})
        key = ET.SubElement(svg, "text", x=_num(MARGIN["left"] + 10),
                            y=_num(MARGIN["top"] + 16 + 15 * i), fill=color,
                            attrib={"font-size": "12"})
        key.text = label
    for x, label in vlines:
        ET.SubElement(svg, "line", x1=_num(sx(x)), x2=_num(sx(x)), y1=_num(MARGIN["top"]),
                      y2=_num(MARGIN["top"] + ph), stroke="gray",
                      attrib={"stroke-dasharray": "5,4"})
        t = ET.SubElement(svg, "text", x=_num(sx(x) + 4), y=_num(MARGIN["top"] + 14),
                          attrib={"font-size": "11"}, fill="gray")
        t.text = label
    for x, y, text in notes:
        ET.SubElement(svg, "circle", cx=_num(sx(x)), cy=_num(sy(y)), r="4", fill="none",
                      stroke="black")
        t = ET.SubElement(svg, "text", x=_num(sx(x) + 6), y=_num(sy(y) - 6),
                          attrib={"font-size": "11"})
        t.text = text
    return ET.tostring(svg, encoding="unicode") + "\n"


def crossings(xs, ya, yb):
    """x positions where two curves sampled on the same grid swap order (linear interpolation)."""
    out = []
    for i in range(len(xs) - 1):
        d0, d1 = ya[i] - yb[i], ya[i + 1] - yb[i + 1]
        if d0 == 0:
            out.append((xs[i], ya[i]))
        elif d0 * d1 < 0:
            t = d0 / (d0 - d1)
            x = xs[i] + t * (xs[i + 1] - xs[i])
            out.append((x, ya[i] + t * (ya[i + 1] - ya[i])))
    return out
