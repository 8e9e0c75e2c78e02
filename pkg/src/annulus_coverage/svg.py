"""Deterministic SVG snapshots: boundaries, bars, agents and targets."""

from __future__ import annotations

import math

import numpy as np

from .geometry import TWO_PI, AnnulusDomain

WIDTH = 640
MARGIN = 20
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


class _Frame:
    def __init__(self, domain: AnnulusDomain):
        xmin, xmax, ymin, ymax = domain.bounding_box()
        self.xmin, self.ymax = xmin, ymax
        self.scale = (WIDTH - 2 * MARGIN) / max(xmax - xmin, ymax - ymin)
        self.height = int(math.ceil((ymax - ymin) * self.scale + 2 * MARGIN))

    def __call__(self, p) -> tuple[float, float]:
        return (MARGIN + (p[0] - self.xmin) * self.scale, MARGIN + (self.ymax - p[1]) * self.scale)


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _polyline(frame: _Frame, pts, closed: bool) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (frame(p) for p in pts))
    tag = "polygon" if closed else "polyline"
    return f'<{tag} points="{coords}" fill="none" stroke="#333333" stroke-width="1.5"/>'


def _star(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        ang = -math.pi / 2 + k * math.pi / 5
        rr = r if k % 2 == 0 else 0.45 * r
        pts.append(f"{_fmt(cx + rr * math.cos(ang))},{_fmt(cy + rr * math.sin(ang))}")
    return " ".join(pts)


def snapshot(domain: AnnulusDomain, t: float, bars: list[tuple[np.ndarray, np.ndarray]],
             agents: np.ndarray, targets: np.ndarray, samples: int = 720) -> str:
    """One self-contained SVG document.

    ``bars`` holds ``(start, end)`` points; ``agents`` and ``targets`` are
    ``(N, 2)`` arrays, drawn as dots and stars in matching colours.
    """
    frame = _Frame(domain)
    theta = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{frame.height}" '
        f'viewBox="0 0 {WIDTH} {frame.height}">',
        f'<rect width="{WIDTH}" height="{frame.height}" fill="#ffffff"/>',
        f'<text x="{MARGIN}" y="{MARGIN - 4}" font-family="sans-serif" font-size="12">t = {t:.2f} s</text>',
        '<g id="boundaries">',
        _polyline(frame, domain.outer.point(theta), True),
        _polyline(frame, domain.inner.point(theta), True),
        "</g>",
        '<g id="bars">',
    ]
    for start, end in bars:
        (x1, y1), (x2, y2) = frame(start), frame(end)
        out.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                   'stroke="#555555" stroke-width="1.2" stroke-dasharray="4,2"/>')
    out.append("</g>")
    out.append('<g id="targets">')
    for i, q in enumerate(targets):
        cx, cy = frame(q)
        out.append(f'<polygon class="target" data-agent="{i}" points="{_star(cx, cy, 7.0)}" '
                   f'fill="{COLORS[i % len(COLORS)]}" fill-opacity="0.5"/>')
    out.append("</g>")
    out.append('<g id="agents">')
    for i, p in enumerate(agents):
        cx, cy = frame(p)
        out.append(f'<circle class="agent" data-agent="{i}" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="4" '
                   f'fill="{COLORS[i % len(COLORS)]}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def to_world(domain: AnnulusDomain, cx: float, cy: float) -> np.ndarray:
    """Inverse of the drawing transform (used to audit rendered positions)."""
    frame = _Frame(domain)
    return np.array([frame.xmin + (cx - MARGIN) / frame.scale, frame.ymax - (cy - MARGIN) / frame.scale])
