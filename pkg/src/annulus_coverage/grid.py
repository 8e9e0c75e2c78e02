"""Uniform node grid over an annulus domain.

Node ``(iy, ix)`` sits at ``(x0 + ix*spacing, y0 + iy*spacing)`` and stands
for the square cell of side ``spacing`` centered on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AnnulusDomain, barrier, contains

SUBCELLS = 8


class ResolutionError(ValueError):
    """Grid spacing too coarse for the domain."""


@dataclass
class MetricGrid:
    domain: AnnulusDomain
    spacing: float
    x0: float
    y0: float
    nx: int
    ny: int
    X: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    inside: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    fill: np.ndarray = field(repr=False)
    subcell_inside: dict = field(repr=False, default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    @property
    def h_min(self) -> float:
        return self.spacing / 10.0

    @property
    def h_interior(self) -> float:
        return 2.0 * self.h_min

    @property
    def passable(self) -> np.ndarray:
        return self.inside & (self.h >= self.h_min)

    @property
    def h_max(self) -> float:
        return float(self.h[self.inside].max())

    def node(self, iy: int, ix: int) -> np.ndarray:
        return np.array([self.X[iy, ix], self.Y[iy, ix]])

    def nearest_index(self, p) -> tuple[int, int]:
        p = np.asarray(p, dtype=float)
        ix = int(np.clip(round((p[0] - self.x0) / self.spacing), 0, self.nx - 1))
        iy = int(np.clip(round((p[1] - self.y0) / self.spacing), 0, self.ny - 1))
        return iy, ix

    def interpolate(self, values: np.ndarray, p) -> float:
        """Bilinear interpolation of a node field at ``p``.

        Corners holding ``inf`` are dropped and the remaining weights
        renormalized; returns ``inf`` when no corner is finite.
        """
        p = np.asarray(p, dtype=float)
        fx = (p[0] - self.x0) / self.spacing
        fy = (p[1] - self.y0) / self.spacing
        ix = int(np.clip(np.floor(fx), 0, self.nx - 2))
        iy = int(np.clip(np.floor(fy), 0, self.ny - 2))
        tx, ty = fx - ix, fy - iy
        corners = values[iy : iy + 2, ix : ix + 2]
        w = np.array([[(1 - tx) * (1 - ty), tx * (1 - ty)], [(1 - tx) * ty, tx * ty]])
        ok = np.isfinite(corners)
        if not ok.any():
            return float("inf")
        if ok.all():
            return float(np.sum(w * corners))
        wsum = w[ok].sum()
        if wsum <= 1e-12:
            # point sits on a dropped corner; fall back to nearest finite corner
            return float(np.min(corners[ok]))
        return float(np.sum(w[ok] * corners[ok]) / wsum)


def build_grid(domain: AnnulusDomain, spacing: float) -> MetricGrid:
    """Classify nodes, evaluate ``h``, and estimate per-cell coverage of the domain."""
    if spacing <= 0:
        raise ResolutionError("grid spacing must be positive")
    gap = domain.min_gap()
    if spacing >= gap / 4.0:
        raise ResolutionError(
            f"grid spacing {spacing:g} m does not resolve the narrowest boundary gap "
            f"({gap:.4g} m); need spacing < {gap / 4:.4g} m"
        )
    xmin, xmax, ymin, ymax = domain.bounding_box()
    margin = 2.0 * spacing
    x0, y0 = xmin - margin, ymin - margin
    nx = int(np.ceil((xmax + margin - x0) / spacing)) + 1
    ny = int(np.ceil((ymax + margin - y0) / spacing)) + 1
    X, Y = np.meshgrid(x0 + spacing * np.arange(nx), y0 + spacing * np.arange(ny))
    pts = np.stack([X, Y], axis=-1)
    inside = contains(domain, pts)
    h = barrier(domain, pts)
    if inside.sum() < 16:
        raise ResolutionError("fewer than 16 interior nodes")

    # cells whose corners disagree with the center straddle the boundary
    half = spacing / 2
    straddle = np.zeros_like(inside)
    for dx in (-half, half):
        for dy in (-half, half):
            straddle |= contains(domain, pts + np.array([dx, dy])) != inside
    fill = inside.astype(float)
    offs = (np.arange(SUBCELLS) + 0.5) / SUBCELLS * spacing - half
    SX, SY = np.meshgrid(offs, offs)
    sub = np.stack([SX, SY], axis=-1)
    subcell_inside = {}
    for iy, ix in zip(*np.nonzero(straddle)):
        mask = contains(domain, sub + pts[iy, ix])
        fill[iy, ix] = mask.mean()
        subcell_inside[(int(iy), int(ix))] = mask
    return MetricGrid(domain, spacing, x0, y0, nx, ny, X, Y, inside, h, fill, subcell_inside)
