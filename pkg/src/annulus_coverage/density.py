"""Workload density fields over the plane."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator


@dataclass
class DensityField:
    """Positive density ``rho(q)``.

    ``kind`` is one of ``uniform`` (constant ``value``), ``case-study``
    (``exp(sin^2 theta + cos theta) + 0.01 r`` in polar coordinates about
    ``center``), ``tabulated`` (bilinear over a regular x/y table) or
    ``custom`` (any vectorized callable on ``(..., 2)`` arrays).
    """

    kind: str = "uniform"
    value: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    table_x: np.ndarray | None = None
    table_y: np.ndarray | None = None
    table_values: np.ndarray | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = None
    scale: float = 1.0
    _interp: RegularGridInterpolator | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind == "uniform":
            if self.value <= 0:
                raise ValueError("uniform density must be positive")
        elif self.kind == "tabulated":
            vals = np.asarray(self.table_values, dtype=float)
            if np.any(vals <= 0):
                raise ValueError("tabulated density must be positive")
            self._interp = RegularGridInterpolator(
                (np.asarray(self.table_y, float), np.asarray(self.table_x, float)),
                vals,
                bounds_error=False,
                fill_value=None,
            )
        elif self.kind == "custom":
            if self.func is None:
                raise ValueError("custom density needs a callable")
        elif self.kind != "case-study":
            raise ValueError(f"unknown density kind: {self.kind!r}")

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind == "uniform":
            out = np.full(q.shape[:-1], self.value)
        elif self.kind == "case-study":
            dx = q[..., 0] - self.center[0]
            dy = q[..., 1] - self.center[1]
            r = np.hypot(dx, dy)
            theta = np.arctan2(dy, dx)
            out = np.exp(np.sin(theta) ** 2 + np.cos(theta)) + 0.01 * r
        elif self.kind == "tabulated":
            flat = q.reshape(-1, 2)[:, ::-1]
            out = self._interp(flat).reshape(q.shape[:-1])
        else:
            out = np.asarray(self.func(q), dtype=float)
        return self.scale * out

    def scaled(self, factor: float) -> "DensityField":
        clone = DensityField(
            self.kind, self.value, self.center, self.table_x, self.table_y,
            self.table_values, self.func, self.scale * factor,
        )
        return clone

    def bounds(self, points) -> tuple[float, float]:
        """Sampled ``(rho_low, rho_high)`` over ``points``."""
        vals = self(points)
        return float(vals.min()), float(vals.max())
