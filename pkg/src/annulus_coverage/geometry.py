"""Annulus domains bounded by two star-shaped polar curves.

Points are plain ``numpy`` arrays of shape ``(2,)`` (or ``(..., 2)`` for
batches) in a single world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Invalid curve or domain parameters."""


@dataclass(frozen=True)
class PolarCurve:
    """Closed curve ``center + R(theta) (cos theta, sin theta)``.

    ``kind`` is ``"inverse-ellipse"`` with ``R = 1/sqrt(cos^2/a^2 + sin^2/b^2)``
    or ``"fourier"`` with ``R = r0 + sum a_k sin(k theta) + sum b_k cos(k theta)``.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    r0: float = 0.0
    sin_terms: tuple[tuple[int, float], ...] = ()
    cos_terms: tuple[tuple[int, float], ...] = ()
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind == "inverse-ellipse":
            if self.a <= 0 or self.b <= 0:
                raise GeometryError("inverse-ellipse semi-axes must be positive")
        elif self.kind == "fourier":
            bound = sum(abs(c) for _, c in self.sin_terms) + sum(abs(c) for _, c in self.cos_terms)
            if self.r0 - bound <= 0:
                raise GeometryError("fourier curve radius must stay positive")
        else:
            raise GeometryError(f"unknown curve kind: {self.kind!r}")

    @classmethod
    def circle(cls, radius: float, center=(0.0, 0.0)) -> "PolarCurve":
        return cls("fourier", r0=radius, center=tuple(center))

    @classmethod
    def inverse_ellipse(cls, a: float, b: float, center=(0.0, 0.0)) -> "PolarCurve":
        return cls("inverse-ellipse", a=a, b=b, center=tuple(center))

    @classmethod
    def fourier(cls, r0: float, sin_terms=(), cos_terms=(), center=(0.0, 0.0)) -> "PolarCurve":
        return cls(
            "fourier",
            r0=r0,
            sin_terms=tuple((int(k), float(c)) for k, c in sin_terms),
            cos_terms=tuple((int(k), float(c)) for k, c in cos_terms),
            center=tuple(center),
        )

    def radius(self, theta, order: int = 0):
        """``R(theta)`` or its ``order``-th derivative (order <= 2)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "inverse-ellipse":
            return self._ellipse_radius(theta, order)
        out = np.full_like(theta, self.r0 if order == 0 else 0.0)
        for k, c in self.sin_terms:
            if order == 0:
                out = out + c * np.sin(k * theta)
            elif order == 1:
                out = out + c * k * np.cos(k * theta)
            else:
                out = out - c * k * k * np.sin(k * theta)
        for k, c in self.cos_terms:
            if order == 0:
                out = out + c * np.cos(k * theta)
            elif order == 1:
                out = out - c * k * np.sin(k * theta)
            else:
                out = out - c * k * k * np.cos(k * theta)
        return out

    def _ellipse_radius(self, theta, order):
        ia2, ib2 = 1.0 / self.a**2, 1.0 / self.b**2
        g = np.cos(theta) ** 2 * ia2 + np.sin(theta) ** 2 * ib2
        if order == 0:
            return g**-0.5
        g1 = np.sin(2 * theta) * (ib2 - ia2)
        if order == 1:
            return -0.5 * g**-1.5 * g1
        g2 = 2.0 * np.cos(2 * theta) * (ib2 - ia2)
        return 0.75 * g**-2.5 * g1**2 - 0.5 * g**-1.5 * g2

    def point(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        return np.stack([self.center[0] + r * np.cos(theta), self.center[1] + r * np.sin(theta)], axis=-1)

    def max_radius(self, samples: int = 4096) -> float:
        return float(self.radius(np.linspace(0.0, TWO_PI, samples, endpoint=False)).max())


def eval_curve(curve: PolarCurve, theta: float) -> np.ndarray:
    return curve.point(float(theta) % TWO_PI)


def polar_curvature(curve: PolarCurve, theta):
    r0, r1, r2 = (curve.radius(theta, k) for k in range(3))
    return np.abs(r0**2 + 2 * r1**2 - r0 * r2) / (r0**2 + r1**2) ** 1.5


@dataclass(frozen=True)
class FrenetFrame:
    """Frame on the inner boundary.

    ``tangent`` is the clockwise unit tangent (the direction along which the
    workload of the subregion owning the bar grows); ``normal`` points out of
    the inner hole, into the annulus.
    """

    footpoint: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: float
    arc_length: float
    theta: float

    @property
    def ccw_tangent(self) -> np.ndarray:
        return -self.tangent


@dataclass
class AnnulusDomain:
    """Region between ``inner`` and ``outer`` sharing one polar center."""

    inner: PolarCurve
    outer: PolarCurve
    table_size: int = 4096
    _theta: np.ndarray = field(init=False, repr=False)
    _arc: np.ndarray = field(init=False, repr=False)
    perimeter: float = field(init=False)

    def __post_init__(self):
        if tuple(self.inner.center) != tuple(self.outer.center):
            raise GeometryError("inner and outer curves must share a center")
        probe = np.linspace(0.0, TWO_PI, 8192, endpoint=False)
        if np.any(self.outer.radius(probe) <= self.inner.radius(probe)):
            raise GeometryError("inner curve must lie strictly inside the outer curve")
        # dense uniform-theta arc-length table, closed at 2*pi
        theta = np.linspace(0.0, TWO_PI, self.table_size + 1)
        # Simpson on each table interval using its midpoint
        mid = 0.5 * (theta[:-1] + theta[1:])
        speed = self._inner_speed(theta)
        seg = (theta[1] - theta[0]) / 6.0 * (speed[:-1] + 4 * self._inner_speed(mid) + speed[1:])
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        self._theta = theta
        self._arc = arc
        self.perimeter = float(arc[-1])

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.inner.center, dtype=float)

    def _inner_speed(self, theta):
        return np.hypot(self.inner.radius(theta), self.inner.radius(theta, 1))

    @cached_property
    def diameter(self) -> float:
        return 2.0 * self.outer.max_radius()

    def min_gap(self, samples: int = 4096) -> float:
        theta = np.linspace(0.0, TWO_PI, samples, endpoint=False)
        return float(np.min(self.outer.radius(theta) - self.inner.radius(theta)))

    def bounding_box(self) -> tuple[float, float, float, float]:
        theta = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
        pts = self.outer.point(theta)
        return (pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max())

    # arc-length parameterization of the inner boundary (counter-clockwise)

    def theta_at(self, l):
        l = np.mod(np.asarray(l, dtype=float), self.perimeter)
        return np.interp(l, self._arc, self._theta)

    def arclength_at(self, theta):
        theta = np.mod(np.asarray(theta, dtype=float), TWO_PI)
        return np.interp(theta, self._theta, self._arc)

    def polar(self, q):
        q = np.asarray(q, dtype=float)
        d = q - self.center
        return np.hypot(d[..., 0], d[..., 1]), np.mod(np.arctan2(d[..., 1], d[..., 0]), TWO_PI)


def frame_at_arclength(domain: AnnulusDomain, l: float) -> FrenetFrame:
    l = float(l) % domain.perimeter
    theta = float(domain.theta_at(l))
    curve = domain.inner
    r0, r1 = float(curve.radius(theta)), float(curve.radius(theta, 1))
    c, s = math.cos(theta), math.sin(theta)
    ccw = np.array([r1 * c - r0 * s, r1 * s + r0 * c])
    ccw /= np.linalg.norm(ccw)
    normal = np.array([ccw[1], -ccw[0]])
    return FrenetFrame(
        footpoint=curve.point(theta),
        tangent=-ccw,
        normal=normal,
        curvature=float(polar_curvature(curve, theta)),
        arc_length=l,
        theta=theta,
    )


def barrier(domain: AnnulusDomain, q):
    """Product of radial clearances; positive inside, zero on both curves."""
    r, theta = domain.polar(q)
    return (domain.outer.radius(theta) - r) * (r - domain.inner.radius(theta))


def contains(domain: AnnulusDomain, q):
    r, theta = domain.polar(q)
    return (r > domain.inner.radius(theta)) & (r < domain.outer.radius(theta))


def grad_barrier(domain: AnnulusDomain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    eps = 1e-6 * domain.diameter
    ex = np.array([eps, 0.0])
    ey = np.array([0.0, eps])
    gx = (barrier(domain, q + ex) - barrier(domain, q - ex)) / (2 * eps)
    gy = (barrier(domain, q + ey) - barrier(domain, q - ey)) / (2 * eps)
    return np.stack([gx, gy], axis=-1)


def max_grad_barrier(domain: AnnulusDomain, samples: Sequence[np.ndarray] | np.ndarray) -> float:
    """Sampled estimate of ``c_h = max ||grad h||`` over the given points."""
    g = grad_barrier(domain, np.asarray(samples, dtype=float))
    return float(np.max(np.hypot(g[..., 0], g[..., 1])))


def case_study_domain(table_size: int = 4096) -> AnnulusDomain:
    inner = PolarCurve.inverse_ellipse(0.7, 0.4)
    outer = PolarCurve.fourier(1.5, sin_terms=[(5, 0.3)], cos_terms=[(7, 0.3)])
    return AnnulusDomain(inner, outer, table_size)


def circular_domain(r_in: float = 0.5, r_out: float = 1.0, table_size: int = 4096) -> AnnulusDomain:
    return AnnulusDomain(PolarCurve.circle(r_in), PolarCurve.circle(r_out), table_size)
