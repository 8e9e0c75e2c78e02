"""Local coverage cost, subregion optima, and the agent control law."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import AnnulusDomain, barrier
from .grid import MetricGrid
from .metric import GeodesicField, _squared_distance_costs, distance_field, field_gradient, slowness

log = logging.getLogger(__name__)

GEODESIC = "geodesic-squared"
EUCLIDEAN = "euclidean-squared"


class OutsideSubregionError(ValueError):
    pass


class EmptySubregionError(ValueError):
    pass


class StaleFieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoverageCostConfig:
    f: str = GEODESIC
    stride: int = 4
    refine_radius: int = 3
    period: int = 10

    def __post_init__(self):
        if self.f not in (GEODESIC, EUCLIDEAN):
            raise ValueError(f"unknown cost kind {self.f!r}")
        if self.stride < 1 or self.period < 1 or self.refine_radius < 0:
            raise ValueError("stride and period must be >= 1, refine_radius >= 0")


@dataclass
class AgentState:
    id: int
    position: np.ndarray
    u: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass(frozen=True)
class TargetState:
    point: np.ndarray
    cost: float
    node: tuple[int, int]
    age: int = 0


@dataclass(frozen=True)
class Subregion:
    """Node mask of one subregion plus the density weight ``rho * area`` per node."""

    index: int
    mask: np.ndarray
    weights: np.ndarray


def subregion(labels: np.ndarray, i: int, rho_grid: np.ndarray, grid: MetricGrid) -> Subregion:
    mask = labels == i
    return Subregion(i, mask, np.where(mask, rho_grid * grid.fill * grid.cell_area, 0.0))


def _crop(mask: np.ndarray, pad: int = 1):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptySubregionError("subregion has no nodes")
    y0, x0 = max(ys.min() - pad, 0), max(xs.min() - pad, 0)
    return slice(y0, ys.max() + pad + 1), slice(x0, xs.max() + pad + 1)


def _check_inside(grid: MetricGrid, sub: Subregion, p) -> None:
    iy, ix = grid.nearest_index(p)
    if not sub.mask[iy, ix] or barrier(grid.domain, np.asarray(p, dtype=float)) <= 0:
        raise OutsideSubregionError(f"point {np.asarray(p).tolist()} is not in subregion {sub.index}")


def local_cost(p, sub: Subregion, grid: MetricGrid, cfg: CoverageCostConfig = CoverageCostConfig()) -> float:
    """``J_i(p) = sum over subregion cells of f(p, q) rho(q) dA``."""
    p = np.asarray(p, dtype=float)
    _check_inside(grid, sub, p)
    if cfg.f == EUCLIDEAN:
        d2 = (grid.X - p[0]) ** 2 + (grid.Y - p[1]) ** 2
        return float(np.sum(d2 * sub.weights))
    fld = distance_field(grid, p, restriction=sub.mask)
    d = fld.values
    ok = np.isfinite(d) & (sub.weights != 0)
    return float(np.sum(d[ok] ** 2 * sub.weights[ok]))


def _node_costs(grid: MetricGrid, sub: Subregion, nodes: np.ndarray, cfg: CoverageCostConfig) -> np.ndarray:
    """``J`` at the given flat node indices."""
    if nodes.size == 0:
        return np.zeros(0)
    if cfg.f == EUCLIDEAN:
        w = sub.weights
        W = w.sum()
        mx, my = np.sum(w * grid.X), np.sum(w * grid.Y)
        s2 = np.sum(w * (grid.X**2 + grid.Y**2))
        cx, cy = grid.X.ravel()[nodes], grid.Y.ravel()[nodes]
        return W * (cx**2 + cy**2) - 2 * (cx * mx + cy * my) + s2
    allowed = sub.mask & grid.passable
    sy, sx = _crop(allowed)
    cost = np.ascontiguousarray(slowness(grid)[sy, sx])
    allowed_c = np.ascontiguousarray(allowed[sy, sx])
    weights = np.ascontiguousarray(sub.weights[sy, sx])
    iy, ix = np.divmod(nodes, grid.nx)
    local = (iy - sy.start) * allowed_c.shape[1] + (ix - sx.start)
    return _squared_distance_costs(cost, allowed_c, weights, local.astype(np.int64))


def candidate_nodes(grid: MetricGrid, sub: Subregion) -> np.ndarray:
    ok = sub.mask & grid.passable & (grid.h >= grid.h_interior)
    return np.flatnonzero(ok)


def find_local_optimum(sub: Subregion, grid: MetricGrid, cfg: CoverageCostConfig = CoverageCostConfig()) -> TargetState:
    """Coarse lattice search then exhaustive refinement around the coarse winner.

    Candidates are subregion nodes with ``h >= h_interior``; ties go to the
    lowest flat node index.  A winner on the edge of the refinement window
    is polished by steepest descent so the result is a lattice local minimum.
    """
    cand = candidate_nodes(grid, sub)
    if cand.size == 0:
        raise EmptySubregionError(f"subregion {sub.index} has no admissible target nodes")
    iy, ix = np.divmod(cand, grid.nx)
    coarse = cand[(iy % cfg.stride == 0) & (ix % cfg.stride == 0)]
    if coarse.size == 0:
        coarse = cand
    j = _node_costs(grid, sub, coarse, cfg)
    best = int(coarse[np.argmin(j)])
    by, bx = divmod(best, grid.nx)
    r = cfg.refine_radius
    near = cand[(np.abs(iy - by) <= r) & (np.abs(ix - bx) <= r)]
    jn = _node_costs(grid, sub, near, cfg)
    k = int(np.argmin(jn))
    node = divmod(int(near[k]), grid.nx)
    if max(abs(node[0] - by), abs(node[1] - bx)) < r or r == 0:
        return TargetState(grid.node(*node), float(jn[k]), node, 0)
    # winner on the edge of the refinement window: keep descending
    return descend_optimum(sub, grid, node, cfg)


def descend_optimum(sub: Subregion, grid: MetricGrid, start: tuple[int, int],
                    cfg: CoverageCostConfig = CoverageCostConfig(), max_moves: int = 10_000) -> TargetState:
    """Steepest descent over the 8-neighbour node lattice, warm-started at ``start``.

    Falls back to :func:`find_local_optimum` when ``start`` is not an
    admissible candidate of this subregion.
    """
    ok = sub.mask & grid.passable & (grid.h >= grid.h_interior)
    cy, cx = start
    if not (0 <= cy < grid.ny and 0 <= cx < grid.nx) or not ok[cy, cx]:
        return find_local_optimum(sub, grid, cfg)
    cache: dict[int, float] = {}
    for _ in range(max_moves):
        ys = np.arange(max(cy - 1, 0), min(cy + 2, grid.ny))
        xs = np.arange(max(cx - 1, 0), min(cx + 2, grid.nx))
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        keep = ok[yy, xx]
        nodes = (yy[keep] * grid.nx + xx[keep]).astype(np.int64)
        todo = np.array([k for k in nodes if k not in cache], dtype=np.int64)
        for k, v in zip(todo, _node_costs(grid, sub, todo, cfg)):
            cache[int(k)] = float(v)
        vals = np.array([cache[int(k)] for k in nodes])
        best = int(nodes[np.argmin(vals)])
        if best == cy * grid.nx + cx:
            break
        cy, cx = divmod(best, grid.nx)
    return TargetState(grid.node(cy, cx), cache[cy * grid.nx + cx], (cy, cx), 0)


def exhaustive_optimum(sub: Subregion, grid: MetricGrid, cfg: CoverageCostConfig = CoverageCostConfig()) -> TargetState:
    cand = candidate_nodes(grid, sub)
    j = _node_costs(grid, sub, cand, cfg)
    k = int(np.argmin(j))
    node = divmod(int(cand[k]), grid.nx)
    return TargetState(grid.node(*node), float(j[k]), node, 0)


def target_field(grid: MetricGrid, target: TargetState, mask: np.ndarray | None, stamp: int = 0) -> GeodesicField:
    fld = distance_field(grid, target.point, restriction=mask)
    fld.stamp = stamp
    return fld


def control_input(p, target: TargetState, fld: GeodesicField, grid: MetricGrid, kappa_p: float,
                  mode: str = "natural", step: int | None = None, period: int | None = None) -> np.ndarray:
    """Gradient descent of ``E = d_g(p, q*)^2 / 2``.

    ``mode="natural"`` uses the metric gradient ``h^2 * grad E`` so the
    Euclidean speed vanishes at the boundary; ``"euclidean"`` uses ``grad E``.
    Within one cell of the target the grid gradient is meaningless, so the
    field is replaced by its flat local model ``|p - q*| / h(q*)``.
    """
    if step is not None and period is not None:
        stamp = fld.stamp
        if step - stamp > period:
            raise StaleFieldError(f"field from step {stamp} used at step {step} (period {period})")
    p = np.asarray(p, dtype=float)
    h_p = float(barrier(grid.domain, p))
    d = fld.at(p)
    if not math.isfinite(d):
        raise OutsideSubregionError(f"agent at {p.tolist()} unreachable in target field")
    if d < grid.spacing / h_p:
        h_q = float(barrier(grid.domain, target.point))
        scale = (h_p / h_q) ** 2 if mode == "natural" else 1.0 / h_q**2
        return -kappa_p * scale * (p - target.point)
    g = field_gradient(fld, p)
    if mode == "natural":
        return -kappa_p * h_p**2 * d * g
    return -kappa_p * d * g


def energy(p, fld: GeodesicField) -> float:
    return 0.5 * fld.at(p) ** 2


def agent_step(p, u, dt: float, domain: AnnulusDomain, max_halvings: int = 8) -> tuple[np.ndarray, bool]:
    """Forward Euler ``p + u dt`` with step halving if the trial leaves the domain.

    Returns the new position and whether the backtrack guard fired.
    """
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    trial = p + u * dt
    if barrier(domain, trial) > 0:
        return trial, False
    step = dt
    for _ in range(max_halvings):
        step *= 0.5
        trial = p + u * step
        if barrier(domain, trial) > 0:
            log.debug("agent step halved to %.3g s", step)
            return trial, True
    log.warning("agent at %s held in place: every halved step leaves the domain", p.tolist())
    return p.copy(), True
