"""Conformal metric ``g = I / h^2`` on the grid and its geodesic distances.

Distances solve ``|grad d| = 1/h`` by first-order fast marching.  Nodes with
``h < spacing/10`` are impassable so edge costs stay bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import barrier, contains
from .grid import MetricGrid


class SourceOutsideError(ValueError):
    pass


class InvalidPathError(ValueError):
    pass


@numba.njit(cache=True)
def _heap_push(hv, hi, size, val, idx):
    pos = size
    hv[pos] = val
    hi[pos] = idx
    while pos > 0:
        parent = (pos - 1) >> 1
        if hv[parent] <= hv[pos]:
            break
        hv[parent], hv[pos] = hv[pos], hv[parent]
        hi[parent], hi[pos] = hi[pos], hi[parent]
        pos = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(hv, hi, size):
    val = hv[0]
    idx = hi[0]
    size -= 1
    hv[0] = hv[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            break
        child = left
        if left + 1 < size and hv[left + 1] < hv[left]:
            child = left + 1
        if hv[pos] <= hv[child]:
            break
        hv[pos], hv[child] = hv[child], hv[pos]
        hi[pos], hi[child] = hi[child], hi[pos]
        pos = child
    return val, idx, size


@numba.njit(cache=True)
def _pick(d, state, cost, i0, j0, i1, j1, ny, nx):
    """Smaller accepted value of the two opposite neighbours (value, slowness)."""
    v = np.inf
    f = 0.0
    if 0 <= i0 < ny and 0 <= j0 < nx and state[i0, j0] == 2:
        v = d[i0, j0]
        f = cost[i0, j0]
    if 0 <= i1 < ny and 0 <= j1 < nx and state[i1, j1] == 2 and d[i1, j1] < v:
        v = d[i1, j1]
        f = cost[i1, j1]
    return v, f


@numba.njit(cache=True)
def _two_point(a, fa, b, fb, f0, step):
    """Upwind update from orthogonal neighbours ``step`` cells away (slowness averaged over the stencil)."""
    if a <= b:
        lo, hi_, f1 = a, b, 0.5 * (f0 + fa) * step
    else:
        lo, hi_, f1 = b, a, 0.5 * (f0 + fb) * step
    if hi_ - lo >= f1:
        return lo + f1
    f = (0.5 * f0 + 0.25 * (fa + fb)) * step
    if hi_ - lo >= f:
        return lo + f1
    return 0.5 * (a + b + math.sqrt(2.0 * f * f - (a - b) * (a - b)))


@numba.njit(cache=True)
def _march(cost, allowed, seed_idx, seed_val, d, state, hv, hi):
    """First-order multistencil fast marching into preallocated ``d``/``state``.

    Each node takes the smaller of the axis-aligned update and the update
    from the stencil rotated by 45 degrees, which cuts the error a point
    source spreads along curved wavefronts.  ``state``: 0 far, 1 trial,
    2 accepted.  Seeds enter as trial values so the march may still lower
    them.
    """
    ny, nx = cost.shape
    inf = np.inf
    sqrt2 = math.sqrt(2.0)
    d[:] = inf
    state[:] = 0
    size = 0
    for k in range(seed_idx.size):
        idx = seed_idx[k]
        i = idx // nx
        j = idx - i * nx
        if seed_val[k] < d[i, j]:
            d[i, j] = seed_val[k]
            state[i, j] = 1
            size = _heap_push(hv, hi, size, seed_val[k], idx)
    while size > 0:
        val, idx, size = _heap_pop(hv, hi, size)
        i = idx // nx
        j = idx - i * nx
        if state[i, j] == 2 or val > d[i, j]:
            continue
        state[i, j] = 2
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ii = i + di
                jj = j + dj
                if ii < 0 or ii >= ny or jj < 0 or jj >= nx:
                    continue
                if not allowed[ii, jj] or state[ii, jj] >= 2:
                    continue
                f0 = cost[ii, jj]
                a, fa = _pick(d, state, cost, ii - 1, jj, ii + 1, jj, ny, nx)
                b, fb = _pick(d, state, cost, ii, jj - 1, ii, jj + 1, ny, nx)
                new = inf
                if a < inf or b < inf:
                    new = _two_point(a, fa, b, fb, f0, 1.0)
                a, fa = _pick(d, state, cost, ii - 1, jj - 1, ii + 1, jj + 1, ny, nx)
                b, fb = _pick(d, state, cost, ii - 1, jj + 1, ii + 1, jj - 1, ny, nx)
                if a < inf or b < inf:
                    new = min(new, _two_point(a, fa, b, fb, f0, sqrt2))
                if new < d[ii, jj]:
                    d[ii, jj] = new
                    state[ii, jj] = 1
                    size = _heap_push(hv, hi, size, new, ii * nx + jj)


@numba.njit(cache=True)
def _fast_march(cost, allowed, seed_idx, seed_val):
    ny, nx = cost.shape
    d = np.empty((ny, nx))
    state = np.empty((ny, nx), dtype=np.int8)
    cap = 8 * ny * nx + seed_idx.size + 8
    hv = np.empty(cap)
    hi = np.empty(cap, dtype=np.int64)
    _march(cost, allowed, seed_idx, seed_val, d, state, hv, hi)
    return d


@numba.njit(cache=True)
def _squared_distance_costs(cost, allowed, weights, candidates):
    """``sum_q d(c, q)^2 w_q`` for every candidate node ``c`` (one march each).

    Unreachable nodes are skipped.
    """
    ny, nx = cost.shape
    d = np.empty((ny, nx))
    state = np.empty((ny, nx), dtype=np.int8)
    cap = 8 * ny * nx + 8
    hv = np.empty(cap)
    hi = np.empty(cap, dtype=np.int64)
    seed_val = np.zeros(1)
    seed_idx = np.zeros(1, dtype=np.int64)
    out = np.empty(candidates.size)
    for k in range(candidates.size):
        seed_idx[0] = candidates[k]
        _march(cost, allowed, seed_idx, seed_val, d, state, hv, hi)
        total = 0.0
        for i in range(ny):
            for j in range(nx):
                w = weights[i, j]
                if w != 0.0 and d[i, j] < np.inf:
                    total += d[i, j] * d[i, j] * w
        out[k] = total
    return out


@dataclass
class GeodesicField:
    """Distance values ``d(.)`` from ``source`` on the permitted nodes (``inf`` elsewhere)."""

    grid: MetricGrid
    source: np.ndarray
    values: np.ndarray
    allowed: np.ndarray
    restriction: int | None = None
    stamp: int = 0
    inv: object = None

    def at(self, p) -> float:
        return self.grid.interpolate(self.values, p)

    def endpoint(self, p) -> float:
        """Distance to an off-grid point, closing the path with a straight segment.

        Mirrors the source seeding: minimum over nearby reachable nodes of the
        node value plus the segment's metric length, and the direct segment
        from the source when ``p`` lies inside the seed disk.
        """
        p = np.asarray(p, dtype=float)
        if float(barrier(self.grid.domain, p)) <= 0:
            return math.inf
        inv = self.inv if self.inv is not None else _inverse_h(self.grid, None)
        iy, ix = _disk(self.grid, p, SEED_RADIUS)
        vals = self.values[iy, ix]
        fin = np.isfinite(vals)
        if not fin.any():
            return self.at(p)
        total = vals[fin] + _segment_costs(self.grid, p, iy[fin], ix[fin], inv)
        best = float(np.min(total))
        if np.hypot(*(p - self.source)) <= SEED_RADIUS * self.grid.spacing:
            best = min(best, float(_line_costs(p, self.source, inv, SEED_RADIUS)[0]))
        return best if math.isfinite(best) else self.at(p)


def slowness(grid: MetricGrid) -> np.ndarray:
    """Per-node edge cost ``spacing / h`` (``inf`` on impassable nodes)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(grid.passable, grid.spacing / grid.h, np.inf)


SEED_RADIUS = 12


def _inverse_h(grid: MetricGrid, cost: np.ndarray | None):
    """Pointwise metric density ``1/h`` (or ``cost/spacing`` for an overridden slowness)."""
    if cost is None:
        def inv(q):
            h = barrier(grid.domain, q)
            with np.errstate(divide="ignore"):
                return np.where(h > 0, 1.0 / np.maximum(h, 1e-300), np.inf)
        return inv
    rate = np.where(np.isfinite(cost), cost / grid.spacing, np.inf)

    def inv(q):
        q = np.atleast_2d(q)
        ix = np.clip(np.rint((q[:, 0] - grid.x0) / grid.spacing).astype(int), 0, grid.nx - 1)
        iy = np.clip(np.rint((q[:, 1] - grid.y0) / grid.spacing).astype(int), 0, grid.ny - 1)
        return rate[iy, ix]
    return inv


def _segment_costs(grid: MetricGrid, p, iy: np.ndarray, ix: np.ndarray, inv, radius: int = None) -> np.ndarray:
    """Composite-Simpson metric length of straight segments from ``p`` to nodes.

    Samples are at most half a cell apart; segments with a sample outside the
    domain get ``inf``.
    """
    q = np.stack([grid.X[iy, ix], grid.Y[iy, ix]], axis=-1)
    return _line_costs(p, q, inv, SEED_RADIUS if radius is None else radius)


def _line_costs(p, q: np.ndarray, inv, radius: int) -> np.ndarray:
    q = np.atleast_2d(q)
    seg = np.linalg.norm(q - p, axis=-1)
    k = 4 * (radius + 2)
    s = np.linspace(0.0, 1.0, k + 1)
    pts = p + s[:, None, None] * (q - p)[None, :, :]
    w = inv(pts.reshape(-1, 2)).reshape(k + 1, -1)
    simpson = np.ones(k + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    with np.errstate(invalid="ignore"):
        mean_inv = simpson @ w / (3.0 * k)
    return np.where(np.isfinite(mean_inv), seg * mean_inv, np.inf)


def _disk(grid: MetricGrid, p, radius: int):
    fx = (p[0] - grid.x0) / grid.spacing
    fy = (p[1] - grid.y0) / grid.spacing
    ix0, iy0 = int(math.floor(fx)), int(math.floor(fy))
    iy, ix = np.mgrid[iy0 - radius + 1 : iy0 + radius + 1, ix0 - radius + 1 : ix0 + radius + 1]
    iy, ix = iy.ravel(), ix.ravel()
    keep = (iy >= 0) & (iy < grid.ny) & (ix >= 0) & (ix < grid.nx)
    iy, ix = iy[keep], ix[keep]
    near = np.hypot(grid.X[iy, ix] - p[0], grid.Y[iy, ix] - p[1]) <= radius * grid.spacing
    # the enclosing cell's corners always qualify
    cell = ((iy == iy0) | (iy == iy0 + 1)) & ((ix == ix0) | (ix == ix0 + 1))
    keep = near | cell
    return iy[keep], ix[keep]


def _seeds(grid: MetricGrid, source, allowed, inv, radius: int = SEED_RADIUS):
    """Nodes within ``radius`` cells of the source, valued by their straight-segment metric length.

    Initializing a small disk rather than the four cell corners removes most
    of the first-order error that a point source otherwise spreads outward.
    """
    src = np.asarray(source, dtype=float)
    iy, ix = _disk(grid, src, radius)
    ok = allowed[iy, ix]
    iy, ix = iy[ok], ix[ok]
    val = _segment_costs(grid, src, iy, ix, inv)
    fin = np.isfinite(val)
    return (iy[fin] * grid.nx + ix[fin]).astype(np.int64), val[fin]


def distance_field(grid: MetricGrid, source, restriction: np.ndarray | None = None,
                   label: int | None = None, cost: np.ndarray | None = None) -> GeodesicField:
    """Fast-marching distance from ``source`` over Omega or a masked part of it.

    ``restriction`` is a boolean node mask (typically one subregion); nodes
    outside it are impassable.  ``cost`` overrides the node slowness (used for
    synthetic flat-metric checks).
    """
    source = np.asarray(source, dtype=float)
    if not bool(contains(grid.domain, source)):
        raise SourceOutsideError(f"source {source.tolist()} lies outside the domain")
    allowed = grid.passable if restriction is None else grid.passable & restriction
    inv = _inverse_h(grid, cost)
    if cost is None:
        cost = slowness(grid)
    else:
        allowed = allowed & np.isfinite(cost)
    idx, val = _seeds(grid, source, allowed, inv)
    if idx.size == 0:
        # source cell corners all blocked; fall back to the nearest allowed node
        iy, ix = grid.nearest_index(source)
        if not allowed[iy, ix]:
            cand = np.argwhere(allowed)
            if cand.size == 0:
                raise SourceOutsideError("restriction leaves no passable nodes")
            k = np.argmin((grid.X[allowed] - source[0]) ** 2 + (grid.Y[allowed] - source[1]) ** 2)
            iy, ix = cand[k]
        q = grid.node(iy, ix)
        dist = float(np.hypot(*(q - source)))
        idx = np.array([iy * grid.nx + ix], dtype=np.int64)
        val = np.array([dist / max(float(grid.h[iy, ix]), grid.h_min)])
    d = _fast_march(np.ascontiguousarray(cost, dtype=float), np.ascontiguousarray(allowed), idx, val)
    return GeodesicField(grid, source, d, allowed, label, inv=inv)


def distance(grid: MetricGrid, a, b, restriction: np.ndarray | None = None) -> float:
    """``d_g(a, b)`` from a single field sourced at ``a``."""
    if not bool(contains(grid.domain, np.asarray(b, dtype=float))):
        raise SourceOutsideError(f"point {list(b)} lies outside the domain")
    return distance_field(grid, a, restriction).endpoint(b)


def path_length(grid: MetricGrid, path) -> float:
    """Metric length of a polyline: Euclidean segment length over ``h`` at the midpoint."""
    pts = np.asarray(path, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        if pts.shape[0] == 1 and not bool(contains(grid.domain, pts[0])):
            raise InvalidPathError("path leaves the domain")
        return 0.0
    if not np.all(contains(grid.domain, pts)):
        raise InvalidPathError("path leaves the domain")
    mids = 0.5 * (pts[1:] + pts[:-1])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    h = barrier(grid.domain, mids)
    if np.any(h <= 0):
        raise InvalidPathError("path leaves the domain")
    return float(np.sum(seg / h))


def field_gradient(field: GeodesicField, p) -> np.ndarray:
    """``grad d`` at ``p``: central differences of the interpolated field.

    Falls back to a one-sided difference when one neighbour is unreachable.
    """
    p = np.asarray(p, dtype=float)
    step = field.grid.spacing
    d0 = field.at(p)
    g = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        fp = field.at(p + e)
        fm = field.at(p - e)
        if math.isfinite(fp) and math.isfinite(fm):
            g[k] = (fp - fm) / (2 * step)
        elif math.isfinite(fp):
            g[k] = (fp - d0) / step
        elif math.isfinite(fm):
            g[k] = (d0 - fm) / step
    return g


def near_source(field: GeodesicField, p) -> bool:
    p = np.asarray(p, dtype=float)
    inv = field.inv if field.inv is not None else _inverse_h(field.grid, None)
    return field.at(p) < field.grid.spacing * float(np.ravel(inv(p[None, :]))[0])


def descent_direction(field: GeodesicField, p) -> np.ndarray:
    """Unit vector along ``-grad d``; the zero vector signals arrival at the source."""
    if near_source(field, p):
        return np.zeros(2)
    g = field_gradient(field, p)
    norm = float(np.linalg.norm(g))
    if norm == 0 or not math.isfinite(norm):
        return np.zeros(2)
    return -g / norm


def sample_c_h(grid: MetricGrid) -> float:
    """``max ||grad h||`` over interior nodes (central differences of ``h``)."""
    from .geometry import grad_barrier

    pts = np.stack([grid.X[grid.inside], grid.Y[grid.inside]], axis=-1)
    g = grad_barrier(grid.domain, pts)
    return float(np.max(np.hypot(g[:, 0], g[:, 1])))
