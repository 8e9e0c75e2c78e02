"""Independent reference computations used by checks and tests.

Nothing here is on the simulation path; each routine reaches its answer by a
different method than the production code it is compared against.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .geometry import AnnulusDomain, barrier, contains
from .grid import MetricGrid


def graph_distances(grid: MetricGrid, source_node: tuple[int, int], allowed: np.ndarray | None = None,
                    return_predecessors: bool = False):
    """8-connected shortest paths; edge weight = Euclidean length x mean of ``1/h`` at the endpoints."""
    if allowed is None:
        allowed = grid.passable
    ny, nx = grid.shape
    with np.errstate(divide="ignore"):
        inv_h = np.where(allowed, 1.0 / grid.h, np.inf)
    rows, cols, w = [], [], []
    idx = np.arange(ny * nx).reshape(ny, nx)
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ys = slice(0, ny - dy)
        yd = slice(dy, ny)
        xs = slice(max(0, -dx), nx - max(0, dx))
        xd = slice(max(0, dx), nx - max(0, -dx))
        a, b = idx[ys, xs], idx[yd, xd]
        ok = allowed[ys, xs] & allowed[yd, xd]
        length = grid.spacing * np.hypot(dx, dy)
        weight = length * 0.5 * (inv_h[ys, xs] + inv_h[yd, xd])
        rows.append(a[ok])
        cols.append(b[ok])
        w.append(weight[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = np.concatenate(w)
    mat = coo_matrix((w, (rows, cols)), shape=(ny * nx, ny * nx)).tocsr()
    src = source_node[0] * nx + source_node[1]
    out = dijkstra(mat, directed=False, indices=src, return_predecessors=return_predecessors)
    if return_predecessors:
        d, pred = out
        return d.reshape(ny, nx), pred
    return out.reshape(ny, nx)


def graph_path(grid: MetricGrid, pred: np.ndarray, source_node, target_node) -> np.ndarray:
    """Backtrace a node path (as points) from ``target_node`` to ``source_node``."""
    nx = grid.nx
    cur = target_node[0] * nx + target_node[1]
    src = source_node[0] * nx + source_node[1]
    pts = []
    while cur != src and cur >= 0:
        iy, ix = divmod(int(cur), nx)
        pts.append((grid.X[iy, ix], grid.Y[iy, ix]))
        cur = pred[cur]
    iy, ix = source_node
    pts.append((grid.X[iy, ix], grid.Y[iy, ix]))
    return np.array(pts)


def monte_carlo_mass(domain: AnnulusDomain, rho, samples: int = 1_000_000, seed: int = 0) -> float:
    """Rejection-sampled ``integral of rho over Omega`` on the bounding box."""
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = domain.bounding_box()
    pts = np.column_stack([rng.uniform(xmin, xmax, samples), rng.uniform(ymin, ymax, samples)])
    inside = contains(domain, pts)
    box = (xmax - xmin) * (ymax - ymin)
    return float(box * np.sum(rho(pts[inside])) / samples)


def analytic_grad_barrier(domain: AnnulusDomain, q) -> np.ndarray:
    """Closed-form gradient of the product barrier via the polar chain rule."""
    q = np.asarray(q, dtype=float)
    d = q - domain.center
    r = np.hypot(d[..., 0], d[..., 1])
    th = np.arctan2(d[..., 1], d[..., 0])
    ro, ro1 = domain.outer.radius(th), domain.outer.radius(th, 1)
    ri, ri1 = domain.inner.radius(th), domain.inner.radius(th, 1)
    dh_dr = (r - ri) * -1.0 + (ro - r)
    dh_dth = ro1 * (r - ri) - (ro - r) * ri1
    er = np.stack([np.cos(th), np.sin(th)], axis=-1)
    et = np.stack([-np.sin(th), np.cos(th)], axis=-1)
    return dh_dr[..., None] * er + (dh_dth / r)[..., None] * et


def barrier_values(domain, q):
    return barrier(domain, q)
