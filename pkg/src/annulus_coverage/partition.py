"""Sliding partition bars on the inner boundary and the workloads they induce.

Bar ``i`` sits at counter-clockwise arc length ``l[i]`` on the inner curve.
Subregion ``i`` spans the arc from bar ``i`` to bar ``i+1`` (indices cyclic),
so bar ``i`` separates subregion ``i-1`` (its clockwise side) from
subregion ``i`` (its counter-clockwise side).  Moving a bar clockwise, along
its frame tangent, grows the subregion it owns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq

from .density import DensityField
from .geometry import AnnulusDomain, FrenetFrame, barrier, frame_at_arclength
from .grid import SUBCELLS, MetricGrid

log = logging.getLogger(__name__)

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
# cut bands reach this many spacings past each bar end so they always seal
# against the exterior
END_MARGIN = 3.0


class DegenerateGeometryError(ValueError):
    pass


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PartitionBar:
    """Segment of the bar line between its inner and outer boundary crossings.

    The line passes through ``origin`` along ``direction``; ``side`` is its
    unit normal pointing into the bar's own subregion (counter-clockwise).
    ``t_start``/``t_end`` are line parameters of the two crossings.
    """

    l: float
    frame: FrenetFrame
    origin: np.ndarray
    direction: np.ndarray
    side: np.ndarray
    t_start: float
    t_end: float

    @property
    def start(self) -> np.ndarray:
        return self.origin + self.t_start * self.direction

    @property
    def end(self) -> np.ndarray:
        return self.origin + self.t_end * self.direction

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    def samples(self, spacing: float) -> np.ndarray:
        n = max(2, int(math.ceil(self.length / spacing)) + 1)
        t = np.linspace(self.t_start, self.t_end, n)
        return self.origin + t[:, None] * self.direction


def _first_exit(domain: AnnulusDomain, origin, direction, t0: float, step: float) -> float:
    """Line parameter of the first boundary crossing beyond ``t0``."""
    f = lambda t: float(barrier(domain, origin + t * direction))
    n = int(domain.diameter / step) + 4
    ts = t0 + step * np.arange(1, n + 1)
    vals = barrier(domain, origin + ts[:, None] * direction)
    hit = np.nonzero(vals <= 0)[0]
    if hit.size == 0:
        raise DegenerateGeometryError("bar line never leaves the domain")
    k = hit[0]
    lo = t0 if k == 0 else ts[k - 1]
    if vals[k] == 0:
        return float(ts[k])
    if f(lo) <= 0:
        return lo
    return brentq(f, lo, ts[k], xtol=1e-10, rtol=1e-14)


def bar_from_line(domain: AnnulusDomain, origin, direction, spacing: float,
                  l: float = float("nan"), frame: FrenetFrame | None = None) -> PartitionBar:
    """Connected piece of the line through ``origin`` that reaches the inner curve.

    ``origin`` may sit on the inner boundary, slightly inside the hole, or
    slightly inside the domain (translated bars in derivative checks).
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    f = lambda t: float(barrier(domain, origin + t * direction))
    r, theta = domain.polar(origin)
    r_in = float(domain.inner.radius(theta))
    tol = 1e-12 * domain.diameter
    if abs(r - r_in) <= tol:
        t_start = 0.0
    elif r < r_in:
        # inside the hole: walk outward to the inner curve
        t_start = _hole_exit(domain, origin, direction, spacing)
    else:
        # inside the annulus: walk back to the inner curve
        t_start = -_first_exit(domain, origin, -direction, 0.0, spacing)
        if abs(f(t_start)) > 1e-9 or domain.polar(origin + t_start * direction)[0] > r + tol:
            raise DegenerateGeometryError("bar line does not reach the inner boundary")
    t_end = _first_exit(domain, origin, direction, t_start, spacing)
    if t_end - t_start < spacing:
        raise DegenerateGeometryError(
            f"bar segment at l={l:.6g} shorter than one grid spacing ({t_end - t_start:.3g} m)"
        )
    side = np.array([-direction[1], direction[0]])
    if frame is None:
        frame = FrenetFrame(origin, np.array([-side[0], -side[1]]), direction, float("nan"), l, float(theta))
    return PartitionBar(l, frame, origin, direction, side, float(t_start), float(t_end))


def _hole_exit(domain, origin, direction, step):
    def g(t):
        q = origin + t * direction
        r, th = domain.polar(q)
        return float(r - domain.inner.radius(th))

    t = 0.0
    while g(t + step) < 0:
        t += step
        if t > domain.diameter:
            raise DegenerateGeometryError("bar line never leaves the inner hole")
    return brentq(g, t, t + step, xtol=1e-12, rtol=1e-14)


def bar_segment(domain: AnnulusDomain, l: float, spacing: float) -> PartitionBar:
    """Bar whose footpoint sits at arc length ``l``, running along the outward normal."""
    frame = frame_at_arclength(domain, l)
    # the frame normal is the outward normal, so the side normal (into the
    # owned subregion, counter-clockwise) is the negated frame tangent
    bar = bar_from_line(domain, frame.footpoint, frame.normal, spacing, frame.arc_length, frame)
    return bar


@dataclass
class PartitionState:
    l: np.ndarray
    bars: list[PartitionBar]
    perimeter: float

    @property
    def n(self) -> int:
        return len(self.l)

    def gaps(self) -> np.ndarray:
        """Counter-clockwise arc gap from bar ``i`` to bar ``i+1``."""
        if self.n == 1:
            return np.array([self.perimeter])
        return np.mod(np.roll(self.l, -1) - self.l, self.perimeter)

    def is_ordered(self, eps: float = 0.0) -> bool:
        if self.n == 1:
            return True
        g = self.gaps()
        return bool(np.all(g > eps * (1 - 1e-9)) and abs(g.sum() - self.perimeter) < 1e-6 * self.perimeter)


def make_partition(domain: AnnulusDomain, l, spacing: float) -> PartitionState:
    l = np.mod(np.asarray(l, dtype=float), domain.perimeter)
    bars = [bar_segment(domain, li, spacing) for li in l]
    return PartitionState(l, bars, domain.perimeter)


def min_gap(domain: AnnulusDomain, n: int, spacing: float) -> float:
    return max(2.0 * spacing, domain.perimeter / (20.0 * n))


# ---------------------------------------------------------------- decomposition


def square_fraction(sd, nx, ny, size):
    """Area fraction of an axis-aligned square on the positive side of a line.

    ``sd`` is the signed distance from the square's center to the line and
    ``(nx, ny)`` the line's unit normal.  Exact: the projection of a uniform
    point of the square onto the normal has a trapezoidal density.
    """
    sd = np.asarray(sd, dtype=float)
    u = np.abs(nx) * size / 2.0
    v = np.abs(ny) * size / 2.0
    u, v = np.maximum(u, v), np.minimum(u, v)
    t = -np.abs(sd)
    # lower-tail CDF at t <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = (t + u + v) ** 2 / (8.0 * u * v)
    lin = (t + u) / (2.0 * u)
    low = np.where(t <= -(u + v), 0.0, np.where(t <= -(u - v), quad, lin))
    low = np.where(v < 1e-12 * size, np.clip(lin, 0.0, 0.5), low)
    return np.where(sd >= 0, 1.0 - low, low)


@dataclass
class SubregionDecomposition:
    """Cell labels plus fractional shares for cells cut by bars.

    ``labels`` holds the subregion index of every cell overlapping the domain
    (``-1`` elsewhere).  Cells crossed by a bar are split by area: row ``k``
    of ``cut_share`` is the domain area fraction of cell ``cut_index[k]``
    assigned to each subregion.
    """

    labels: np.ndarray
    free: np.ndarray
    cut_index: np.ndarray
    cut_share: np.ndarray
    n: int

    def mask(self, i: int) -> np.ndarray:
        return self.labels == i

    def cell_weights(self, fill: np.ndarray) -> np.ndarray:
        """Per-subregion area fractions, shape ``(n, ny, nx)``."""
        w = np.zeros((self.n,) + self.labels.shape)
        for i in range(self.n):
            w[i] = np.where(self.free & (self.labels == i), fill, 0.0)
        flat = w.reshape(self.n, -1)
        flat[:, self.cut_index] += self.cut_share.T
        return w


def _bar_cut(grid: MetricGrid, bar: PartitionBar, cand: np.ndarray, pts: np.ndarray):
    rel = pts - bar.origin
    sd = rel @ bar.side
    tp = rel @ bar.direction
    w = (abs(bar.side[0]) + abs(bar.side[1])) * grid.spacing / 2.0
    m = END_MARGIN * grid.spacing
    hit = (np.abs(sd) <= w * (1 + 1e-9)) & (tp >= bar.t_start - m) & (tp <= bar.t_end + m)
    return cand[hit], sd[hit]


def _subcell_plus(grid: MetricGrid, cell: int, bar: PartitionBar) -> np.ndarray:
    """Per-subcell positive-side fractions for one cell."""
    iy, ix = divmod(int(cell), grid.nx)
    s = grid.spacing / SUBCELLS
    offs = (np.arange(SUBCELLS) + 0.5) * s - grid.spacing / 2
    SX, SY = np.meshgrid(offs, offs)
    cx = grid.X[iy, ix] + SX - bar.origin[0]
    cy = grid.Y[iy, ix] + SY - bar.origin[1]
    sd = cx * bar.side[0] + cy * bar.side[1]
    return square_fraction(sd, bar.side[0], bar.side[1], s)


def decompose(grid: MetricGrid, state: PartitionState) -> SubregionDecomposition:
    n = state.n
    nyx = grid.ny * grid.nx
    fill = grid.fill.ravel()
    cand = np.nonzero(fill > 0)[0]
    pts = np.stack([grid.X.ravel()[cand], grid.Y.ravel()[cand]], axis=-1)

    hits = [_bar_cut(grid, bar, cand, pts) for bar in state.bars]
    all_cells = np.concatenate([h[0] for h in hits]) if hits else np.zeros(0, np.int64)
    all_sd = np.concatenate([h[1] for h in hits]) if hits else np.zeros(0)
    all_bar = np.concatenate([np.full(h[0].size, j) for j, h in enumerate(hits)]) if hits else np.zeros(0, np.int64)
    cut_index, inverse, counts = np.unique(all_cells, return_inverse=True, return_counts=True)
    cut_mask = np.zeros(nyx, dtype=bool)
    cut_mask[cut_index] = True

    free = (fill > 0) & ~cut_mask
    comp, ncomp = ndimage.label(free.reshape(grid.shape), structure=FOUR_CONNECTED)
    comp = comp.ravel()

    # seed each subregion from the middle of its inner-boundary arc
    gaps = state.gaps()
    comp_to_region = {}
    for i in range(n):
        l_mid = state.l[i] + 0.5 * gaps[i]
        frame = frame_at_arclength(grid.domain, l_mid)
        c = _seed_component(grid, frame, comp)
        if c is None:
            raise DecompositionError(f"no seed cell for subregion {i} (bars at l={np.round(state.l, 4).tolist()})")
        if c in comp_to_region:
            raise DecompositionError(
                f"subregions {comp_to_region[c]} and {i} are connected; bars at "
                f"l={np.round(state.l, 4).tolist()} do not separate the domain"
            )
        comp_to_region[c] = i

    labels = np.full(nyx, -1, dtype=np.int64)
    lut = np.full(ncomp + 1, -1, dtype=np.int64)
    for c, i in comp_to_region.items():
        lut[c] = i
    labels[free] = lut[comp[free]]

    # fractional shares for cut cells; single-bar cells fully inside the
    # domain take the closed form, the rest go through subcells
    share = np.zeros((cut_index.size, n))
    partial = np.zeros(nyx, dtype=bool)
    if grid.subcell_inside:
        keys = np.array([iy * grid.nx + ix for iy, ix in grid.subcell_inside])
        partial[keys] = True
    simple = (counts[inverse] == 1) & ~partial[all_cells]
    sides = np.array([b.side for b in state.bars]).reshape(-1, 2)
    bs = all_bar[simple]
    plus = square_fraction(all_sd[simple], sides[bs, 0], sides[bs, 1], grid.spacing) * fill[all_cells[simple]]
    rows = inverse[simple]
    np.add.at(share, (rows, bs), plus)
    np.add.at(share, (rows, (bs - 1) % n), fill[all_cells[simple]] - plus)
    for k in np.unique(inverse[~simple]).tolist():
        sel = inverse == k
        c = int(cut_index[k])
        share[k] = _cut_cell_share(grid, state, c, list(zip(all_bar[sel].tolist(), all_sd[sel].tolist())), fill[c])
    if cut_index.size:
        labels[cut_index] = np.argmax(share, axis=1)

    # free fragments not reached from any seed join the nearest labeled cell
    orphan = free & (labels < 0)
    if orphan.any():
        lab2 = labels.reshape(grid.shape)
        _, (iy, ix) = ndimage.distance_transform_edt(lab2 < 0, return_indices=True)
        nearest = lab2[iy, ix].ravel()
        labels[orphan] = nearest[orphan]
        log.debug("attached %d orphan cells to neighbouring subregions", int(orphan.sum()))

    return SubregionDecomposition(labels.reshape(grid.shape), free.reshape(grid.shape), cut_index, share, n)


def _seed_component(grid: MetricGrid, frame: FrenetFrame, comp: np.ndarray):
    for k in range(1, 200):
        q = frame.footpoint + k * 0.5 * grid.spacing * frame.normal
        if barrier(grid.domain, q) <= 0 and k > 4:
            return None
        iy, ix = grid.nearest_index(q)
        c = comp[iy * grid.nx + ix]
        if c > 0:
            return int(c)
    return None


def _cut_cell_share(grid, state, cell, bars, fill_c):
    n = state.n
    out = np.zeros(n)
    iy, ix = divmod(int(cell), grid.nx)
    sub_mask = grid.subcell_inside.get((iy, ix))
    if len(bars) == 1 and sub_mask is None:
        j, sd = bars[0]
        bar = state.bars[j]
        plus = float(square_fraction(sd, bar.side[0], bar.side[1], grid.spacing)) * fill_c
        out[j] += plus
        out[(j - 1) % n] += fill_c - plus
        return out
    if sub_mask is None:
        sub_mask = np.ones((SUBCELLS, SUBCELLS), dtype=bool)
    chain = _order_chain(state, [j for j, _ in bars])
    # product of positive-side fractions along the chain of consecutive bars
    weight = sub_mask.astype(float) / SUBCELLS**2
    acc = weight
    first = chain[0]
    for pos, j in enumerate(chain):
        a = _subcell_plus(grid, cell, state.bars[j])
        out[(j - 1) % n] += float(np.sum(acc * (1 - a)))
        acc = acc * a
    out[chain[-1]] += float(np.sum(acc))
    del first
    return out


def _order_chain(state: PartitionState, js: list[int]) -> list[int]:
    js = sorted(set(js))
    if len(js) == 1:
        return js
    n = state.n
    # rotate so the chain starts after the largest cyclic index gap
    best = None
    for start in js:
        seq = sorted(js, key=lambda j: (j - start) % n)
        span = (seq[-1] - seq[0]) % n
        if best is None or span < best[0]:
            best = (span, seq)
    span, seq = best
    if span != len(seq) - 1 and n > 1:
        raise DecompositionError(f"cell cut by non-adjacent bars {seq}")
    return seq


# ---------------------------------------------------------------- workloads


@dataclass(frozen=True)
class WorkloadVector:
    m: np.ndarray

    @property
    def total(self) -> float:
        return float(self.m.sum())

    @property
    def mean(self) -> float:
        return float(self.m.mean())

    def lyapunov(self) -> float:
        return 0.5 * float(np.sum((self.m - self.m.mean()) ** 2))

    def max_neighbor_gap(self) -> float:
        return float(np.max(np.abs(self.m - np.roll(self.m, 1))))

    def relative_imbalance(self) -> float:
        return float(np.max(np.abs(self.m - self.mean)) / self.mean)


def density_on_grid(grid: MetricGrid, rho: DensityField) -> np.ndarray:
    return rho(np.stack([grid.X, grid.Y], axis=-1))


def workload(decomp: SubregionDecomposition, rho: DensityField | np.ndarray, grid: MetricGrid) -> WorkloadVector:
    """Midpoint-rule masses ``m_i`` with fractional cut cells."""
    rho_grid = rho if isinstance(rho, np.ndarray) else density_on_grid(grid, rho)
    mass = (rho_grid * grid.fill).ravel()
    lab = decomp.labels.ravel()
    free = decomp.free.ravel()
    m = np.bincount(lab[free], weights=mass[free], minlength=decomp.n)[: decomp.n]
    if decomp.cut_index.size:
        m = m + decomp.cut_share.T @ rho_grid.ravel()[decomp.cut_index]
    return WorkloadVector(m * grid.cell_area)


def bar_flux(bar: PartitionBar, rho: DensityField, spacing: float) -> float:
    """Trapezoid line integral of ``rho`` along the bar segment."""
    pts = bar.samples(spacing)
    vals = rho(pts)
    seg = np.linalg.norm(pts[1] - pts[0])
    return float(seg * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


# ---------------------------------------------------------------- dynamics


def bar_update(l_i: float, m_prev: float, m_i: float, gap_cw: float, gap_ccw: float,
               kappa_s: float, dt: float, eps: float) -> tuple[float, bool]:
    """One Euler step for a single bar from neighbour-local data only.

    Returns the new arc length and whether the anti-crossing guard clipped it.
    Motion toward a neighbour may use at most half of the slack above ``eps``
    so two bars closing on each other can never cross.
    """
    step = kappa_s * (m_i - m_prev) * dt
    limit = 0.5 * (gap_ccw - eps) if step > 0 else 0.5 * (gap_cw - eps)
    limit = max(limit, 0.0)
    if abs(step) > limit:
        return l_i + math.copysign(limit, step), True
    return l_i + step, False


def partition_step(state: PartitionState, workloads: WorkloadVector, kappa_s: float, dt: float,
                   domain: AnnulusDomain, spacing: float) -> tuple[PartitionState, int]:
    """Advance every bar one step; returns the new state and the guard count."""
    n = state.n
    if n == 1:
        return state, 0
    m = workloads.m
    gaps = state.gaps()
    eps = min_gap(domain, n, spacing)
    new_l = np.empty(n)
    clipped = 0
    for i in range(n):
        new_l[i], hit = bar_update(
            state.l[i], m[i - 1], m[i], gaps[i - 1], gaps[i], kappa_s, dt, eps
        )
        clipped += hit
    if clipped:
        log.debug("anti-crossing guard clipped %d bar updates", clipped)
    new_l = np.mod(new_l, state.perimeter)
    bars = [
        old if nl == ol else bar_segment(domain, nl, spacing)
        for nl, ol, old in zip(new_l, state.l, state.bars)
    ]
    return PartitionState(new_l, bars, state.perimeter), clipped
