"""Oracle and property checks run by ``annulus-coverage check``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import CoverageCostConfig, find_local_optimum, subregion
from .density import DensityField
from .geometry import AnnulusDomain, barrier
from .grid import MetricGrid
from .metric import distance_field, sample_c_h
from .oracles import graph_distances, monte_carlo_mass
from .partition import decompose, density_on_grid, make_partition, workload
from .sim import check_hessian, check_lemma1, random_bars


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status:4}  {self.name:34} {self.value:12.5g}  (limit {self.threshold:g}) {self.note}"


def interior_points(domain: AnnulusDomain, grid: MetricGrid, n: int, rng: np.random.Generator,
                    h_floor: float | None = None) -> np.ndarray:
    """Uniform rejection samples with ``h >= h_floor`` (default ``h_interior``)."""
    h_floor = grid.h_interior if h_floor is None else h_floor
    xmin, xmax, ymin, ymax = domain.bounding_box()
    out = []
    while len(out) < n:
        q = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        if barrier(domain, q) >= h_floor:
            out.append(q)
    return np.array(out)


def graph_agreement(grid: MetricGrid, source_node: tuple[int, int]) -> float:
    """Relative L1 gap between fast marching and the 8-connected graph, over reachable nodes."""
    fld = distance_field(grid, grid.node(*source_node))
    ref = graph_distances(grid, source_node)
    ok = np.isfinite(fld.values) & np.isfinite(ref)
    return float(np.sum(np.abs(fld.values[ok] - ref[ok])) / np.sum(ref[ok]))


def symmetry_errors(grid: MetricGrid, pts: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    fields = {}

    def d(i, j):
        if i not in fields:
            fields[i] = distance_field(grid, pts[i])
        return fields[i].endpoint(pts[j])

    out = []
    for i, j in pairs:
        a, b = d(i, j), d(j, i)
        out.append(abs(a - b) / max(a, b))
    return np.array(out)


def triangle_ratios(grid: MetricGrid, pts: np.ndarray, triples: np.ndarray) -> np.ndarray:
    """``d(a,c) / (d(a,b) + d(b,c))`` per triple (the slack test wants <= 1.03)."""
    fields = {}

    def d(i, j):
        if i not in fields:
            fields[i] = distance_field(grid, pts[i])
        return fields[i].endpoint(pts[j])

    return np.array([d(a, c) / (d(a, b) + d(b, c)) for a, b, c in triples])


def eikonal_fraction(grid: MetricGrid, source, tau: float = 0.1, resolved: float = 1.25) -> float:
    """Share of interior smooth nodes with ``|grad d| * h`` inside ``[1 - tau, 1 + tau]``.

    A node counts as smooth when ``h`` varies by at most the factor
    ``resolved`` across its 5-point stencil (so a central difference can see
    the metric), it lies more than two cells from the source, and ``d`` is
    monotone through it along both axes (excluding the ridge where wavefronts
    from the two sides of the hole meet).
    """
    fld = distance_field(grid, source)
    d = fld.values
    h = grid.h
    with np.errstate(invalid="ignore", divide="ignore"):
        dy_f, dy_b = d[2:, 1:-1] - d[1:-1, 1:-1], d[1:-1, 1:-1] - d[:-2, 1:-1]
        dx_f, dx_b = d[1:-1, 2:] - d[1:-1, 1:-1], d[1:-1, 1:-1] - d[1:-1, :-2]
        smooth = (dy_f * dy_b > 0) & (dx_f * dx_b > 0)
        gy = 0.5 * (dy_f + dy_b) / grid.spacing
        gx = 0.5 * (dx_f + dx_b) / grid.spacing
        res = np.hypot(gx, gy) * h[1:-1, 1:-1]
        stencil = np.stack([h[1:-1, 1:-1], h[2:, 1:-1], h[:-2, 1:-1], h[1:-1, 2:], h[1:-1, :-2]])
        ratio = stencil.max(axis=0) / stencil.min(axis=0)
    far = np.hypot(grid.X - source[0], grid.Y - source[1])[1:-1, 1:-1] > 2 * grid.spacing
    ok = np.isfinite(res) & smooth & far & (stencil.min(axis=0) >= grid.h_interior) & (ratio <= resolved)
    return float(np.mean(np.abs(res[ok] - 1.0) <= tau))


def blowup_profile(grid: MetricGrid, source, direction, halvings: int = 6):
    """Distances to points along ``direction`` whose ``h`` is ``h(source) * 2^-k``.

    Returns ``(h_k, d_k, bound_k)`` with the lower bound ``ln(h_0/h_k)/c_h``.
    """
    from scipy.optimize import brentq

    source = np.asarray(source, dtype=float)
    direction = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    h0 = float(barrier(grid.domain, source))
    t_max = 0.0
    while barrier(grid.domain, source + (t_max + grid.spacing) * direction) > 0:
        t_max += grid.spacing
    hk, dk = [h0], [0.0]
    fld = distance_field(grid, source)
    for k in range(1, halvings + 1):
        target = h0 * 2.0**-k
        t = brentq(lambda s: float(barrier(grid.domain, source + s * direction)) - target, 0.0, t_max + grid.spacing)
        q = source + t * direction
        hk.append(float(barrier(grid.domain, q)))
        dk.append(fld.endpoint(q))
    c_h = sample_c_h(grid)
    hk, dk = np.array(hk), np.array(dk)
    return hk, dk, np.log(h0 / hk) / c_h


def run_checks(domain: AnnulusDomain, density: DensityField, grid: MetricGrid, n: int, seed: int = 0,
               cost: CoverageCostConfig = CoverageCostConfig(), placements: int = 5,
               mc_samples: int = 400_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    spacing = grid.spacing

    # workload flux identity over random bar placements
    worst, anti = 0.0, 0.0
    for _ in range(placements):
        l = random_bars(domain, n, spacing, rng, gap=0.25 * domain.perimeter / n)
        rep = check_lemma1(grid, make_partition(domain, l, spacing), density)
        worst = max(worst, rep["max_rel_error"])
        anti = max(anti, rep["max_antisymmetry"])
    results.append(CheckResult("bar flux vs dm/dl (max rel)", worst, 0.02, worst < 0.02))
    results.append(CheckResult("flux antisymmetry", anti, 1e-6, anti < 1e-6))

    # quadrature
    part = make_partition(domain, random_bars(domain, n, spacing, rng), spacing)
    decomp = decompose(grid, part)
    rho_grid = density_on_grid(grid, density)
    total = workload(decomp, rho_grid, grid).total
    mc = monte_carlo_mass(domain, density, mc_samples, seed)
    rel = abs(total - mc) / mc
    results.append(CheckResult("total workload vs Monte Carlo", rel, 0.01, rel < 0.01))

    # second-order condition at the subregion optima
    subs = [subregion(decomp.labels, i, rho_grid, grid) for i in range(n)]
    targets = [find_local_optimum(s, grid, cost) for s in subs]
    hess = check_hessian(grid, subs, targets, cost)
    min_eig = hess["min_eigenvalue"]
    asym = max((r["asymmetry"] for r in hess["subregions"] if not r["skipped"]), default=float("nan"))
    note = f"({hess['skipped']} edge targets skipped)" if hess["skipped"] else ""
    results.append(CheckResult("cost Hessian min eigenvalue", min_eig, 0.0, min_eig > 0, note))
    results.append(CheckResult("cost Hessian asymmetry", asym, 1e-3, asym < 1e-3))

    # geodesic solver
    src_node = np.unravel_index(np.argmax(np.where(grid.passable, grid.h, -np.inf)), grid.shape)
    gap = graph_agreement(grid, (int(src_node[0]), int(src_node[1])))
    results.append(CheckResult("fast marching vs graph (rel L1)", gap, 0.03, gap < 0.03))
    pts = interior_points(domain, grid, 20, rng)
    pairs = np.array([(i, i + 10) for i in range(10)])
    sym = symmetry_errors(grid, pts, pairs).max()
    results.append(CheckResult("distance symmetry (max rel)", sym, 0.02, sym < 0.02))
    triples = np.array([rng.choice(20, 3, replace=False) for _ in range(20)])
    tri = triangle_ratios(grid, pts, triples).max()
    results.append(CheckResult("triangle inequality ratio", tri, 1.03, tri <= 1.03))
    frac = eikonal_fraction(grid, grid.node(*src_node))
    results.append(CheckResult("eikonal residual share", frac, 0.95, frac >= 0.95))
    restricted = True
    for i in range(n):
        p = targets[i].point
        whole = distance_field(grid, p).values
        sub = distance_field(grid, p, restriction=subs[i].mask).values
        ok = np.isfinite(sub)
        restricted &= bool(np.all(sub[ok] >= whole[ok] - 1e-12))
    results.append(CheckResult("restricted >= whole-domain field", float(restricted), 1.0, restricted))

    # boundary blow-up from the widest point toward the outer curve
    src = grid.node(*src_node)
    outward = src - domain.center
    hk, dk, bound = blowup_profile(grid, src, outward)
    mono = bool(np.all(np.diff(dk) > 0))
    margin = float(np.min(dk[1:] - 0.95 * bound[1:]))
    results.append(CheckResult("blow-up monotone", float(mono), 1.0, mono))
    results.append(CheckResult("blow-up lower bound margin", margin, 0.0, margin >= 0))
    return results
