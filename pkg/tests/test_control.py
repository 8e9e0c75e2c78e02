import math

import numpy as np
import pytest

from annulus_coverage.control import (
    EUCLIDEAN,
    GEODESIC,
    CoverageCostConfig,
    EmptySubregionError,
    OutsideSubregionError,
    StaleFieldError,
    Subregion,
    TargetState,
    agent_step,
    control_input,
    exhaustive_optimum,
    find_local_optimum,
    local_cost,
    subregion,
    target_field,
)
from annulus_coverage.geometry import barrier
from annulus_coverage.metric import field_gradient
from annulus_coverage.partition import decompose, density_on_grid, make_partition
from annulus_coverage.sim import SimConfig, Simulation, check_hessian

EUC = CoverageCostConfig(f=EUCLIDEAN)
GEO = CoverageCostConfig(f=GEODESIC)

# centroid radius of the quarter annulus 0.5 < r < 1: (2/3)(r2^3 - r1^3)/(r2^2 - r1^2) * sin(a)/a, a = pi/4
QUARTER_CENTROID_R = (2 / 3) * (0.875 / 0.75) * math.sin(math.pi / 4) / (math.pi / 4)


@pytest.fixture(scope="module")
def quarters(circ_grid, circ_domain):
    from annulus_coverage.density import DensityField

    part = make_partition(circ_domain, circ_domain.perimeter * np.arange(4) / 4, 0.02)
    dec = decompose(circ_grid, part)
    rho = density_on_grid(circ_grid, DensityField("uniform"))
    return [subregion(dec.labels, i, rho, circ_grid) for i in range(4)]


def window(grid, center, half, rho=None):
    iy, ix = grid.nearest_index(center)
    mask = np.zeros(grid.shape, dtype=bool)
    mask[iy - half: iy + half, ix - half: ix + half] = True
    mask &= grid.passable
    rho = np.ones(grid.shape) if rho is None else rho
    return Subregion(0, mask, np.where(mask, rho * grid.fill * grid.cell_area, 0.0))


def test_quarter_centroid(circ_grid, quarters):
    assert QUARTER_CENTROID_R == pytest.approx(0.7003, abs=1e-4)
    sub = quarters[0]
    tgt = find_local_optimum(sub, circ_grid, EUC)
    want = QUARTER_CENTROID_R * np.array([math.cos(math.pi / 4), math.sin(math.pi / 4)])
    assert np.linalg.norm(tgt.point - want) <= 2 * circ_grid.spacing


def test_quarters_rotate_into_each_other(circ_grid, quarters):
    pts = [find_local_optimum(s, circ_grid, GEO).point for s in quarters]
    radii = [np.linalg.norm(p) for p in pts]
    assert max(radii) - min(radii) <= 2 * circ_grid.spacing


@pytest.mark.parametrize("cfg", [EUC, GEO], ids=["euclidean", "geodesic"])
@pytest.mark.parametrize("center", [(1.2, 0.3), (-0.3, 1.15), (0.2, -1.0)])
def test_coarse_refine_equals_exhaustive(cs_grid, cs_rho, cfg, center):
    rho = density_on_grid(cs_grid, cs_rho)
    sub = window(cs_grid, center, 18, rho)
    a = find_local_optimum(sub, cs_grid, cfg)
    b = exhaustive_optimum(sub, cs_grid, cfg)
    assert a.node == b.node
    assert a.cost == pytest.approx(b.cost, rel=1e-12)


def test_single_cell_subregion(cs_grid):
    iy, ix = cs_grid.nearest_index([1.2, 0.3])
    mask = np.zeros(cs_grid.shape, dtype=bool)
    mask[iy, ix] = True
    w = np.where(mask, 2.5 * cs_grid.cell_area, 0.0)
    sub = Subregion(0, mask, w)
    tgt = find_local_optimum(sub, cs_grid, GEO)
    assert tgt.node == (iy, ix)
    q = cs_grid.node(iy, ix)
    assert local_cost(q, sub, cs_grid, EUC) == pytest.approx(0.0, abs=1e-15)
    # a point in the same cell: J = f(p, q_c) * rho * dA
    p = q + np.array([0.004, -0.003])
    assert local_cost(p, sub, cs_grid, EUC) == pytest.approx(0.005**2 * 2.5 * cs_grid.cell_area, rel=1e-9)


def test_empty_and_outside(cs_grid):
    empty = Subregion(0, np.zeros(cs_grid.shape, dtype=bool), np.zeros(cs_grid.shape))
    with pytest.raises(EmptySubregionError):
        find_local_optimum(empty, cs_grid, GEO)
    sub = window(cs_grid, (1.2, 0.3), 5)
    with pytest.raises(OutsideSubregionError):
        local_cost([-1.2, 0.3], sub, cs_grid, GEO)


def test_rectangle_second_moment(cs_grid):
    sub = window(cs_grid, (1.2, 0.3), 10)
    ys, xs = np.nonzero(sub.mask)
    assert sub.mask.sum() == 400 and np.all(cs_grid.fill[sub.mask] == 1)
    # closed form over the rectangle [x0, x1] x [y0, y1] of cells
    half = cs_grid.spacing / 2
    x0, x1 = cs_grid.X[0, xs.min()] - half, cs_grid.X[0, xs.max()] + half
    y0, y1 = cs_grid.Y[ys.min(), 0] - half, cs_grid.Y[ys.max(), 0] + half
    p = np.array([1.21, 0.33])

    def moment(a, b, c):
        return ((b - c) ** 3 - (a - c) ** 3) / 3

    exact = moment(x0, x1, p[0]) * (y1 - y0) + moment(y0, y1, p[1]) * (x1 - x0)
    assert local_cost(p, sub, cs_grid, EUC) == pytest.approx(exact, rel=0.01)


def test_cost_scales_with_density(cs_grid):
    sub = window(cs_grid, (1.2, 0.3), 8)
    doubled = Subregion(0, sub.mask, 3.0 * sub.weights)
    p = [1.2, 0.31]
    for cfg in (EUC, GEO):
        assert local_cost(p, doubled, cs_grid, cfg) == pytest.approx(3 * local_cost(p, sub, cs_grid, cfg), rel=1e-12)


def test_hessian_euclidean(circ_grid, quarters):
    targets = [find_local_optimum(s, circ_grid, EUC) for s in quarters]
    rep = check_hessian(circ_grid, quarters, targets, EUC)
    assert rep["skipped"] == 0
    for sub, row in zip(quarters, rep["subregions"]):
        # J = M|p - c|^2 + const has Hessian 2M I
        mass = sub.weights.sum()
        assert np.allclose(row["eigenvalues"], 2 * mass, rtol=1e-6)


def test_hessian_geodesic_positive(cs_grid, cs_rho, rng):
    from annulus_coverage.sim import random_bars

    part = make_partition(cs_grid.domain, random_bars(cs_grid.domain, 6, 0.02, rng), 0.02)
    dec = decompose(cs_grid, part)
    rho = density_on_grid(cs_grid, cs_rho)
    subs = [subregion(dec.labels, i, rho, cs_grid) for i in range(6)]
    targets = [find_local_optimum(s, cs_grid, GEO) for s in subs]
    rep = check_hessian(cs_grid, subs, targets, GEO)
    assert rep["skipped"] < 6
    assert rep["min_eigenvalue"] > 0


# ---------------------------------------------------------------- control law


@pytest.fixture(scope="module")
def field_q(cs_grid):
    q = np.array([1.25, 0.0])
    iy, ix = cs_grid.nearest_index(q)
    tgt = TargetState(cs_grid.node(iy, ix), 0.0, (iy, ix))
    return tgt, target_field(cs_grid, tgt, None, stamp=0)


def test_zero_input_at_target(cs_grid, field_q):
    tgt, fld = field_q
    assert np.all(control_input(tgt.point, tgt, fld, cs_grid, 0.1) == 0)


def test_input_antiparallel_to_gradient(cs_grid, field_q):
    tgt, fld = field_q
    for p in ([1.45, 0.3], [0.95, -0.25], [1.3, 0.45]):
        u = control_input(p, tgt, fld, cs_grid, 0.1)
        g = field_gradient(fld, np.array(p))
        cos = np.dot(u, g) / (np.linalg.norm(u) * np.linalg.norm(g))
        assert cos == pytest.approx(-1.0, abs=1e-12)


def test_speed_vanishes_toward_boundary(cs_grid, field_q):
    tgt, fld = field_q
    h_max = cs_grid.h_max
    direction = np.array([1.0, 0.05]) / np.hypot(1.0, 0.05)
    speeds, hs = [], []
    t = 0.05
    while True:
        p = tgt.point + t * direction
        h = float(barrier(cs_grid.domain, p))
        if h < 2 * cs_grid.h_min:
            break
        speeds.append(np.linalg.norm(control_input(p, tgt, fld, cs_grid, 0.1)))
        hs.append(h)
        t += 0.002
    speeds, hs = np.array(speeds), np.array(hs)
    late = hs < 0.1 * h_max
    assert late.sum() > 5
    assert np.all(np.diff(speeds[late]) < 0)
    assert speeds[-1] < 0.1 * speeds.max()


def test_stale_field(cs_grid, field_q):
    tgt, fld = field_q
    with pytest.raises(StaleFieldError):
        control_input([1.4, 0.2], tgt, fld, cs_grid, 0.1, step=fld.stamp + 11, period=10)
    control_input([1.4, 0.2], tgt, fld, cs_grid, 0.1, step=fld.stamp + 10, period=10)


def test_agent_step_basic(cs_domain):
    p = np.array([1.2, 0.3])
    q, hit = agent_step(p, np.zeros(2), 0.02, cs_domain)
    assert np.array_equal(q, p) and not hit
    u = np.array([0.3, -0.4])
    q, hit = agent_step(p, u, 0.02, cs_domain)
    assert np.linalg.norm(q - p) == pytest.approx(0.5 * 0.02) and not hit


def test_agent_step_guard(cs_domain):
    p = np.array([1.79, 0.0])
    q, hit = agent_step(p, np.array([1.0, 0.0]), 0.5, cs_domain)
    assert hit and barrier(cs_domain, q) > 0
    q, hit = agent_step(p, np.array([1e6, 0.0]), 1.0, cs_domain)
    assert hit and np.array_equal(q, p)


def test_agent_random_walk_stays_inside(cs_domain):
    rng = np.random.default_rng(5)
    p = np.array([1.2, 0.3])
    for _ in range(10_000):
        p, _ = agent_step(p, rng.normal(size=2), 0.05, cs_domain)
        assert barrier(cs_domain, p) > 0


def test_frozen_bars_energy_and_arrival(circ_domain, uniform):
    cfg = SimConfig(circ_domain, uniform, n_agents=3, T=20.0, kappa_p=0.5, seed=4,
                    freeze_partition=True)
    sim = Simulation(cfg)
    _, lg, _ = sim.run()
    E = np.array([r.E for r in lg.records])
    targets = np.array([r.targets for r in lg.records])
    # compare consecutive steps that share a target
    same = np.all(np.isclose(targets[1:], targets[:-1]), axis=2)
    rise = (E[1:] - E[:-1]) / np.maximum(E[:-1], 1e-12)
    assert np.all(rise[same] <= 1e-4)
    last = lg.records[-1]
    h_q = barrier(circ_domain, last.targets)
    assert np.all(last.dist < 2 * sim.grid.spacing / h_q)
