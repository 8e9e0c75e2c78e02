import math

import numpy as np
import pytest

from annulus_coverage.density import DensityField
from annulus_coverage.geometry import barrier
from annulus_coverage.grid import build_grid
from annulus_coverage.oracles import monte_carlo_mass
from annulus_coverage.partition import (
    PartitionState,
    WorkloadVector,
    bar_flux,
    bar_update,
    bar_segment,
    decompose,
    density_on_grid,
    make_partition,
    min_gap,
    partition_step,
    square_fraction,
    workload,
)
from annulus_coverage.sim import check_lemma1, random_bars

# polar dblquad of the case-study density over the case-study annulus
CS_TOTAL_MASS = 13.833114253085977
QUARTER_AREA = 3 * math.pi / 16


def radial_rho():
    return DensityField("custom", func=lambda q: np.hypot(q[..., 0], q[..., 1]))


def even(domain, n, offset=0.0):
    return offset + domain.perimeter * np.arange(n) / n


# ---------------------------------------------------------------- bars


@pytest.mark.parametrize("l", [0.0, 0.4, 1.3, 2.9])
def test_circle_bar_is_radial(circ_domain, l):
    bar = bar_segment(circ_domain, l, 0.02)
    assert bar.length == pytest.approx(0.5, abs=1e-9)
    assert np.linalg.norm(bar.start) == pytest.approx(0.5, abs=1e-9)
    assert np.linalg.norm(bar.end) == pytest.approx(1.0, abs=1e-9)


def test_case_study_bar_at_zero(cs_domain):
    bar = bar_segment(cs_domain, 0.0, 0.02)
    assert np.allclose(bar.start, [0.7, 0.0], atol=1e-9)
    assert np.allclose(bar.end, [1.8, 0.0], atol=1e-8)


def test_bar_endpoints_on_boundary(cs_domain, rng):
    for l in rng.uniform(0, cs_domain.perimeter, 40):
        bar = bar_segment(cs_domain, l, 0.02)
        assert abs(barrier(cs_domain, bar.start)) < 1e-6
        assert abs(barrier(cs_domain, bar.end)) < 1e-6
        mid = 0.5 * (bar.start + bar.end)
        assert barrier(cs_domain, mid) > 0


def test_flux_constant_density(circ_domain, uniform):
    assert bar_flux(bar_segment(circ_domain, 0.7, 0.02), uniform, 0.02) == pytest.approx(0.5, abs=1e-9)


def test_flux_radial_density(circ_domain):
    # integral of r over [0.5, 1]; the trapezoid rule is exact for a linear integrand
    assert bar_flux(bar_segment(circ_domain, 1.1, 0.02), radial_rho(), 0.02) == pytest.approx(0.375, abs=1e-9)


# ---------------------------------------------------------------- quadrature


def test_square_fraction_exact():
    # axis-aligned cut through the center halves the square
    assert square_fraction(0.0, 1.0, 0.0, 1.0) == pytest.approx(0.5)
    assert square_fraction(0.25, 1.0, 0.0, 1.0) == pytest.approx(0.75)
    assert square_fraction(-0.25, 0.0, 1.0, 1.0) == pytest.approx(0.25)
    # a diagonal line through a corner region cuts a triangle of area t^2/2
    s = 1 / math.sqrt(2)
    corner = math.sqrt(2) / 2
    t = 0.3
    assert square_fraction(-(corner - t * s), s, s, 1.0) == pytest.approx(t * t / 2, rel=1e-12)
    assert square_fraction(2.0, s, s, 1.0) == pytest.approx(1.0)


def test_square_fraction_vs_sampling(rng):
    g = (np.arange(400) + 0.5) / 400 - 0.5
    X, Y = np.meshgrid(g, g)
    for _ in range(20):
        ang = rng.uniform(0, 2 * np.pi)
        nx, ny = math.cos(ang), math.sin(ang)
        sd = rng.uniform(-0.7, 0.7)
        est = np.mean(X * nx + Y * ny + sd > 0)
        assert square_fraction(sd, nx, ny, 1.0) == pytest.approx(est, abs=5e-3)


def test_grid_area_circle(circ_domain):
    grid = build_grid(circ_domain, 0.01)
    assert grid.inside.sum() * grid.cell_area == pytest.approx(0.75 * math.pi, rel=0.01)
    assert np.all(grid.h[grid.inside] > 0)


def test_four_even_subregions(circ_grid, circ_domain, uniform):
    part = make_partition(circ_domain, even(circ_domain, 4, 0.05), 0.02)
    dec = decompose(circ_grid, part)
    m = workload(dec, uniform, circ_grid).m
    assert np.allclose(m, QUARTER_AREA, rtol=0.01)
    counts = np.array([(dec.labels == i).sum() for i in range(4)])
    assert counts.max() / counts.min() - 1 < 0.01


def test_labels_partition_the_domain(cs_grid, cs_domain, rng):
    part = make_partition(cs_domain, random_bars(cs_domain, 6, 0.02, rng), 0.02)
    dec = decompose(cs_grid, part)
    overlap = cs_grid.fill > 0
    assert np.all(dec.labels[overlap] >= 0)
    assert np.all(dec.labels[~overlap] == -1)
    w = dec.cell_weights(cs_grid.fill)
    assert np.allclose(w.sum(axis=0), cs_grid.fill, atol=1e-12)


def test_single_subregion(cs_grid, cs_domain, cs_rho):
    part = make_partition(cs_domain, [0.3], 0.02)
    dec = decompose(cs_grid, part)
    assert set(np.unique(dec.labels[cs_grid.fill > 0])) == {0}
    w = workload(dec, cs_rho, cs_grid)
    assert w.total == pytest.approx(CS_TOTAL_MASS, rel=0.01)


def test_total_mass_vs_integrals(cs_grid, cs_domain, cs_rho, rng):
    part = make_partition(cs_domain, random_bars(cs_domain, 6, 0.02, rng), 0.02)
    total = workload(decompose(cs_grid, part), cs_rho, cs_grid).total
    assert total == pytest.approx(CS_TOTAL_MASS, rel=2e-3)
    mc = monte_carlo_mass(cs_domain, cs_rho, 1_000_000, seed=3)
    assert total == pytest.approx(mc, rel=0.01)


def test_density_doubling_is_linear(cs_grid, cs_domain, cs_rho, rng):
    part = make_partition(cs_domain, random_bars(cs_domain, 5, 0.02, rng), 0.02)
    dec = decompose(cs_grid, part)
    a = workload(dec, cs_rho, cs_grid).m
    b = workload(dec, cs_rho.scaled(2.0), cs_grid).m
    assert np.array_equal(b, 2 * a)


# ---------------------------------------------------------------- flux identity


@pytest.mark.parametrize("which", ["circle", "case"])
def test_flux_matches_workload_derivative(which, circ_grid, cs_grid, uniform, cs_rho):
    grid, rho = (circ_grid, uniform) if which == "circle" else (cs_grid, cs_rho)
    rng = np.random.default_rng(7)
    dom = grid.domain
    for _ in range(3):
        l = random_bars(dom, 5, 0.02, rng, gap=0.25 * dom.perimeter / 5)
        rep = check_lemma1(grid, make_partition(dom, l, 0.02), rho)
        assert rep["max_rel_error"] < 0.02
        assert rep["max_antisymmetry"] < 1e-6


# ---------------------------------------------------------------- dynamics


def test_equal_workloads_fixed_point(circ_domain):
    part = make_partition(circ_domain, even(circ_domain, 4), 0.02)
    new, clipped = partition_step(part, WorkloadVector(np.full(4, 0.6)), 0.5, 0.02, circ_domain, 0.02)
    assert np.array_equal(new.l, part.l) and clipped == 0


def test_two_bar_sign(circ_domain):
    part = make_partition(circ_domain, [0.2, 1.8], 0.02)
    new, _ = partition_step(part, WorkloadVector(np.array([1.0, 0.5])), 0.1, 0.02, circ_domain, 0.02)
    # the heavier subregion [l0, l1] shrinks from both ends
    assert new.l[0] > part.l[0]
    assert new.l[1] < part.l[1]
    assert new.gaps()[0] < part.gaps()[0]


def test_single_bar_never_moves(circ_domain):
    part = make_partition(circ_domain, [0.4], 0.02)
    new, clipped = partition_step(part, WorkloadVector(np.array([0.7])), 10.0, 0.02, circ_domain, 0.02)
    assert new.l[0] == part.l[0] and clipped == 0


def test_ordering_survives_random_steps(circ_domain):
    rng = np.random.default_rng(99)
    n = 5
    state = make_partition(circ_domain, even(circ_domain, n), 0.02)
    eps = min_gap(circ_domain, n, 0.02)
    guarded = 0
    for _ in range(10_000):
        m = rng.uniform(0, 5, n)
        gaps = state.gaps()
        new_l = np.empty(n)
        for i in range(n):
            new_l[i], hit = bar_update(state.l[i], m[i - 1], m[i], gaps[i - 1], gaps[i], 1.0, 0.5, eps)
            guarded += hit
        state = PartitionState(np.mod(new_l, state.perimeter), state.bars, state.perimeter)
        assert state.gaps().min() >= eps - 1e-12
    assert guarded > 0


def test_lyapunov_decreases_with_frozen_agents(cs_grid, cs_domain, cs_rho):
    rng = np.random.default_rng(2)
    rho_grid = density_on_grid(cs_grid, cs_rho)
    state = make_partition(cs_domain, random_bars(cs_domain, 6, 0.02, rng), 0.02)
    w = workload(decompose(cs_grid, state), rho_grid, cs_grid)
    v0, total0 = w.lyapunov(), w.total
    v_prev = v0
    for _ in range(60):
        state, _ = partition_step(state, w, 0.02, 0.02, cs_domain, 0.02)
        w = workload(decompose(cs_grid, state), rho_grid, cs_grid)
        assert w.lyapunov() <= v_prev + 1e-6 * v0
        assert w.total == pytest.approx(total0, rel=1e-6)
        v_prev = w.lyapunov()
    assert v_prev < v0
