import numpy as np
import pytest

from annulus_coverage.density import DensityField
from annulus_coverage.geometry import case_study_domain, circular_domain
from annulus_coverage.grid import build_grid


@pytest.fixture(scope="session")
def cs_domain():
    return case_study_domain()


@pytest.fixture(scope="session")
def circ_domain():
    return circular_domain(0.5, 1.0)


@pytest.fixture(scope="session")
def cs_grid(cs_domain):
    return build_grid(cs_domain, 0.02)


@pytest.fixture(scope="session")
def circ_grid(circ_domain):
    return build_grid(circ_domain, 0.02)


@pytest.fixture(scope="session")
def cs_rho():
    return DensityField("case-study")


@pytest.fixture(scope="session")
def uniform():
    return DensityField("uniform", value=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _run_bundled(name, **changes):
    import dataclasses
    import time

    from annulus_coverage.scenario import load
    from annulus_coverage.sim import Simulation

    cfg = load(name).config
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    sim = Simulation(cfg)
    start = time.perf_counter()
    state, lg, summary = sim.run()
    return {"config": cfg, "sim": sim, "state": state, "log": lg, "summary": summary,
            "runtime": time.perf_counter() - start}


@pytest.fixture(scope="session")
def case_study_run():
    """Bundled case-study scenario (N=6, T=100 s); takes a couple of minutes."""
    return _run_bundled("case_study")


@pytest.fixture(scope="session")
def circular_runs():
    """Circular-uniform scenario at its own bar gain and at twice that gain."""
    base = _run_bundled("circular_uniform")
    k = base["config"].kappa_s
    return {"base": base, "doubled": _run_bundled("circular_uniform", kappa_s=2 * k)}
