"""Coupled partition / agent simulation, diagnostics, and flux and Hessian checks."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .control import (
    AgentState,
    CoverageCostConfig,
    EUCLIDEAN,
    StaleFieldError,
    Subregion,
    TargetState,
    agent_step,
    control_input,
    descend_optimum,
    find_local_optimum,
    local_cost,
    subregion,
    target_field,
)
from .density import DensityField
from .geometry import AnnulusDomain, barrier
from .grid import MetricGrid, build_grid
from .metric import GeodesicField
from .partition import (
    PartitionState,
    SubregionDecomposition,
    WorkloadVector,
    bar_flux,
    bar_from_line,
    decompose,
    density_on_grid,
    make_partition,
    min_gap,
    partition_step,
    workload,
)

log = logging.getLogger(__name__)


class InsufficientDecayError(ValueError):
    """The imbalance never fell below half of its initial value."""


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    domain: AnnulusDomain
    density: DensityField
    n_agents: int = 6
    dt: float = 0.02
    T: float = 100.0
    kappa_s: float = 0.02
    kappa_p: float = 0.1
    spacing: float = 0.02
    seed: int = 0
    cost: CoverageCostConfig = field(default_factory=CoverageCostConfig)
    gradient: str = "natural"
    init_bars: np.ndarray | None = None
    init_agents: np.ndarray | None = None
    early_stop: bool = False
    stop_imbalance: float = 1e-3
    stop_distance: float = 0.05
    stop_window: int = 100
    freeze_partition: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.T < self.dt:
            raise ValueError("need dt > 0 and T >= dt")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.kappa_s <= 0 or self.kappa_p <= 0:
            raise ValueError("gains must be positive")
        if self.gradient not in ("natural", "euclidean"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class SimState:
    time: float
    step: int
    agents: list[AgentState]
    partition: PartitionState
    decomposition: SubregionDecomposition | None = None
    workloads: WorkloadVector | None = None
    targets: list[TargetState] = field(default_factory=list)
    fields: list[GeodesicField] = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.agents])


@dataclass
class LogRecord:
    t: float
    V: float
    max_gap: float
    imbalance: float
    m: np.ndarray
    l: np.ndarray
    E: np.ndarray
    dist: np.ndarray
    h: np.ndarray
    positions: np.ndarray
    targets: np.ndarray
    partition_guard: int
    agent_guard: int
    fallback: int

    @property
    def min_h(self) -> float:
        return float(self.h.min())


@dataclass
class DiagnosticsLog:
    records: list[LogRecord] = field(default_factory=list)
    fit: tuple[float, float, float] | None = None

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.t <= self.records[-1].t:
            raise SimulationError("log timestamps must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")


@dataclass
class SimSummary:
    final_imbalance: float
    final_distances: list[float]
    imbalance_time: float | None
    arrival_time: float | None
    fit: dict | None
    guards: dict
    steps: int
    time: float
    min_h: float
    h_max: float

    def as_dict(self) -> dict:
        return {
            "final_relative_imbalance": self.final_imbalance,
            "final_target_distances": self.final_distances,
            "imbalance_below_5pct_time": self.imbalance_time,
            "arrival_time": self.arrival_time,
            "exponential_fit": self.fit,
            "guards": self.guards,
            "steps": self.steps,
            "final_time": self.time,
            "min_h": self.min_h,
            "h_max": self.h_max,
        }


def _mask_key(mask: np.ndarray) -> bytes:
    return hashlib.blake2b(np.packbits(mask).tobytes(), digest_size=16).digest()


def random_bars(domain: AnnulusDomain, n: int, spacing: float, rng: np.random.Generator,
                gap: float | None = None) -> np.ndarray:
    """Sorted uniform arc lengths, resampled until every gap is at least ``gap``.

    ``gap`` defaults to the anti-crossing minimum.
    """
    eps = min_gap(domain, n, spacing) if gap is None else max(gap, min_gap(domain, n, spacing))
    for _ in range(10_000):
        l = np.sort(rng.uniform(0.0, domain.perimeter, n))
        gaps = np.diff(np.concatenate([l, [l[0] + domain.perimeter]]))
        if n == 1 or gaps.min() >= eps:
            return l
    raise SimulationError("could not place bars with the minimum gap")


def random_agents(grid: MetricGrid, labels: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform rejection sample per subregion with ``h >= h_interior``."""
    xmin, xmax, ymin, ymax = grid.domain.bounding_box()
    out = np.zeros((n, 2))
    for i in range(n):
        for _ in range(100_000):
            q = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
            if barrier(grid.domain, q) < grid.h_interior:
                continue
            iy, ix = grid.nearest_index(q)
            if labels[iy, ix] == i and grid.passable[iy, ix]:
                out[i] = q
                break
        else:
            raise SimulationError(f"could not sample an agent in subregion {i}")
    return out


class Simulation:
    """Holds the grid, density and caches for one run; ``step`` advances it."""

    def __init__(self, config: SimConfig, grid: MetricGrid | None = None):
        self.config = config
        self.grid = grid if grid is not None else build_grid(config.domain, config.spacing)
        self.rho_grid = density_on_grid(self.grid, config.density)
        self.h_max = self.grid.h_max
        rng = np.random.default_rng(config.seed)
        n = config.n_agents
        if config.init_bars is not None:
            l0 = np.asarray(config.init_bars, dtype=float)
            if l0.size != n:
                raise ValueError("need one initial bar per agent")
        else:
            l0 = random_bars(config.domain, n, config.spacing, rng)
        partition = make_partition(config.domain, l0, config.spacing)
        decomp = decompose(self.grid, partition)
        if config.init_agents is not None:
            p0 = np.asarray(config.init_agents, dtype=float).reshape(n, 2)
        else:
            p0 = random_agents(self.grid, decomp.labels, n, rng)
        if np.any(barrier(config.domain, p0) <= 0):
            raise ValueError("initial agents must lie strictly inside the domain")
        self.state = SimState(0.0, 0, [AgentState(i, p0[i].copy()) for i in range(n)], partition, decomp)
        self.log = DiagnosticsLog()
        self.partition_guard = 0
        self.agent_guard = 0
        self.fallbacks = 0
        self._target_cache: dict = {}
        self._field_cache: dict = {}
        self._whole_cache: dict = {}
        self._converged_steps = 0
        self._subs: list[Subregion] = []

    # -- phases

    def _refresh_targets(self, decomp: SubregionDecomposition, step: int) -> None:
        cfg = self.config
        targets, fields, subs = [], [], []
        for i in range(cfg.n_agents):
            sub = subregion(decomp.labels, i, self.rho_grid, self.grid)
            key = _mask_key(sub.mask)
            tgt = self._target_cache.get((i, key))
            if tgt is None:
                prev = self.state.targets[i] if self.state.targets else None
                if prev is None:
                    tgt = find_local_optimum(sub, self.grid, cfg.cost)
                else:
                    tgt = descend_optimum(sub, self.grid, prev.node, cfg.cost)
                self._target_cache[(i, key)] = tgt
            fkey = (i, key, tgt.node)
            fld = self._field_cache.get(fkey)
            if fld is None:
                fld = target_field(self.grid, tgt, sub.mask, step)
                self._field_cache[fkey] = fld
            fld.stamp = step
            targets.append(tgt)
            fields.append(fld)
            subs.append(sub)
        # keep caches bounded to the current decomposition
        live = {(i, _mask_key(s.mask)) for i, s in enumerate(subs)}
        self._target_cache = {k: v for k, v in self._target_cache.items() if k in live}
        self._field_cache = {k: v for k, v in self._field_cache.items() if k[:2] in live}
        self.state.targets = targets
        self.state.fields = fields
        self._subs = subs

    def _field_for(self, i: int, p) -> GeodesicField:
        """Subregion field, or the whole-domain one when a bar has swept past the agent."""
        fld = self.state.fields[i]
        if math.isfinite(fld.at(p)):
            return fld
        node = self.state.targets[i].node
        whole = self._whole_cache.get(node)
        if whole is None:
            whole = target_field(self.grid, self.state.targets[i], None, fld.stamp)
            self._whole_cache = {node: whole}
        whole.stamp = fld.stamp
        return whole

    def _record(self, decomp, w: WorkloadVector, part_guard: int, agent_guard: int) -> LogRecord:
        st = self.state
        pos = st.positions
        dist = np.array([self._field_for(i, p).endpoint(p) for i, p in enumerate(pos)])
        return LogRecord(
            t=st.time,
            V=w.lyapunov(),
            max_gap=w.max_neighbor_gap(),
            imbalance=w.relative_imbalance(),
            m=w.m.copy(),
            l=st.partition.l.copy(),
            E=0.5 * dist**2,
            dist=dist,
            h=barrier(self.config.domain, pos),
            positions=pos.copy(),
            targets=np.array([t.point for t in st.targets]),
            partition_guard=part_guard,
            agent_guard=agent_guard,
            fallback=self.fallbacks,
        )

    def step(self) -> LogRecord:
        """decompose -> workloads -> partition step -> targets (if due) -> control -> agent step."""
        cfg = self.config
        st = self.state
        try:
            decomp = decompose(self.grid, st.partition)
            w = workload(decomp, self.rho_grid, self.grid)
            st.decomposition, st.workloads = decomp, w
            if cfg.freeze_partition:
                new_part, clipped = st.partition, 0
            else:
                new_part, clipped = partition_step(st.partition, w, cfg.kappa_s, cfg.dt, cfg.domain, cfg.spacing)
            if st.step % cfg.cost.period == 0 or not st.targets:
                self._refresh_targets(decomp, st.step)
            rec = self._record(decomp, w, clipped, 0)
            fired = 0
            for i, agent in enumerate(st.agents):
                fld = self._field_for(i, agent.position)
                if fld is not st.fields[i]:
                    self.fallbacks += 1
                u = control_input(agent.position, st.targets[i], fld, self.grid, cfg.kappa_p,
                                  cfg.gradient, st.step, cfg.cost.period)
                agent.position, hit = agent_step(agent.position, u, cfg.dt, cfg.domain)
                agent.u = u
                fired += hit
        except (StaleFieldError, ValueError, RuntimeError) as exc:
            raise SimulationError(f"step {st.step} (t={st.time:.4f}): {exc}") from exc
        rec.agent_guard = fired
        self.partition_guard += clipped
        self.agent_guard += fired
        st.partition = new_part
        st.step += 1
        st.time = st.step * cfg.dt
        self.log.append(rec)
        return rec

    def final_record(self) -> LogRecord:
        st = self.state
        decomp = decompose(self.grid, st.partition)
        w = workload(decomp, self.rho_grid, self.grid)
        st.decomposition, st.workloads = decomp, w
        rec = self._record(decomp, w, 0, 0)
        self.log.append(rec)
        return rec

    def converged(self, rec: LogRecord) -> bool:
        cfg = self.config
        ok = rec.imbalance <= cfg.stop_imbalance and float(rec.dist.max()) <= cfg.stop_distance
        self._converged_steps = self._converged_steps + 1 if ok else 0
        return self._converged_steps >= cfg.stop_window

    def run(self) -> tuple[SimState, DiagnosticsLog, SimSummary]:
        for _ in range(self.config.n_steps):
            rec = self.step()
            if self.config.early_stop and self.converged(rec):
                log.info("early stop at t=%.3f", self.state.time)
                break
        self.final_record()
        return self.state, self.log, self.summary()

    def summary(self) -> SimSummary:
        lg = self.log
        last = lg.records[-1]
        t = lg.t
        imb = lg.column("imbalance")
        dmax = np.array([r.dist.max() for r in lg.records])
        try:
            c1, c2, r2 = fit_exponential(lg)
            fit = {"c1": c1, "c2": c2, "r2": r2}
            lg.fit = (c1, c2, r2)
        except (InsufficientDecayError, ValueError) as exc:
            fit = {"error": str(exc)}
        return SimSummary(
            final_imbalance=float(last.imbalance),
            final_distances=[float(x) for x in last.dist],
            imbalance_time=_settle_time(t, imb <= 0.05),
            arrival_time=_settle_time(t, dmax <= self.config.stop_distance),
            fit=fit,
            guards={
                "partition_clips": int(self.partition_guard),
                "agent_backtracks": int(self.agent_guard),
                "agent_steps": int(self.state.step * self.config.n_agents),
                "outside_subregion_steps": int(self.fallbacks),
            },
            steps=int(self.state.step),
            time=float(self.state.time),
            min_h=float(min(r.min_h for r in lg.records)),
            h_max=self.h_max,
        )


def _settle_time(t: np.ndarray, ok: np.ndarray) -> float | None:
    """First time after which ``ok`` holds for the rest of the log."""
    if not ok[-1]:
        return None
    bad = np.nonzero(~ok)[0]
    return float(t[0] if bad.size == 0 else t[bad[-1] + 1])


def run(config: SimConfig) -> tuple[SimState, DiagnosticsLog, SimSummary]:
    return Simulation(config).run()


# ---------------------------------------------------------------- diagnostics


def fit_exponential(log_or_t, y=None) -> tuple[float, float, float]:
    """Least-squares ``ln y = ln c1 - c2 t`` for the neighbour imbalance.

    The fit window runs from the start until the imbalance first drops below
    1e-3 of its initial value.
    """
    if y is None:
        t = log_or_t.t
        y = log_or_t.column("max_gap")
    else:
        t = np.asarray(log_or_t, dtype=float)
        y = np.asarray(y, dtype=float)
    pos = y > 0
    if pos.sum() < 50:
        raise ValueError("need at least 50 records with positive imbalance")
    y0 = y[0]
    if not np.any(y < 0.5 * y0):
        raise InsufficientDecayError("imbalance never dropped below half its initial value")
    below = np.nonzero(y < 1e-3 * y0)[0]
    end = below[0] if below.size else y.size
    t, y = t[:end], y[:end]
    keep = y > 0
    t, ly = t[keep], np.log(y[keep])
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(intercept)), float(-slope), float(r2)


def lyapunov_steps(log: DiagnosticsLog) -> np.ndarray:
    """Per-step increments of ``V``."""
    return np.diff(log.column("V"))


def lyapunov_envelope_rate(log: DiagnosticsLog) -> float:
    """Largest ``b`` with ``ln V(t) <= ln V(0) - b t`` over the decay window (> 0 when the bound exists)."""
    t = log.t
    V = log.column("V")
    below = np.nonzero(V < 1e-6 * V[0])[0]
    end = below[0] if below.size else V.size
    t, V = t[1:end], V[1:end]
    V = np.maximum(V, 1e-300)
    return float(np.min((math.log(log.records[0].V) - np.log(V)) / (t - log.records[0].t)))


def convergence_report(log: DiagnosticsLog, config: SimConfig) -> dict:
    """Tail statistics over the final 10% of a run."""
    recs = log.records
    n = len(recs)
    k0 = int(0.9 * (n - 1))
    tail = recs[k0:]
    P = config.domain.perimeter
    disp = np.abs(np.angle(np.exp(2j * np.pi * (tail[-1].l - tail[0].l) / P))) * P / (2 * np.pi)
    period = config.cost.period
    tg = np.array([r.targets for r in tail])
    drift = np.linalg.norm(tg[period::period] - tg[:-period:period], axis=-1) if len(tail) > period else np.zeros((1, 1))
    E = np.array([r.E for r in tail])
    E0 = recs[0].E
    return {
        "bar_displacement": float(disp.sum()),
        "max_target_drift": float(drift.max()) if drift.size else 0.0,
        "energy_spread": (np.max(np.abs(E - E[-1]), axis=0) / np.maximum(E0, 1e-300)).tolist(),
    }


def check_lemma1(grid: MetricGrid, partition: PartitionState, rho: DensityField,
                 delta: float | None = None) -> dict:
    """Bar flux against central differences of the adjacent workloads.

    Each bar is translated by ``+-delta`` along its tangent with its
    orientation held fixed, which is the partial derivative of ``m_i`` with
    respect to the footpoint along the tangent.
    """
    delta = grid.spacing if delta is None else delta
    domain = grid.domain
    rho_grid = density_on_grid(grid, rho)
    rows = []
    for i, bar in enumerate(partition.bars):
        flux = bar_flux(bar, rho, grid.spacing)
        ms = []
        for sgn in (1.0, -1.0):
            origin = bar.origin + sgn * delta * bar.frame.tangent
            moved = bar_from_line(domain, origin, bar.direction, grid.spacing, bar.l, bar.frame)
            bars = list(partition.bars)
            bars[i] = moved
            l = partition.l.copy()
            l[i] = float(domain.arclength_at(domain.polar(moved.start)[1]))
            shifted = PartitionState(l, bars, partition.perimeter)
            ms.append(workload(decompose(grid, shifted), rho_grid, grid).m)
        dm = (ms[0] - ms[1]) / (2 * delta)
        own, prev = dm[i], dm[(i - 1) % partition.n]
        rows.append({
            "bar": i,
            "flux": flux,
            "dm_own": float(own),
            "dm_prev": float(prev),
            "rel_error": abs(own - flux) / flux,
            "antisymmetry": abs(own + prev) / flux,
        })
    return {
        "bars": rows,
        "max_rel_error": max(r["rel_error"] for r in rows),
        "max_antisymmetry": max(r["antisymmetry"] for r in rows),
    }


def finite_difference_hessian(func, x, step: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = [np.array([step, 0.0]), np.array([0.0, step])]
    f0 = func(x)
    H = np.zeros((2, 2))
    for a in range(2):
        H[a, a] = (func(x + e[a]) - 2 * f0 + func(x - e[a])) / step**2
    # mixed partials via the two orders of nesting
    H[0, 1] = ((func(x + e[0] + e[1]) - func(x + e[0] - e[1])) - (func(x - e[0] + e[1]) - func(x - e[0] - e[1]))) / (4 * step**2)
    H[1, 0] = ((func(x + e[1] + e[0]) - func(x + e[1] - e[0])) - (func(x - e[1] + e[0]) - func(x - e[1] - e[0]))) / (4 * step**2)
    return H


def _stencil_fits(grid: MetricGrid, sub: Subregion, x, step: float) -> bool:
    for dx in (-step, 0.0, step):
        for dy in (-step, 0.0, step):
            q = x + np.array([dx, dy])
            iy, ix = grid.nearest_index(q)
            if not sub.mask[iy, ix] or barrier(grid.domain, q) <= 0:
                return False
    return True


def check_hessian(grid: MetricGrid, subs: list[Subregion], targets: list[TargetState],
                  cfg: CoverageCostConfig = CoverageCostConfig(), step: float | None = None) -> dict:
    """Finite-difference Hessians of ``J_i`` at each target.

    Targets whose stencil leaves the subregion sit against a bar, where the
    minimum is a constrained one; they are reported as skipped.
    """
    step = 2.0 * grid.spacing if step is None else step
    rows = []
    for sub, tgt in zip(subs, targets):
        def J(p, sub=sub):
            return local_cost(p, sub, grid, cfg)

        if not _stencil_fits(grid, sub, tgt.point, step):
            rows.append({"subregion": sub.index, "skipped": True, "mass": float(sub.weights.sum())})
            continue
        H = finite_difference_hessian(J, tgt.point, step)
        sym = 0.5 * (H + H.T)
        eig = np.linalg.eigvalsh(sym)
        rows.append({
            "subregion": sub.index,
            "skipped": False,
            "hessian": H.tolist(),
            "eigenvalues": eig.tolist(),
            "min_eigenvalue": float(eig[0]),
            "asymmetry": float(abs(H[0, 1] - H[1, 0]) / np.linalg.norm(H)),
            "mass": float(sub.weights.sum()),
        })
    done = [r for r in rows if not r["skipped"]]
    min_eig = min((r["min_eigenvalue"] for r in done), default=float("nan"))
    if cfg.f != EUCLIDEAN and (not done or min_eig <= 0):
        log.warning("cost Hessian not positive definite at some target")
    return {"subregions": rows, "min_eigenvalue": min_eig, "skipped": len(rows) - len(done)}
