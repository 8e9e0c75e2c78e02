"""Scenario files: schema-checked YAML that maps onto :class:`SimConfig`."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .control import CoverageCostConfig
from .density import DensityField
from .geometry import AnnulusDomain, PolarCurve
from .sim import SimConfig

SCHEMA_VERSION = 1

# nested key schema; ``None`` marks a leaf
_CURVE = {"kind": None, "radius": None, "a": None, "b": None, "r0": None, "sin": None, "cos": None}
SCHEMA = {
    "schema_version": None,
    "name": None,
    "domain": {"center": None, "inner": _CURVE, "outer": _CURVE},
    "density": {"kind": None, "value": None, "center": None, "x": None, "y": None, "values": None},
    "agents": None,
    "dt": None,
    "T": None,
    "seed": None,
    "gains": {"kappa_s": None, "kappa_p": None},
    "grid": {"spacing": None},
    "cost": {"f": None, "stride": None, "refine_radius": None, "period": None},
    "gradient": None,
    "initial": {"bars": None, "agents": None},
    "early_stop": None,
    "output": {"dir": None, "log_every": None, "snapshots": None},
}
REQUIRED = ("schema_version", "domain", "density", "agents", "dt", "T")


class ScenarioError(ValueError):
    """Malformed scenario; the message names the key and, when known, its line."""


@dataclass
class Scenario:
    name: str
    config: SimConfig
    raw: dict
    out_dir: Path
    log_every: int = 10
    snapshots: list[float] = field(default_factory=list)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``case_study``, ``circular_uniform``)."""
    ref = resources.files("annulus_coverage") / "scenarios" / f"{name}.yaml"
    return Path(str(ref))


def resolve_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    b = bundled(arg)
    if b.exists():
        return b
    raise ScenarioError(f"scenario file not found: {arg}")


def _check_keys(node, schema, path: str) -> None:
    if schema is None:
        return
    if not isinstance(node, yaml.MappingNode):
        raise ScenarioError(f"'{path or '<root>'}' (line {node.start_mark.line + 1}) must be a mapping")
    for key_node, value_node in node.value:
        key = key_node.value
        full = f"{path}.{key}" if path else key
        if key not in schema:
            raise ScenarioError(f"unknown key '{full}' (line {key_node.start_mark.line + 1})")
        _check_keys(value_node, schema[key], full)


def _line_of(node, key: str) -> str:
    for k, _ in node.value:
        if k.value == key:
            return f" (line {k.start_mark.line + 1})"
    return ""


def _curve(spec: dict, center, where: str) -> PolarCurve:
    kind = spec.get("kind")
    try:
        if kind == "circle":
            return PolarCurve.circle(float(spec["radius"]), center)
        if kind == "inverse-ellipse":
            return PolarCurve.inverse_ellipse(float(spec["a"]), float(spec["b"]), center)
        if kind == "fourier":
            return PolarCurve.fourier(float(spec["r0"]), spec.get("sin", []), spec.get("cos", []), center)
    except KeyError as exc:
        raise ScenarioError(f"missing key '{where}.{exc.args[0]}'") from None
    raise ScenarioError(f"'{where}.kind' must be circle, inverse-ellipse or fourier (got {kind!r})")


def _density(spec: dict) -> DensityField:
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return DensityField("uniform", value=float(spec.get("value", 1.0)))
    if kind == "case-study":
        return DensityField("case-study", center=tuple(spec.get("center", (0.0, 0.0))))
    if kind == "tabulated":
        try:
            return DensityField("tabulated", table_x=np.asarray(spec["x"], float), table_y=np.asarray(spec["y"], float),
                                table_values=np.asarray(spec["values"], float))
        except KeyError as exc:
            raise ScenarioError(f"missing key 'density.{exc.args[0]}'") from None
    raise ScenarioError(f"'density.kind' must be uniform, case-study or tabulated (got {kind!r})")


def parse(text: str, overrides: dict | None = None, source: str = "<scenario>") -> Scenario:
    """Validate scenario text and build the simulation config.

    ``overrides`` may set ``seed``, ``dt``, ``T`` or ``out``.
    """
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML: {exc}") from None
    if root is None:
        raise ScenarioError(f"{source}: empty scenario")
    _check_keys(root, SCHEMA, "")
    for key in REQUIRED:
        if key not in raw:
            raise ScenarioError(f"missing required key '{key}'")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(
            f"unsupported schema_version {raw['schema_version']!r}{_line_of(root, 'schema_version')}; expected {SCHEMA_VERSION}"
        )
    overrides = overrides or {}
    dom = raw["domain"]
    for key in ("inner", "outer"):
        if key not in dom:
            raise ScenarioError(f"missing required key 'domain.{key}'")
    center = tuple(float(c) for c in dom.get("center", (0.0, 0.0)))
    domain = AnnulusDomain(_curve(dom["inner"], center, "domain.inner"), _curve(dom["outer"], center, "domain.outer"))
    density = _density(raw["density"] or {})
    gains = raw.get("gains", {}) or {}
    cost = raw.get("cost", {}) or {}
    init = raw.get("initial", {}) or {}
    n = int(raw["agents"])

    def initial(key, shape):
        val = init.get(key, "random")
        if val == "random" or val is None:
            return None
        arr = np.asarray(val, dtype=float)
        if arr.shape != shape:
            raise ScenarioError(f"'initial.{key}' must have shape {shape}, got {arr.shape}")
        return arr

    try:
        config = SimConfig(
            domain=domain,
            density=density,
            n_agents=n,
            dt=float(overrides.get("dt") or raw["dt"]),
            T=float(overrides.get("T") or raw["T"]),
            kappa_s=float(gains.get("kappa_s", 0.02)),
            kappa_p=float(gains.get("kappa_p", 0.1)),
            spacing=float((raw.get("grid") or {}).get("spacing", 0.02)),
            seed=int(overrides["seed"] if overrides.get("seed") is not None else raw.get("seed", 0)),
            cost=CoverageCostConfig(**{k: cost[k] for k in cost}),
            gradient=raw.get("gradient", "natural"),
            init_bars=initial("bars", (n,)),
            init_agents=initial("agents", (n, 2)),
            early_stop=bool(raw.get("early_stop", False)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"{source}: {exc}") from None
    out = raw.get("output", {}) or {}
    name = str(raw.get("name", Path(source).stem))
    out_dir = Path(overrides.get("out") or out.get("dir") or Path("out") / name)
    snaps = [float(t) for t in out.get("snapshots", []) or []]
    return Scenario(name, config, raw, out_dir, int(out.get("log_every", 10)), snaps)


def load(path, overrides: dict | None = None) -> Scenario:
    path = resolve_path(str(path))
    return parse(path.read_text(), overrides, str(path))
