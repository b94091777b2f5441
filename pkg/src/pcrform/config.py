"""Scenario configuration: a versioned YAML schema with strict validation.

Every section is optional except ``seed``; omitted values take the documented
defaults. Unknown keys are rejected so typos cannot silently fall back to a
default. ``ScenarioConfig.from_dict(cfg.to_dict()) == cfg`` holds for every
valid configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .optimizer import DynamicLimits, LbfgsSettings, PlannerWeights
from .robust import RansacConfig
from .shapes import GENERATORS, ShapeSpec
from .sim import Box, ObstacleField, OutlierPolicy, SimSettings, Sphere
from .sim.agents import BEHAVIORS

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SwarmConfig:
    shape: str = "cube_grid"
    count: int = 20
    shape_params: dict = field(default_factory=dict)
    shape_seed: int = 0
    start_offset: tuple = (0.0, 0.0, 0.0)
    start_noise: float = 0.2
    goal_offset: tuple = (20.0, 0.0, 0.0)

    def shape_spec(self) -> ShapeSpec:
        return ShapeSpec(self.shape, self.count, dict(self.shape_params), self.shape_seed)


@dataclass(frozen=True)
class OutlierConfig:
    """Either explicit ``ids`` or a ``fraction`` of the swarm (rounded down)."""

    fraction: float = 0.0
    ids: tuple = ()
    behavior: str = "random_walk"
    onset: float = 0.0
    sigma: float = 0.5
    velocity: tuple = (0.5, 0.0, 0.0)


@dataclass(frozen=True)
class PillarField:
    """Seeded square pillars (side ``2 * radius``, z from -4 to 4 m) inside the ranges."""

    count: int = 0
    x_range: tuple = (4.0, 16.0)
    y_range: tuple = (-4.0, 4.0)
    radius: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    obstacles: ObstacleField = field(default_factory=ObstacleField)
    pillars: PillarField = field(default_factory=PillarField)
    outliers: OutlierConfig = field(default_factory=OutlierConfig)
    comm_lost: tuple = ()
    name: str = "scenario"
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        # the top-level seed drives every random stream of the run
        if self.sim.seed != self.seed or self.sim.ransac.rng_seed != self.seed:
            ransac = dataclasses.replace(self.sim.ransac, rng_seed=self.seed)
            object.__setattr__(self, "sim", dataclasses.replace(self.sim, seed=self.seed, ransac=ransac))

    # -- parsing -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a mapping")
        _reject_unknown(data, {f.name for f in dataclasses.fields(cls)} | {"planner", "ransac"}, "")
        version = data.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("version", f"unsupported schema version {version!r}")
        if "seed" not in data:
            raise ConfigError("seed", "a seed is required for reproducibility")
        seed = _int(data["seed"], "seed", lo=0)
        swarm = _swarm(data.get("swarm", {}))
        sim = _sim(data.get("sim", {}), data.get("planner", None), data.get("ransac", None), seed)
        return cls(
            seed=seed,
            swarm=swarm,
            sim=sim,
            obstacles=_obstacles(data.get("obstacles", {})),
            pillars=_pillars(data.get("pillars", {})),
            outliers=_outliers(data.get("outliers", {}), swarm.count),
            comm_lost=tuple(_int(i, "comm_lost", lo=0) for i in _list(data.get("comm_lost", []), "comm_lost")),
            name=str(data.get("name", "scenario")),
            version=version,
        )

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
        return cls.from_dict(data if data is not None else {})

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        s = self.sim
        sw = self.swarm
        o = self.outliers
        p = self.pillars
        return {
            "version": self.version,
            "name": self.name,
            "seed": self.seed,
            "swarm": {
                "shape": sw.shape,
                "count": sw.count,
                "shape_params": dict(sw.shape_params),
                "shape_seed": sw.shape_seed,
                "start_offset": list(sw.start_offset),
                "start_noise": sw.start_noise,
                "goal_offset": list(sw.goal_offset),
            },
            "sim": {
                "dt": s.dt,
                "duration": s.duration,
                "replan_period": s.replan_period,
                "latency": s.latency,
                "metrics_period": s.metrics_period,
                "horizon": s.horizon,
                "pieces": s.pieces,
                "ofps_frames": s.ofps_frames,
                "kappa": s.kappa,
                "cruise_speed": s.cruise_speed,
                "record_timing": s.record_timing,
            },
            "planner": {
                "weights": {
                    k: getattr(s.weights, k)
                    for k in ("formation", "effort", "time", "collision", "swarm", "dynamics", "rho")
                },
                "v_max": s.limits.v_max,
                "a_max": s.limits.a_max,
                "obstacle_clearance": s.obstacle_clearance,
                "swarm_clearance": s.swarm_clearance,
                "max_iterations": s.lbfgs.max_iterations,
            },
            "ransac": {
                "inlier_threshold": s.ransac.inlier_threshold,
                "confidence": s.ransac.confidence,
                "max_iterations": s.ransac.max_iterations,
                "min_sample_size": s.ransac.min_sample_size,
            },
            "obstacles": self.obstacles.to_dict(),
            "pillars": {
                "count": p.count,
                "x_range": list(p.x_range),
                "y_range": list(p.y_range),
                "radius": p.radius,
                "seed": p.seed,
            },
            "outliers": {
                "fraction": o.fraction,
                "ids": list(o.ids),
                "behavior": o.behavior,
                "onset": o.onset,
                "sigma": o.sigma,
                "velocity": list(o.velocity),
            },
            "comm_lost": list(self.comm_lost),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def dump(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Copy with top-level fields replaced; ``seed`` also reseeds the simulation."""
        return dataclasses.replace(self, **changes)

    # -- derived -------------------------------------------------------------

    def outlier_policy(self, ids) -> Optional[OutlierPolicy]:
        """Resolve the configured outliers against the swarm ids."""
        o = self.outliers
        if o.ids:
            chosen = o.ids
        elif o.fraction > 0:
            k = int(np.floor(o.fraction * len(ids) + 1e-9))
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 11]))
            chosen = tuple(sorted(int(i) for i in rng.choice(sorted(ids), size=k, replace=False)))
        else:
            return None
        return OutlierPolicy(chosen, o.behavior, o.onset, o.sigma, tuple(o.velocity))

    def obstacle_field(self) -> Optional[ObstacleField]:
        boxes = list(self.obstacles.boxes)
        p = self.pillars
        if p.count:
            rng = np.random.default_rng(np.random.SeedSequence([p.seed, 13]))
            xs = rng.uniform(*p.x_range, size=p.count)
            ys = rng.uniform(*p.y_range, size=p.count)
            for x, y in zip(xs, ys):
                r = p.radius
                boxes.append(Box((float(x) - r, float(y) - r, -4.0), (float(x) + r, float(y) + r, 4.0)))
        field_ = ObstacleField(self.obstacles.spheres, boxes)
        return field_ if len(field_) else None


# --- validation helpers -------------------------------------------------------


def _reject_unknown(data: dict, allowed: set, prefix: str) -> None:
    allowed = set(allowed)
    for k in data:
        if k not in allowed:
            raise ConfigError(f"{prefix}{k}", "unknown key")


def _section(data: Any, name: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(name, "must be a mapping")
    return data


def _list(v, key):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(key, "must be a list")
    return v


def _num(v, key, lo=None, hi=None, strict_lo=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    v = float(v)
    if lo is not None and (v < lo or (strict_lo and v <= lo)):
        raise ConfigError(key, f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(key, f"must be <= {hi}, got {v}")
    return v


def _int(v, key, lo=None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}, got {v}")
    return v


def _vec3(v, key) -> tuple:
    v = _list(v, key)
    if len(v) != 3:
        raise ConfigError(key, "must have 3 components")
    return tuple(_num(x, key) for x in v)


def _pair(v, key) -> tuple:
    v = _list(v, key)
    if len(v) != 2 or _num(v[0], key) > _num(v[1], key):
        raise ConfigError(key, "must be [low, high]")
    return (float(v[0]), float(v[1]))


def _swarm(d) -> SwarmConfig:
    d = _section(d, "swarm")
    _reject_unknown(d, {f.name for f in dataclasses.fields(SwarmConfig)}, "swarm.")
    base = SwarmConfig()
    shape = d.get("shape", base.shape)
    if shape not in GENERATORS:
        raise ConfigError("swarm.shape", f"unknown generator {shape!r}; choose from {sorted(GENERATORS)}")
    params = _section(d.get("shape_params", {}), "swarm.shape_params")
    for k, v in params.items():
        _num(v, f"swarm.shape_params.{k}", lo=0.0, strict_lo=True)
    return SwarmConfig(
        shape=shape,
        count=_int(d.get("count", base.count), "swarm.count", lo=4),
        shape_params={k: float(v) for k, v in params.items()},
        shape_seed=_int(d.get("shape_seed", base.shape_seed), "swarm.shape_seed", lo=0),
        start_offset=_vec3(d.get("start_offset", list(base.start_offset)), "swarm.start_offset"),
        start_noise=_num(d.get("start_noise", base.start_noise), "swarm.start_noise", lo=0.0),
        goal_offset=_vec3(d.get("goal_offset", list(base.goal_offset)), "swarm.goal_offset"),
    )


_SIM_KEYS = {
    "dt", "duration", "replan_period", "latency", "metrics_period", "horizon",
    "pieces", "ofps_frames", "kappa", "cruise_speed", "record_timing",
}
_PLANNER_KEYS = {"weights", "v_max", "a_max", "obstacle_clearance", "swarm_clearance", "max_iterations"}
_WEIGHT_KEYS = {"formation", "effort", "time", "collision", "swarm", "dynamics", "rho"}
_RANSAC_KEYS = {"inlier_threshold", "confidence", "max_iterations", "min_sample_size"}


def _sim(d, planner, ransac, seed: int) -> SimSettings:
    d = _section(d, "sim")
    _reject_unknown(d, _SIM_KEYS, "sim.")
    planner = _section(planner, "planner")
    _reject_unknown(planner, _PLANNER_KEYS, "planner.")
    ransac = _section(ransac, "ransac")
    _reject_unknown(ransac, _RANSAC_KEYS, "ransac.")
    base = SimSettings()
    kw = {}
    for k in ("dt", "duration", "replan_period", "metrics_period", "horizon", "cruise_speed"):
        kw[k] = _num(d.get(k, getattr(base, k)), f"sim.{k}", lo=0.0, strict_lo=True)
    kw["latency"] = _num(d.get("latency", base.latency), "sim.latency", lo=0.0)
    for k in ("pieces", "ofps_frames", "kappa"):
        kw[k] = _int(d.get(k, getattr(base, k)), f"sim.{k}", lo=1)
    rt = d.get("record_timing", base.record_timing)
    if not isinstance(rt, bool):
        raise ConfigError("sim.record_timing", "must be true or false")
    kw["record_timing"] = rt

    wd = _section(planner.get("weights", {}), "planner.weights")
    _reject_unknown(wd, _WEIGHT_KEYS, "planner.weights.")
    bw = PlannerWeights()
    weights = {
        k: _num(wd.get(k, getattr(bw, k)), f"planner.weights.{k}", lo=0.0)
        for k in _WEIGHT_KEYS - {"rho"}
    }
    rho = wd.get("rho", None)
    weights["rho"] = None if rho is None else _num(rho, "planner.weights.rho", lo=0.0)
    kw["weights"] = PlannerWeights(**weights)
    bl = DynamicLimits()
    kw["limits"] = DynamicLimits(
        _num(planner.get("v_max", bl.v_max), "planner.v_max", lo=0.0, strict_lo=True),
        _num(planner.get("a_max", bl.a_max), "planner.a_max", lo=0.0, strict_lo=True),
    )
    kw["obstacle_clearance"] = _num(
        planner.get("obstacle_clearance", base.obstacle_clearance), "planner.obstacle_clearance", lo=0.0
    )
    kw["swarm_clearance"] = _num(
        planner.get("swarm_clearance", base.swarm_clearance), "planner.swarm_clearance", lo=0.0
    )
    kw["lbfgs"] = LbfgsSettings(
        max_iterations=_int(
            planner.get("max_iterations", base.lbfgs.max_iterations), "planner.max_iterations", lo=1
        )
    )

    br = RansacConfig()
    kw["ransac"] = RansacConfig(
        inlier_threshold=_num(
            ransac.get("inlier_threshold", br.inlier_threshold), "ransac.inlier_threshold", lo=0.0, strict_lo=True
        ),
        confidence=_num(ransac.get("confidence", br.confidence), "ransac.confidence", lo=0.0, strict_lo=True, hi=0.999999),
        max_iterations=_int(ransac.get("max_iterations", br.max_iterations), "ransac.max_iterations", lo=1),
        min_sample_size=_int(ransac.get("min_sample_size", br.min_sample_size), "ransac.min_sample_size", lo=3),
        rng_seed=seed,
    )
    kw["seed"] = seed
    return SimSettings(**kw)


def _obstacles(d) -> ObstacleField:
    d = _section(d, "obstacles")
    _reject_unknown(d, {"spheres", "boxes"}, "obstacles.")
    spheres, boxes = [], []
    for k, s in enumerate(_list(d.get("spheres", []), "obstacles.spheres")):
        key = f"obstacles.spheres[{k}]"
        s = _section(s, key)
        _reject_unknown(s, {"center", "radius"}, key + ".")
        spheres.append(Sphere(_vec3(s.get("center"), key + ".center"),
                              _num(s.get("radius"), key + ".radius", lo=0.0, strict_lo=True)))
    for k, b in enumerate(_list(d.get("boxes", []), "obstacles.boxes")):
        key = f"obstacles.boxes[{k}]"
        b = _section(b, key)
        _reject_unknown(b, {"min", "max"}, key + ".")
        lo = _vec3(b.get("min"), key + ".min")
        hi = _vec3(b.get("max"), key + ".max")
        if not all(h > l for l, h in zip(lo, hi)):
            raise ConfigError(key, "max must exceed min on every axis")
        boxes.append(Box(lo, hi))
    return ObstacleField(spheres, boxes)


def _pillars(d) -> PillarField:
    d = _section(d, "pillars")
    _reject_unknown(d, {f.name for f in dataclasses.fields(PillarField)}, "pillars.")
    b = PillarField()
    return PillarField(
        count=_int(d.get("count", b.count), "pillars.count", lo=0),
        x_range=_pair(d.get("x_range", list(b.x_range)), "pillars.x_range"),
        y_range=_pair(d.get("y_range", list(b.y_range)), "pillars.y_range"),
        radius=_num(d.get("radius", b.radius), "pillars.radius", lo=0.0, strict_lo=True),
        seed=_int(d.get("seed", b.seed), "pillars.seed", lo=0),
    )


def _outliers(d, count: int) -> OutlierConfig:
    d = _section(d, "outliers")
    _reject_unknown(d, {f.name for f in dataclasses.fields(OutlierConfig)}, "outliers.")
    b = OutlierConfig()
    behavior = d.get("behavior", b.behavior)
    if behavior not in BEHAVIORS:
        raise ConfigError("outliers.behavior", f"must be one of {list(BEHAVIORS)}")
    ids = tuple(_int(i, "outliers.ids", lo=0) for i in _list(d.get("ids", []), "outliers.ids"))
    for i in ids:
        if i >= count:
            raise ConfigError("outliers.ids", f"agent {i} is not in a swarm of {count}")
    return OutlierConfig(
        fraction=_num(d.get("fraction", b.fraction), "outliers.fraction", lo=0.0, hi=1.0),
        ids=ids,
        behavior=behavior,
        onset=_num(d.get("onset", b.onset), "outliers.onset", lo=0.0),
        sigma=_num(d.get("sigma", b.sigma), "outliers.sigma", lo=0.0),
        velocity=_vec3(d.get("velocity", list(b.velocity)), "outliers.velocity"),
    )
