"""Scenario runner and benchmark harnesses behind the command-line tool."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .config import PillarField, ScenarioConfig, SwarmConfig
from .formation import (
    FormationSpec,
    PositionFrame,
    compute_ofps,
    formation_error,
    laplacian_error_baseline,
    short_axis_sensitivity,
)
from .errors import RegistrationFailed
from .geometry import apply, random_sim3
from .robust import RansacConfig
from .shapes import generate_shape
from .sim import MetricsLog, SimSettings, World, build_world, inject_outliers, run

STEADY_FRACTION = 0.25


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    world: World
    summary: dict

    @property
    def metrics(self) -> MetricsLog:
        return self.world.metrics


def build_scenario(cfg: ScenarioConfig) -> World:
    """World for ``cfg``: desired shape plus start offset and noise, goals shifted by the goal offset."""
    spec = generate_shape(cfg.swarm.shape_spec())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    start_off = np.asarray(cfg.swarm.start_offset, dtype=float)
    goal_off = np.asarray(cfg.swarm.goal_offset, dtype=float)
    starts, goals = {}, {}
    for i in spec.ids:
        starts[i] = spec.desired[i] + start_off + cfg.swarm.start_noise * rng.standard_normal(3)
        goals[i] = spec.desired[i] + goal_off
    world = build_world(spec, starts, goals, cfg.sim, cfg.obstacle_field())
    policy = cfg.outlier_policy(spec.ids)
    if policy is not None:
        inject_outliers(world, policy)
    for i in cfg.comm_lost:
        world.lose_link(i)
    return world


def summarize(cfg: ScenarioConfig, world: World) -> dict:
    m = world.metrics
    t_mean, t_std = m.timing_stats() if cfg.sim.record_timing else (None, None)
    e_norm = m.column("e_dist_normal")
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "agents": len(world.agents),
        "outliers": list(world.policy.affected) if world.policy else [],
        "sim_time": round(world.time, 9),
        "steady_state_e_dist": m.steady_state("e_dist_normal", STEADY_FRACTION),
        "steady_state_e_dist_all": m.steady_state("e_dist_all", STEADY_FRACTION),
        "mean_e_dist": float(np.mean(e_norm)) if len(e_norm) else None,
        "final_e_dist": float(e_norm[-1]) if len(e_norm) else None,
        "t_mean": t_mean,
        "t_std": t_std,
        "replans": m.replans,
        "converged_replans": m.converged_replans,
        "registration_failures": m.registration_failures,
        "insufficient_peers": m.insufficient_peers,
        "optimizer_failures": m.optimizer_failures,
        "min_pair_dist": float(m.column("min_pair_dist").min()) if len(m) else None,
        "min_obs_clearance": float(m.column("min_obs_clearance").min()) if len(m) else None,
        "status": "completed",
    }


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> ScenarioResult:
    """Run ``cfg`` to completion; optionally write ``metrics.csv`` and ``summary.json``."""
    world = build_scenario(cfg)
    run(world)
    summary = summarize(cfg, world)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(world.metrics.to_csv())
        (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
        cfg.dump(out / "config.yaml")
    return ScenarioResult(cfg, world, summary)


# --- OFPS throughput -----------------------------------------------------------

OFPS_COLUMNS = ("count", "t_mean", "t_std", "t_max")


def perturbed_frames(desired: np.ndarray, frames: int, noise: float, rng) -> list[PositionFrame]:
    """Desired positions plus Gaussian noise, moved by a fresh random Sim(3) per frame."""
    out = []
    for m in range(frames):
        T = random_sim3(rng)
        P = apply(T, desired + noise * rng.standard_normal(desired.shape))
        out.append(PositionFrame(m, {i: P[i] for i in range(len(P))}, float(m)))
    return out


def bench_ofps(
    counts: Sequence[int],
    trials: int = 5,
    seed: int = 0,
    frames: int = 16,
    noise: float = 0.1,
    ransac: Optional[RansacConfig] = None,
) -> list[dict]:
    """Wall time of one full OFPS computation (``frames`` registrations) per formation size.

    Rows also carry ``failures``, the number of frames without consensus; it
    is not part of the CSV schema.
    """
    if any(c < 4 for c in counts):
        raise ValueError("every count must be >= 4")
    _kernels.warmup()
    ransac = ransac or RansacConfig(rng_seed=seed)
    rows = []
    for count in counts:
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(count)]))
        side = 1.5 * count ** (1.0 / 3.0)
        times = []
        failures = 0
        for _ in range(trials):
            desired = rng.uniform(-side / 2, side / 2, size=(count, 3))
            spec = FormationSpec.from_array(desired)
            seq = perturbed_frames(desired, frames, noise, rng)
            t0 = time.perf_counter()
            for frame in seq:
                # frames are registered one by one so a failed frame does not cut the timing short
                try:
                    compute_ofps(0, spec, [frame], ransac)
                except RegistrationFailed:
                    failures += 1
            times.append(time.perf_counter() - t0)
        t = np.asarray(times)
        rows.append({
            "count": int(count),
            "t_mean": float(t.mean()),
            "t_std": float(t.std()),
            "t_max": float(t.max()),
            "failures": failures,
        })
    return rows


# --- scaling ---------------------------------------------------------------------

SCALING_COLUMNS = ("count", "t_mean", "t_std", "e_dist", "e_dist_mean")


def scaling_config(size: int, seed: int = 0, duration: float = 30.0, template: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Cube scenario of ``size`` agents derived from ``template`` (or the defaults)."""
    base = template or ScenarioConfig(seed=seed, pillars=PillarField(count=8, seed=seed))
    swarm = dataclasses.replace(base.swarm, shape="cube_grid", count=int(size))
    sim = dataclasses.replace(base.sim, duration=duration)
    return base.with_overrides(swarm=swarm, sim=sim, name=f"cube_{size}", seed=seed)


def _scaling_row(cfg: ScenarioConfig) -> dict:
    res = run_scenario(cfg)
    s = res.summary
    return {
        "count": cfg.swarm.count,
        "t_mean": s["t_mean"],
        "t_std": s["t_std"],
        "e_dist": s["steady_state_e_dist"],
        "e_dist_mean": s["mean_e_dist"],
    }


def bench_scaling(
    sizes: Sequence[int],
    seed: int = 0,
    duration: float = 30.0,
    template: Optional[ScenarioConfig] = None,
    jobs: int = 1,
) -> list[dict]:
    """One cube scenario per size; ``jobs > 1`` runs them in separate processes."""
    if any(s < 4 for s in sizes):
        raise ValueError("every size must be >= 4")
    cfgs = [scaling_config(s, seed, duration, template) for s in sizes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_scaling_row, cfgs))
    return [_scaling_row(c) for c in cfgs]


# --- slender formation -----------------------------------------------------------


def slender_config(obstacles: bool = False, seed: int = 0, duration: float = 30.0) -> ScenarioConfig:
    pillars = PillarField(count=6, y_range=(-6.0, 6.0), seed=seed) if obstacles else PillarField()
    return ScenarioConfig(
        seed=seed,
        name="slender_obstacles" if obstacles else "slender",
        swarm=SwarmConfig(shape="slender_rect", count=24),
        pillars=pillars,
        sim=SimSettings(duration=duration),
    )


def compare_slender(
    obstacles: bool = False, seed: int = 0, duration: float = 30.0, probe: float = 0.2
) -> dict:
    """Slender run plus the short-axis pinch diagnostic for both formation metrics.

    ``pcr_sensitivity`` and ``laplacian_sensitivity`` are the pinch/stretch
    error ratios; values near 1 mean short-axis and long-axis deviations of
    equal size are weighted alike.
    """
    cfg = slender_config(obstacles, seed, duration)
    res = run_scenario(cfg)
    spec = res.world.spec
    pcr = short_axis_sensitivity(spec, formation_error, probe)
    lap = short_axis_sensitivity(spec, laplacian_error_baseline, probe)
    return {
        "obstacles": bool(obstacles),
        "e_dist": res.summary["steady_state_e_dist"],
        "e_dist_mean": res.summary["mean_e_dist"],
        "pcr_sensitivity": pcr,
        "laplacian_sensitivity": lap,
        "pcr_at_least_as_sensitive": bool(pcr >= lap),
    }


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r[k]) for k in columns})
    return buf.getvalue()
