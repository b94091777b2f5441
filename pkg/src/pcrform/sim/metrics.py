"""Time series recorded during a simulation run."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

COLUMNS = (
    "time",
    "e_dist_all",
    "e_dist_normal",
    "t_opt_mean",
    "t_opt_std",
    "min_pair_dist",
    "min_obs_clearance",
    "inlier_fraction_mean",
)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)
    replan_durations: list = field(default_factory=list)
    registration_failures: int = 0
    insufficient_peers: int = 0
    optimizer_failures: int = 0
    replans: int = 0
    converged_replans: int = 0

    def append(self, **values) -> None:
        if self.rows and values["time"] <= self.rows[-1]["time"]:
            raise ValueError("metric timestamps must be strictly increasing")
        self.rows.append({k: float(values[k]) for k in COLUMNS})

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def steady_state(self, name: str = "e_dist_normal", fraction: float = 0.25) -> float:
        """Mean of ``name`` over the final ``fraction`` of samples."""
        if not self.rows:
            return float("nan")
        col = self.column(name)
        k = max(1, int(math.ceil(fraction * len(col))))
        return float(np.mean(col[-k:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    def timing_stats(self) -> tuple[float, float]:
        if not self.replan_durations:
            return float("nan"), float("nan")
        d = np.asarray(self.replan_durations)
        return float(d.mean()), float(d.std())
