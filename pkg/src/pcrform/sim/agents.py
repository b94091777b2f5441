"""Agent state and abnormal-agent policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ..trajectory import PolyTrajectory


class AgentStatus(str, Enum):
    NORMAL = "normal"
    OUTLIER = "outlier"
    COMM_LOST = "comm_lost"


@dataclass
class AgentState:
    """Mutable per-agent simulation state.

    ``goal`` is the agent's own final destination; ``view`` is a frozen copy of
    known peer trajectories once the agent has lost its link (``None`` while it
    reads the shared table).
    """

    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    trajectory: Optional[PolyTrajectory] = None
    goal: Optional[np.ndarray] = None
    status: AgentStatus = AgentStatus.NORMAL
    last_replan_time: float = -np.inf
    last_replan_wall: float = 0.0
    next_replan: float = 0.0
    last_ofps: object = None
    inlier_fraction: float = float("nan")
    holding: bool = False
    flags: list = field(default_factory=list)
    view: Optional[dict] = None

    @property
    def is_normal(self) -> bool:
        return self.status != AgentStatus.OUTLIER


BEHAVIORS = ("frozen", "random_walk", "constant_drift")


@dataclass(frozen=True)
class OutlierPolicy:
    """Which agents turn abnormal, how they move, and from when.

    ``sigma`` is the random-walk diffusion in m/sqrt(s); ``velocity`` the
    drift for ``constant_drift``.
    """

    affected: tuple = ()
    behavior: str = "frozen"
    onset: float = 0.0
    sigma: float = 0.5
    velocity: tuple = (0.5, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "affected", tuple(sorted(int(i) for i in self.affected)))
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"behavior must be one of {BEHAVIORS}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if len(self.velocity) != 3:
            raise ValueError("velocity must have 3 components")

    def displacement(self, rng: np.random.Generator, dt: float) -> np.ndarray:
        if self.behavior == "frozen":
            return np.zeros(3)
        if self.behavior == "random_walk":
            return self.sigma * np.sqrt(dt) * rng.standard_normal(3)
        return np.asarray(self.velocity, dtype=float) * dt
