"""Distributed asynchronous swarm simulation."""

from .agents import AgentState, AgentStatus, OutlierPolicy
from .bus import BroadcastBus, Message
from .metrics import COLUMNS as METRIC_COLUMNS
from .metrics import MetricsLog
from .obstacles import Box, ObstacleField, Sphere, signed_distance
from .world import (
    ReplanResult,
    SimSettings,
    Snapshot,
    World,
    build_world,
    inject_outliers,
    local_target,
    record_metrics,
    replan_agent,
    run,
    step,
)

__all__ = [
    "AgentState",
    "AgentStatus",
    "BroadcastBus",
    "Box",
    "METRIC_COLUMNS",
    "Message",
    "MetricsLog",
    "ObstacleField",
    "OutlierPolicy",
    "ReplanResult",
    "SimSettings",
    "Snapshot",
    "Sphere",
    "World",
    "build_world",
    "inject_outliers",
    "local_target",
    "record_metrics",
    "replan_agent",
    "run",
    "signed_distance",
    "step",
]
