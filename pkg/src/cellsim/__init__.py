"""Deterministic workcell simulator: poses, safety monitoring, controllers, scheduling, analysis."""

from .geometry import Cuboid, Pose, Ray, compose, inverse, motion_norms, relative
from .safety import GridSpec, MonitorConfig, SafetyDecision, SpeedMode, ZoneSpec, monitor_tick
from .scheduler import CycleRecord, TaskGraph, run_cycle, run_shift, soldering_graph

__all__ = [
    "Cuboid", "Pose", "Ray", "compose", "inverse", "motion_norms", "relative",
    "GridSpec", "MonitorConfig", "SafetyDecision", "SpeedMode", "ZoneSpec", "monitor_tick",
    "CycleRecord", "TaskGraph", "run_cycle", "run_shift", "soldering_graph",
]
