"""Fixed-shape, padded context arrays built from scenario samples."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ShapeError
from ..scenegen import AGENT_FEATURES, GOAL_VARIANTS, POLYLINE_POINTS, SPARSE_ROUTE_POINTS, ScenarioSample, derive_goal


@dataclass(frozen=True)
class ContextSpec:
    history: int = 11
    ego_features: int = 6
    max_agents: int = 8
    max_polylines: int = 8
    pos_scale: float = 20.0
    vel_scale: float = 10.0
    size_scale: float = 5.0


@dataclass
class ContextBatch:
    ego: np.ndarray  # (B, history, F)
    agents: np.ndarray  # (B, max_agents, 11)
    agent_mask: np.ndarray  # (B, max_agents) bool
    map: np.ndarray  # (B, max_polylines, 20)
    map_mask: np.ndarray  # (B, max_polylines) bool
    goal: np.ndarray  # (B, 10)
    goal_on: np.ndarray  # (B,) float, 0 zeroes the goal token
    ids: np.ndarray | None = None  # (B,) scenario ids, metadata only

    def __len__(self) -> int:
        return len(self.ego)

    def take(self, idx) -> "ContextBatch":
        values = (getattr(self, f.name) for f in fields(self))
        return ContextBatch(*(None if v is None else v[idx] for v in values))

    def repeat(self, k: int) -> "ContextBatch":
        """Each row repeated ``k`` times consecutively."""
        return self.take(np.repeat(np.arange(len(self)), k))

    def without_goal(self) -> "ContextBatch":
        return ContextBatch(self.ego, self.agents, self.agent_mask, self.map, self.map_mask,
                            np.zeros_like(self.goal), np.zeros_like(self.goal_on), self.ids)


def _goal_slots(waypoints: np.ndarray) -> np.ndarray:
    # an endpoint goal occupies the last slot, where the sparse route also ends
    slots = np.zeros((SPARSE_ROUTE_POINTS, 2))
    if len(waypoints):
        slots[SPARSE_ROUTE_POINTS - len(waypoints):] = waypoints
    return slots


def make_context(samples: Sequence[ScenarioSample], spec: ContextSpec, goal_mode: str | None = None) -> ContextBatch:
    """Stack samples into padded, scaled arrays.

    ``goal_mode`` overrides each sample's stored goal ("none", "endpoint",
    "sparse"); ``None`` keeps the stored goal.
    """
    if goal_mode is not None and goal_mode not in GOAL_VARIANTS:
        raise ConfigError(f"unknown goal mode {goal_mode!r}")
    B = len(samples)
    ego = np.zeros((B, spec.history, spec.ego_features))
    agents = np.zeros((B, spec.max_agents, AGENT_FEATURES))
    agent_mask = np.zeros((B, spec.max_agents), dtype=bool)
    polylines = np.zeros((B, spec.max_polylines, POLYLINE_POINTS * 2))
    map_mask = np.zeros((B, spec.max_polylines), dtype=bool)
    goal = np.zeros((B, SPARSE_ROUTE_POINTS * 2))
    goal_on = np.zeros(B)

    agent_scale = np.array([spec.pos_scale] * 2 + [spec.vel_scale] * 2 + [1.0] * 2 + [spec.size_scale] * 2 + [1.0] * 3)
    ego_scale = np.ones(spec.ego_features)
    ego_scale[:2] = spec.pos_scale
    ego_scale[2:4] = spec.vel_scale

    for i, s in enumerate(samples):
        if s.ego_history.shape != (spec.history, spec.ego_features):
            raise ShapeError(f"ego history shape {s.ego_history.shape} != {(spec.history, spec.ego_features)}")
        n_a, n_m = len(s.agents), len(s.map)
        if n_a > spec.max_agents:
            raise ShapeError(f"scenario {s.id}: {n_a} agents exceed the maximum of {spec.max_agents}")
        if n_m > spec.max_polylines:
            raise ShapeError(f"scenario {s.id}: {n_m} polylines exceed the maximum of {spec.max_polylines}")
        ego[i] = s.ego_history / ego_scale
        agents[i, :n_a] = s.agents / agent_scale
        agent_mask[i, :n_a] = True
        polylines[i, :n_m] = s.map.reshape(n_m, -1) / spec.pos_scale
        map_mask[i, :n_m] = True
        g = s.goal if goal_mode is None else derive_goal(s.future, goal_mode)
        if g.variant != "none":
            goal[i] = _goal_slots(g.waypoints).ravel() / spec.pos_scale
            goal_on[i] = 1.0
    ids = np.array([s.id for s in samples], dtype=np.int64)
    return ContextBatch(ego, agents, agent_mask, polylines, map_mask, goal, goal_on, ids)
