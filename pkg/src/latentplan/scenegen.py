"""Procedural driving scenarios, curation filters and JSONL dataset files.

Every scenario is built in two passes: a curvature profile over arc length
defines the path geometry and a smooth speed profile places the 10 Hz
waypoints along it. All outputs are expressed in the ego frame at the
prediction time (last history step at the origin, heading along +x).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError

KINDS = ("straight", "left_turn", "right_turn", "lane_change", "stop_and_go")
TURN_KINDS = ("left_turn", "right_turn")
GOAL_VARIANTS = ("none", "endpoint", "sparse")

AGENT_FEATURES = 11
POLYLINE_POINTS = 10
SPARSE_ROUTE_POINTS = 5
MAX_QUALITY_GAP = 4
STATIC_THRESHOLD_M = 1.0

_ARC_STEP = 0.05  # metres, dense path grid
_MAX_ATTEMPTS = 16


@dataclass(frozen=True)
class GeneratorConfig:
    horizon: int = 80
    history: int = 11
    dt: float = 0.1
    ego_features: int = 6
    speed_range: tuple[float, float] = (6.0, 13.0)
    v_max: float = 20.0
    left_radius_range: tuple[float, float] = (10.0, 20.0)
    right_radius_range: tuple[float, float] = (6.0, 12.0)
    lateral_accel: float = 2.5
    max_heading_step: float = 0.1  # rad per step
    lane_width: float = 3.5
    noise: float = 1.0
    agent_count: tuple[int, int] = (2, 8)
    invalid_gap_prob: float = 0.05

    def __post_init__(self):
        if self.horizon < SPARSE_ROUTE_POINTS:
            raise ConfigError(f"horizon must be >= {SPARSE_ROUTE_POINTS}, got {self.horizon}")
        if self.history < 2:
            raise ConfigError(f"history must be >= 2, got {self.history}")
        if self.ego_features < 2:
            raise ConfigError("ego_features must be >= 2 (x, y)")
        lo, hi = self.speed_range
        if not 0 < lo <= hi <= self.v_max:
            raise ConfigError(f"bad speed_range {self.speed_range} for v_max {self.v_max}")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        for key in ("speed_range", "left_radius_range", "right_radius_range", "agent_count"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Goal:
    variant: str
    waypoints: np.ndarray  # (G, 2)

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        if self.variant not in GOAL_VARIANTS:
            raise ConfigError(f"unknown goal variant {self.variant!r}")
        expected = {"none": 0, "endpoint": 1, "sparse": SPARSE_ROUTE_POINTS}[self.variant]
        if len(self.waypoints) != expected:
            raise ConfigError(
                f"goal variant {self.variant!r} needs {expected} waypoints, got {len(self.waypoints)}"
            )


@dataclass
class ScenarioSample:
    ego_history: np.ndarray  # (history, F)
    agents: np.ndarray  # (n_agents, 11)
    map: np.ndarray  # (n_polylines, 10, 2)
    goal: Goal
    future: np.ndarray  # (H, 2)
    validity: np.ndarray  # (history + H,) bool
    kind: str
    id: int = 0

    @property
    def track(self) -> np.ndarray:
        """Full ego track (history positions followed by the future)."""
        return np.concatenate([self.ego_history[:, :2], self.future], axis=0)

    def with_goal(self, variant: str) -> "ScenarioSample":
        return replace(self, goal=derive_goal(self.future, variant))

    def to_json(self) -> dict:
        return {
            "id": int(self.id),
            "kind": self.kind,
            "ego_history": _rounded(self.ego_history),
            "agents": _rounded(self.agents),
            "map": _rounded(self.map),
            "goal": {"variant": self.goal.variant, "waypoints": _rounded(self.goal.waypoints)},
            "future": _rounded(self.future),
            "validity": [bool(v) for v in self.validity],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSample":
        agents = np.asarray(obj["agents"], dtype=float).reshape(-1, AGENT_FEATURES)
        polylines = np.asarray(obj["map"], dtype=float).reshape(-1, POLYLINE_POINTS, 2)
        goal = obj["goal"]
        return cls(
            ego_history=np.asarray(obj["ego_history"], dtype=float),
            agents=agents,
            map=polylines,
            goal=Goal(goal["variant"], np.asarray(goal["waypoints"], dtype=float)),
            future=np.asarray(obj["future"], dtype=float),
            validity=np.asarray(obj["validity"], dtype=bool),
            kind=str(obj["kind"]),
            id=int(obj.get("id", 0)),
        )


def _rounded(a: np.ndarray) -> list:
    # 10 decimals keeps files compact; unit-vector norms stay within 1e-9
    return np.round(np.asarray(a, dtype=float), 10).tolist()


# ---------------------------------------------------------------------------
# goals and filters


def sparse_route_indices(horizon: int, n_points: int = SPARSE_ROUTE_POINTS) -> list[int]:
    return [((k + 1) * horizon) // n_points - 1 for k in range(n_points)]


def derive_goal(future: np.ndarray, variant: str) -> Goal:
    future = np.asarray(future, dtype=float)
    if variant == "endpoint":
        return Goal("endpoint", future[-1:].copy())
    if variant == "sparse":
        return Goal("sparse", future[sparse_route_indices(len(future))].copy())
    if variant == "none":
        return Goal("none", np.zeros((0, 2)))
    raise ConfigError(f"unknown goal variant {variant!r}")


def static_filter(track: np.ndarray, validity: np.ndarray | None = None) -> bool:
    """Keep a track only if it moves at least 1 m away from its first valid point."""
    track = np.asarray(track, dtype=float)
    if validity is None:
        validity = np.ones(len(track), dtype=bool)
    points = track[np.asarray(validity, dtype=bool)]
    if len(points) < 2:
        return False
    displacement = np.linalg.norm(points - points[0], axis=1).max()
    return bool(displacement >= STATIC_THRESHOLD_M)


def quality_filter(validity: Sequence[bool]) -> bool:
    """Reject masks with more than 4 consecutive invalid steps."""
    mask = np.asarray(validity, dtype=bool)
    if mask.size == 0:
        raise ValueError("validity mask is empty")
    # run lengths of False via edges of the padded indicator
    invalid = np.concatenate([[0], (~mask).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(invalid))
    runs = edges[1::2] - edges[::2]
    return bool(runs.size == 0 or runs.max() <= MAX_QUALITY_GAP)


def passes_filters(sample: ScenarioSample) -> bool:
    return quality_filter(sample.validity) and static_filter(sample.track, sample.validity)


# ---------------------------------------------------------------------------
# geometry helpers


def _blend(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * u)


@dataclass
class _Path:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray

    def at(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.interp(s, self.s, self.x),
            np.interp(s, self.s, self.y),
            np.interp(s, self.s, self.heading),
        )

    def offset(self, s: np.ndarray, lateral: float) -> np.ndarray:
        x, y, h = self.at(s)
        return np.stack([x - lateral * np.sin(h), y + lateral * np.cos(h)], axis=-1)


def _integrate_path(s: np.ndarray, curvature: np.ndarray) -> _Path:
    """Integrate curvature over arc length; the point s=0 sits at the origin heading +x."""
    ds = np.diff(s)
    heading = np.concatenate([[0.0], np.cumsum(0.5 * (curvature[1:] + curvature[:-1]) * ds)])
    heading -= np.interp(0.0, s, heading)
    c, sn = np.cos(heading), np.sin(heading)
    x = np.concatenate([[0.0], np.cumsum(0.5 * (c[1:] + c[:-1]) * ds)])
    y = np.concatenate([[0.0], np.cumsum(0.5 * (sn[1:] + sn[:-1]) * ds)])
    x -= np.interp(0.0, s, x)
    y -= np.interp(0.0, s, y)
    return _Path(s, x, y, heading)


def _turn_curvature(s: np.ndarray, start: float, radius: float, angle: float, ramp: float = 3.0) -> np.ndarray:
    """Trapezoidal curvature (clothoid in, arc, clothoid out) turning by ``angle`` radians."""
    kappa = math.copysign(1.0 / radius, angle)
    plateau = max(abs(angle) / abs(kappa) - ramp, 0.0)
    rise = np.clip((s - start) / ramp, 0.0, 1.0)
    fall = np.clip((start + ramp + plateau + ramp - s) / ramp, 0.0, 1.0)
    return kappa * np.minimum(rise, fall)


def _lane_change_curvature(s: np.ndarray, start: float, length: float, offset: float) -> np.ndarray:
    u = (s - start) / length
    amp = 2.0 * np.pi * offset / length**2
    return np.where((u >= 0) & (u <= 1), amp * np.sin(2.0 * np.pi * u), 0.0)


def _speed_profile(t: np.ndarray, v0: float, events: Iterable[tuple[float, float, float]]) -> np.ndarray:
    """Speed v0 plus smooth (raised-cosine) changes ``(start, duration, delta_v)``."""
    v = np.full_like(t, v0)
    for start, duration, delta in events:
        v = v + delta * _blend((t - start) / duration)
    return v


# ---------------------------------------------------------------------------
# scenario construction


@dataclass
class _Layout:
    expert_curvature: np.ndarray
    lanes: list[np.ndarray] = field(default_factory=list)  # lane-centre curvature profiles
    boundaries: list[float] = field(default_factory=list)  # lateral offsets of drawn boundaries
    split: float = 40.0  # arc length where map polylines are cut in two


def _layout(kind: str, rng: np.random.Generator, cfg: GeneratorConfig, s: np.ndarray, s0: float, v0: float):
    """Return the path layout and the speed events for one maneuver family."""
    lo_l, hi_l = cfg.left_radius_range
    lo_r, hi_r = cfg.right_radius_range
    zero = np.zeros_like(s)
    half = [-0.5 * cfg.lane_width, 0.5 * cfg.lane_width]
    intersection = kind in TURN_KINDS or (kind == "straight" and rng.random() < 0.5)

    if intersection:
        entry = s0 + rng.uniform(4.0, 18.0)
        r_left, r_right = rng.uniform(lo_l, hi_l), rng.uniform(lo_r, hi_r)
        lanes = [
            zero,
            _turn_curvature(s, entry, r_left, np.pi / 2),
            _turn_curvature(s, entry, r_right, -np.pi / 2),
        ]
        layout = _Layout(zero, lanes, half, split=entry)
    elif kind == "lane_change":
        layout = _Layout(zero, [zero], [-3 * half[1], -half[1], half[1], 3 * half[1]])
    else:
        layout = _Layout(zero, [zero], half)

    events: list[tuple[float, float, float]] = []
    if kind in TURN_KINDS:
        sign = 1.0 if kind == "left_turn" else -1.0
        map_radius = r_left if sign > 0 else r_right
        radius = map_radius * rng.uniform(0.85, 1.15)
        angle = sign * (np.pi / 2) * rng.uniform(0.9, 1.1)
        start = entry + rng.uniform(-1.5, 1.5)
        layout.expert_curvature = _turn_curvature(s, start, radius, angle)
        v_turn = math.sqrt(cfg.lateral_accel * radius) * rng.uniform(0.75, 1.0)
        slow_start = rng.uniform(-0.5, 1.5)
        slow_len = rng.uniform(1.5, 3.0)
        events.append((slow_start, slow_len, min(v_turn - v0, 0.0)))
        events.append((slow_start + slow_len + rng.uniform(1.5, 3.5), rng.uniform(2.0, 3.5), rng.uniform(1.0, 4.0)))
    elif kind == "lane_change":
        duration = rng.uniform(3.0, 5.5)
        side = rng.choice([-1.0, 1.0])
        length = v0 * duration
        layout.expert_curvature = _lane_change_curvature(
            s, s0 + rng.uniform(0.0, 20.0), length, side * cfg.lane_width * rng.uniform(0.9, 1.05)
        )
        if rng.random() < 0.5:
            events.append((rng.uniform(0.0, 4.0), rng.uniform(1.5, 3.0), rng.uniform(-2.0, 2.0)))
    elif kind == "stop_and_go":
        stop_start = rng.uniform(-0.5, 2.0)
        stop_len = rng.uniform(1.5, 3.0)
        wait = rng.uniform(0.5, 3.0)
        events.append((stop_start, stop_len, -v0))
        events.append((stop_start + stop_len + wait, rng.uniform(2.0, 4.0), rng.uniform(3.0, 8.0)))
    return layout, events


# straights are steady cruises: mild driver noise, no speed events
_NOISE_SCALE = {"straight": 0.2}


def _smooth_noise(x: np.ndarray, rng: np.random.Generator, amplitude: float, wavelengths: tuple[float, float]) -> np.ndarray:
    out = np.zeros_like(x)
    for _ in range(3):
        lam = rng.uniform(*wavelengths)
        out += rng.normal(0.0, amplitude) * np.sin(2 * np.pi * x / lam + rng.uniform(0, 2 * np.pi))
    return out


def _agents(rng: np.random.Generator, cfg: GeneratorConfig, v0: float) -> np.ndarray:
    n = int(rng.integers(cfg.agent_count[0], cfg.agent_count[1] + 1))
    rows = []
    for _ in range(n):
        role = rng.choice(["lead", "adjacent", "oncoming", "parked", "pedestrian"])
        if role == "pedestrian":
            x, y = rng.uniform(-5, 40), rng.choice([-1, 1]) * rng.uniform(4.0, 8.0)
            yaw = rng.uniform(-np.pi, np.pi)
            speed, length, width, flags = rng.uniform(0.0, 1.8), 0.6, 0.6, (0, 1, 0)
        elif role == "parked":
            x, y = rng.uniform(-10, 50), rng.choice([-1, 1]) * rng.uniform(3.2, 4.5)
            yaw = rng.normal(0, 0.05) + (0 if rng.random() < 0.5 else np.pi)
            speed, length, width, flags = 0.0, rng.uniform(4.0, 5.2), rng.uniform(1.7, 2.0), (1, 0, 1)
        else:
            x = {"lead": rng.uniform(8, 45), "adjacent": rng.uniform(-20, 30), "oncoming": rng.uniform(5, 60)}[role]
            y = {"lead": 0.0, "adjacent": rng.choice([-1, 1]) * cfg.lane_width, "oncoming": cfg.lane_width}[role]
            y += rng.normal(0, 0.2)
            yaw = rng.normal(0, 0.05) + (np.pi if role == "oncoming" else 0.0)
            speed = max(v0 + rng.normal(0, 2.0), 0.0)
            length, width, flags = rng.uniform(4.0, 5.2), rng.uniform(1.7, 2.0), (1, 0, 0)
        c, s = math.cos(yaw), math.sin(yaw)
        rows.append([x, y, speed * c, speed * s, c, s, length, width, *flags])
    return np.asarray(rows, dtype=float).reshape(-1, AGENT_FEATURES)


def _validity(rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    total = cfg.history + cfg.horizon
    mask = np.ones(total, dtype=bool)
    if rng.random() < cfg.invalid_gap_prob:
        gap = int(rng.integers(1, 8))
        # the prediction-time step stays valid
        start = int(rng.integers(cfg.history, total - gap + 1))
        mask[start : start + gap] = False
    return mask


def _to_ego_frame(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    rel = points - origin
    return np.stack([c * rel[..., 0] + s * rel[..., 1], -s * rel[..., 0] + c * rel[..., 1]], axis=-1)


def _build(kind: str, rng: np.random.Generator, cfg: GeneratorConfig) -> ScenarioSample:
    total = cfg.history + cfg.horizon
    t = (np.arange(total) - (cfg.history - 1)) * cfg.dt
    v0 = rng.uniform(*cfg.speed_range)
    if kind == "stop_and_go":
        v0 = rng.uniform(0.5, cfg.speed_range[1])
    s0 = v0 * cfg.dt * (cfg.history - 1)  # approximate arc length at the prediction time

    max_travel = cfg.v_max * cfg.dt * total
    s = np.arange(-30.0, max_travel + 60.0 + _ARC_STEP, _ARC_STEP)
    layout, events = _layout(kind, rng, cfg, s, s0, v0)

    noise = cfg.noise * _NOISE_SCALE.get(kind, 1.0)
    speed = _speed_profile(t, v0, events)
    if noise > 0:
        speed = speed + noise * _smooth_noise(t, rng, 0.15, (3.0, 9.0))
    speed = np.clip(speed, 0.0, cfg.v_max)
    arc = np.concatenate([[0.0], np.cumsum(speed[:-1] * cfg.dt)])

    curvature = layout.expert_curvature
    if noise > 0:
        curvature = curvature + noise * _smooth_noise(s, rng, 0.0015, (30.0, 120.0))
    expert = _integrate_path(s, curvature)
    ex, ey, eh = expert.at(arc)
    positions = np.stack([ex, ey], axis=-1)

    now = cfg.history - 1
    origin, yaw0 = positions[now].copy(), float(eh[now])
    local = _to_ego_frame(positions, origin, yaw0)
    local[now] = 0.0
    heading = eh - yaw0
    velocity = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=-1)

    ego = np.concatenate(
        [local[: cfg.history], velocity[: cfg.history], np.cos(heading[: cfg.history, None]), np.sin(heading[: cfg.history, None])],
        axis=1,
    )
    if cfg.ego_features <= ego.shape[1]:
        ego = ego[:, : cfg.ego_features]
    else:
        ego = np.pad(ego, ((0, 0), (0, cfg.ego_features - ego.shape[1])))

    # lane boundaries of every legal route, cut at the intersection entry
    polylines = []
    cuts = [(-10.0, layout.split), (layout.split, layout.split + 45.0)]
    for lane_id, lane_curv in enumerate(layout.lanes):
        lane = _integrate_path(s, lane_curv)
        for piece, (a, b) in enumerate(cuts):
            if piece == 0 and lane_id > 0:
                continue  # exits share the approach lane
            grid = np.linspace(a, b, POLYLINE_POINTS)
            for lateral in layout.boundaries:
                world = lane.offset(grid, lateral)
                polylines.append(_to_ego_frame(world, origin, yaw0))
    polylines = np.asarray(polylines, dtype=float).reshape(-1, POLYLINE_POINTS, 2)
    order = rng.permutation(len(polylines))

    future = local[cfg.history :]
    return ScenarioSample(
        ego_history=ego,
        agents=_agents(rng, cfg, v0),
        map=polylines[order],
        goal=derive_goal(future, "sparse"),
        future=future,
        validity=_validity(rng, cfg),
        kind=kind,
    )


def heading_change(traj: np.ndarray, start_heading: float = 0.0) -> float:
    """Signed total heading change along a polyline, starting from ``start_heading``."""
    d = np.diff(np.concatenate([[[0.0, 0.0]], traj]), axis=0)
    moving = np.linalg.norm(d, axis=1) > 1e-6
    angles = np.arctan2(d[moving, 1], d[moving, 0])
    if len(angles) == 0:
        return 0.0
    steps = np.diff(np.concatenate([[start_heading], angles]))
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    return float(steps.sum())


def _kinematically_valid(sample: ScenarioSample, cfg: GeneratorConfig) -> bool:
    track = sample.track
    if not np.all(np.isfinite(track)):
        return False
    step = np.linalg.norm(np.diff(track, axis=0), axis=1)
    if step.max() > cfg.v_max * cfg.dt + 1e-9:
        return False
    d = np.diff(track, axis=0)
    moving = step > 1e-3
    headings = np.arctan2(d[moving, 1], d[moving, 0])
    turn = np.abs((np.diff(headings) + np.pi) % (2 * np.pi) - np.pi)
    if turn.size and turn.max() > cfg.max_heading_step:
        return False
    if sample.kind in TURN_KINDS:
        change = math.degrees(heading_change(sample.future))
        sign = 1 if sample.kind == "left_turn" else -1
        if not 30.0 < sign * change < 120.0:
            return False
    return True


def generate_scenario(kind: str, seed: int, params: GeneratorConfig | None = None) -> ScenarioSample:
    """Deterministically generate one scenario of maneuver family ``kind``.

    Candidates outside the kinematic envelope (speed, per-step heading change,
    turn angle) are redrawn from the same random stream.
    """
    if kind not in KINDS:
        raise ConfigError(f"unsupported scenario kind {kind!r}; expected one of {KINDS}")
    cfg = params or GeneratorConfig()
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_ATTEMPTS):
        sample = _build(kind, rng, cfg)
        if _kinematically_valid(sample, cfg):
            return sample
    raise ConfigError(f"could not generate a valid {kind} scenario for seed {seed}; check generator ranges")


# ---------------------------------------------------------------------------
# datasets

_SPLITS = {"train": 0, "val": 1}


def sample_seed(base_seed: int, split: str, index: int, attempt: int = 0) -> int:
    """Per-sample seed; train and val occupy disjoint ranges for any base seed."""
    if not 0 <= attempt < 8:
        raise ValueError("attempt must be in [0, 8)")
    return (int(base_seed) << 40) | (_SPLITS[split] << 39) | (int(index) << 3) | attempt


def assign_kind(mix: dict[str, float], base_seed: int, split: str, index: int) -> str:
    kinds = list(mix)
    rng = np.random.default_rng([int(base_seed), _SPLITS[split], int(index), 0xC0FFEE])
    return kinds[int(rng.choice(len(kinds), p=[mix[k] for k in kinds]))]


def _validate_mix(mix: dict[str, float]) -> dict[str, float]:
    if not mix:
        raise ConfigError("kind mix is empty")
    for kind, p in mix.items():
        if kind not in KINDS:
            raise ConfigError(f"unsupported scenario kind {kind!r} in mix")
        if p < 0:
            raise ConfigError(f"negative proportion for {kind!r}")
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise ConfigError(f"kind proportions must sum to 1, got {sum(mix.values())}")
    return {k: float(p) for k, p in mix.items() if p > 0}


def curated_sample(
    base_seed: int, split: str, index: int, mix: dict[str, float], params: GeneratorConfig, goal: str = "sparse"
) -> ScenarioSample:
    """The ``index``-th sample of a split: first candidate that passes both curation filters."""
    kind = assign_kind(mix, base_seed, split, index)
    for attempt in range(8):
        sample = generate_scenario(kind, sample_seed(base_seed, split, index, attempt), params)
        if passes_filters(sample):
            sample.id = index
            return sample.with_goal(goal) if goal != "sparse" else sample
    raise ConfigError(f"no curated {kind} sample found for {split}[{index}]")


def _line(args) -> str:
    base_seed, split, index, mix, params, goal = args
    return json.dumps(curated_sample(base_seed, split, index, mix, params, goal).to_json(), separators=(",", ":"))


DEFAULT_MIX = {"straight": 0.2, "left_turn": 0.2, "right_turn": 0.2, "lane_change": 0.2, "stop_and_go": 0.2}


def build_dataset(
    n_train: int,
    n_val: int,
    mix: dict[str, float] | None,
    seed: int,
    out_dir: str | Path,
    params: GeneratorConfig | None = None,
    goal: str = "sparse",
    workers: int = 1,
) -> tuple[Path, Path]:
    """Write ``train.jsonl`` and ``val.jsonl`` under ``out_dir``; returns both paths."""
    if n_train <= 0 or n_val <= 0:
        raise ConfigError("n_train and n_val must be positive")
    mix = _validate_mix(mix or DEFAULT_MIX)
    params = params or GeneratorConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for split, n in (("train", n_train), ("val", n_val)):
        path = out_dir / f"{split}.jsonl"
        jobs = ((seed, split, i, mix, params, goal) for i in range(n))
        with path.open("w", encoding="utf-8") as fh:
            if workers > 1:
                with ProcessPoolExecutor(workers) as pool:
                    lines = pool.map(_line, jobs, chunksize=64)
                    fh.writelines(line + "\n" for line in lines)
            else:
                fh.writelines(_line(job) + "\n" for job in jobs)
        paths.append(path)
    return paths[0], paths[1]


def iter_dataset(path: str | Path) -> Iterator[ScenarioSample]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield ScenarioSample.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: cannot parse scenario ({exc})") from exc


def load_dataset(path: str | Path) -> list[ScenarioSample]:
    return list(iter_dataset(path))


def config_dict(params: GeneratorConfig) -> dict:
    return asdict(params)
