"""Best-of-K displacement metrics, the constant-velocity baseline and evaluation harnesses."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import TrajectoryCodec
from .denoiser.context import ContextBatch, ContextSpec, make_context
from .diffusion import NoiseSchedule, chain_noise, ddim_loop
from .errors import ConfigError, DataError, ShapeError
from .scenegen import ScenarioSample

MISS_THRESHOLD_M = 2.0
# normalised latents of the training set lie in [-1, 1]
LATENT_CLIP = 1.0


def _check(samples: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    if samples.shape[0] < 1 or samples.shape[1:] != gt.shape:
        raise ShapeError(f"samples {samples.shape} do not match ground truth {gt.shape}")
    return samples, gt


def min_ade(samples: np.ndarray, gt: np.ndarray) -> float:
    """Smallest mean Euclidean waypoint error over K samples ``(K, H, 2)``."""
    samples, gt = _check(samples, gt)
    return float(np.linalg.norm(samples - gt, axis=-1).mean(axis=1).min())


def min_fde(samples: np.ndarray, gt: np.ndarray) -> float:
    """Smallest final-waypoint error over K samples."""
    samples, gt = _check(samples, gt)
    return float(np.linalg.norm(samples[:, -1] - gt[-1], axis=-1).min())


def miss_rate(min_fdes: Sequence[float], threshold: float = MISS_THRESHOLD_M) -> float:
    """Fraction of scenarios whose minFDE is strictly greater than ``threshold``."""
    values = np.asarray(min_fdes, dtype=float)
    if values.size == 0:
        raise ValueError("miss rate of an empty set")
    return float(np.count_nonzero(values > threshold) / values.size)


def constant_velocity_baseline(ego_history: np.ndarray, horizon: int = 80) -> np.ndarray:
    """Extrapolate the last history displacement (one 0.1 s step) for ``horizon`` steps."""
    hist = np.asarray(ego_history, dtype=float)[:, :2]
    if len(hist) < 2:
        raise ConfigError("constant-velocity baseline needs at least two history waypoints")
    step = hist[-1] - hist[-2]
    return hist[-1] + np.arange(1, horizon + 1)[:, None] * step


# ---------------------------------------------------------------------------
# sampling to metres


class OracleDenoiser:
    """Predicts exactly the noise that leads DDIM to the true latent of each scenario.

    Gives the floor of the metric pipeline: whatever error remains comes from
    the codec's truncation, not from the sampler.
    """

    def __init__(self, codec: TrajectoryCodec, samples: Sequence[ScenarioSample], schedule: NoiseSchedule):
        self.schedule = schedule
        self.latents = {s.id: codec.encode(s.future) for s in samples}

    def encode_scene(self, ctx: ContextBatch) -> np.ndarray:
        return np.stack([self.latents[int(i)] for i in ctx.ids])

    def denoise(self, z_t: np.ndarray, t: int, z_c: np.ndarray) -> np.ndarray:
        ab = self.schedule.alpha_bar[t]
        return (z_t - math.sqrt(ab) * z_c) / math.sqrt(1.0 - ab)


def _head(model):
    return lambda z, t, z_c: model.denoise(z, t, z_c)


def sample_latents(
    model, ctx: ContextBatch, K: int, N: int, seed: int, schedule: NoiseSchedule, d: int, z_c: np.ndarray | None = None,
    clip: float | None = LATENT_CLIP,
) -> np.ndarray:
    """``(B, K, d)`` clean normalised latents; scenario i's chains are keyed by (seed, id_i, chain)."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    ids = ctx.ids if ctx.ids is not None else np.arange(len(ctx))
    if z_c is None:
        z_c = model.encode_scene(ctx)
    z_T = np.concatenate([chain_noise((seed, int(i)), K, d) for i in ids])
    z0 = ddim_loop(z_T, _head(model), np.repeat(z_c, K, axis=0), N, schedule, clip)
    return z0.reshape(len(ctx), K, d)


def generate_plans(
    model, codec: TrajectoryCodec, context: ContextBatch | ScenarioSample, K: int, N: int, seed: int,
    schedule: NoiseSchedule, goal_mode: str | None = None, clip: float | None = LATENT_CLIP,
) -> np.ndarray:
    """K plans in metres ``(K, H, 2)`` for one scenario.

    DDIM in the normalised latent space, then latent de-normalisation, PCA
    inverse transform and trajectory de-normalisation.
    """
    if isinstance(context, ScenarioSample):
        context = make_context([context], model.config.context, goal_mode)
    if len(context) != 1:
        raise ShapeError("generate_plans takes a single scenario; use sample_latents for batches")
    z0 = sample_latents(model, context, K, N, seed, schedule, codec.d, clip=clip)[0]
    return codec.decode(z0)


# ---------------------------------------------------------------------------
# evaluation harnesses


@dataclass
class MetricsReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    K: int
    N: int
    n_scenarios: int
    rows: list[dict] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {"min_ade": self.min_ade, "min_fde": self.min_fde, "miss_rate": self.miss_rate,
                "K": self.K, "N": self.N, "n_scenarios": self.n_scenarios}


def report_from_rows(rows: list[dict], K: int, N: int) -> MetricsReport:
    if not rows:
        raise DataError("cannot evaluate an empty dataset")
    rows = sorted(rows, key=lambda r: r["scenario_id"])
    n = len(rows)
    return MetricsReport(
        min_ade=math.fsum(r["min_ade"] for r in rows) / n,
        min_fde=math.fsum(r["min_fde"] for r in rows) / n,
        miss_rate=sum(r["miss"] for r in rows) / n,
        K=K, N=N, n_scenarios=n, rows=rows,
    )


def _row(sample: ScenarioSample, plans: np.ndarray) -> dict:
    fde = min_fde(plans, sample.future)
    return {"scenario_id": sample.id, "kind": sample.kind, "min_ade": min_ade(plans, sample.future),
            "min_fde": fde, "miss": int(fde > MISS_THRESHOLD_M)}


class SceneCache:
    """Context arrays and scene embeddings computed once per (dataset, goal mode)."""

    def __init__(self, model, samples: Sequence[ScenarioSample], goal_mode: str | None = None, chunk: int = 256):
        if not samples:
            raise DataError("cannot evaluate an empty dataset")
        self.samples = list(samples)
        self.chunk = chunk
        self.contexts, self.embeddings = [], []
        for start in range(0, len(self.samples), chunk):
            ctx = make_context(self.samples[start : start + chunk], _context_spec(model), goal_mode)
            self.contexts.append(ctx)
            self.embeddings.append(model.encode_scene(ctx))


def _context_spec(model) -> ContextSpec:
    return getattr(getattr(model, "config", None), "context", None) or ContextSpec()


def evaluate(
    model, codec: TrajectoryCodec, samples: Sequence[ScenarioSample] | SceneCache, K: int, N: int, seed: int,
    schedule: NoiseSchedule, goal_mode: str | None = None, clip: float | None = LATENT_CLIP,
) -> MetricsReport:
    cache = samples if isinstance(samples, SceneCache) else SceneCache(model, samples, goal_mode)
    rows = []
    for i, (ctx, z_c) in enumerate(zip(cache.contexts, cache.embeddings)):
        plans = codec.decode(sample_latents(model, ctx, K, N, seed, schedule, codec.d, z_c, clip))
        chunk = cache.samples[i * cache.chunk : i * cache.chunk + len(ctx)]
        rows.extend(_row(s, p) for s, p in zip(chunk, plans))
    return report_from_rows(rows, K, N)


def evaluate_constant_velocity(samples: Sequence[ScenarioSample]) -> MetricsReport:
    rows = [_row(s, constant_velocity_baseline(s.ego_history, len(s.future))[None]) for s in samples]
    return report_from_rows(rows, K=1, N=0)


def sampler_sweep(
    model, codec: TrajectoryCodec, samples: Sequence[ScenarioSample], steps: Sequence[int], K: int, seed: int,
    schedule: NoiseSchedule, goal_mode: str | None = None, clip: float | None = LATENT_CLIP,
) -> list[dict]:
    """One evaluation per DDIM step count, all sharing cached scene embeddings and seed."""
    if any(not 1 <= n <= schedule.T for n in steps):
        raise ConfigError(f"sweep steps must lie in [1, {schedule.T}]")
    cache = SceneCache(model, samples, goal_mode)
    rows = []
    for n in steps:
        rep = evaluate(model, codec, cache, K, n, seed, schedule, clip=clip)
        rows.append({"N": n, "min_ade": rep.min_ade, "min_fde": rep.min_fde, "miss_rate": rep.miss_rate})
    return rows


def goal_ablation(
    sparse_model, endpoint_model, codec: TrajectoryCodec, samples: Sequence[ScenarioSample], K: int, N: int,
    seed: int, schedule: NoiseSchedule, sparse_meta: dict | None = None, endpoint_meta: dict | None = None,
    clip: float | None = LATENT_CLIP,
) -> list[dict]:
    """Sparse-route model, endpoint model, and the sparse model with its goal token zeroed."""
    fp = codec.fingerprint()
    for label, meta in (("sparse", sparse_meta), ("endpoint", endpoint_meta)):
        if meta is not None and meta.get("codec_fingerprint") not in (None, fp):
            raise ConfigError(f"{label} checkpoint was trained with a different codec")
    runs = (("sparse_route", sparse_model, "sparse"), ("endpoint", endpoint_model, "endpoint"),
            ("no_goal", sparse_model, "none"))
    rows = []
    for label, model, mode in runs:
        rep = evaluate(model, codec, samples, K, N, seed, schedule, goal_mode=mode, clip=clip)
        rows.append({"goal_mode": label, "min_ade": rep.min_ade, "min_fde": rep.min_fde, "miss_rate": rep.miss_rate})
    return rows


# ---------------------------------------------------------------------------
# CSV output


def _write_csv(rows: Sequence[dict], columns: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return path


def write_scenario_csv(report: MetricsReport, path: str | Path) -> Path:
    return _write_csv(report.rows, ["scenario_id", "kind", "min_ade", "min_fde", "miss"], path)


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> Path:
    return _write_csv(rows, ["N", "min_ade", "min_fde", "miss_rate"], path)


def write_ablation_csv(rows: Sequence[dict], path: str | Path) -> Path:
    return _write_csv(rows, ["goal_mode", "min_ade", "min_fde", "miss_rate"], path)
