"""Codec fitting and the noise-prediction training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codec import TrajectoryCodec, fit_codec
from .denoiser.context import ContextBatch, make_context
from .denoiser.model import DenoiserConfig, DenoiserModel, loss_for_noise
from .denoiser.optim import AdamW, CosineLR, optimizer_step
from .diffusion import NoiseSchedule, cosine_schedule, q_sample
from .errors import ConfigError, TrainingError
from .scenegen import GOAL_VARIANTS, ScenarioSample, load_dataset

log = logging.getLogger(__name__)


def fit_pipeline(train_path: str | Path, out_path: str | Path, d: int = 16, whiten: bool = True) -> TrajectoryCodec:
    """Fit isotropic stats, PCA and latent stats on every training future; write the codec file."""
    samples = load_dataset(train_path)
    if not samples:
        raise ConfigError(f"training set {train_path} is empty")
    codec = fit_codec(np.stack([s.future for s in samples]), d=d, whiten=whiten)
    codec.save(out_path)
    ratio = float(codec.basis.explained_variance_ratio().sum())
    log.info("codec fitted on %d futures: d=%d captures %.6f of the variance", len(samples), d, ratio)
    return codec


@dataclass
class TrainConfig:
    steps: int = 20_000
    batch: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-4
    min_lr: float = 1e-7
    restart_period: int | None = None
    T: int = 500
    goal_mode: str = "sparse"
    seed: int = 0
    eval_interval: int = 1000
    val_items: int = 512
    val_minade: bool = False
    val_minade_scenarios: int = 64

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be >= 1")
        if self.goal_mode not in GOAL_VARIANTS:
            raise ConfigError(f"unknown goal mode {self.goal_mode!r}")


@dataclass
class TrainResult:
    model: DenoiserModel
    optimizer: AdamW
    losses: np.ndarray
    log_rows: list[dict]
    best_path: Path
    final_path: Path
    log_path: Path
    best_val_loss: float
    final_val_loss: float
    meta: dict = field(default_factory=dict)


@dataclass
class _Split:
    samples: list[ScenarioSample]
    ctx: ContextBatch
    z0: np.ndarray


def _prepare(samples: list[ScenarioSample], codec: TrajectoryCodec, config: DenoiserConfig, goal_mode: str) -> _Split:
    ctx = make_context(samples, config.context, goal_mode)
    z0 = codec.encode(np.stack([s.future for s in samples]))
    return _Split(samples, ctx, z0)


def validation_loss(model: DenoiserModel, z0: np.ndarray, ctx: ContextBatch, t: np.ndarray, eps: np.ndarray,
                    schedule: NoiseSchedule, chunk: int = 512) -> float:
    total = 0.0
    for a in range(0, len(z0), chunk):
        sl = slice(a, a + chunk)
        z_t = q_sample(z0[sl], t[sl], eps[sl], schedule)
        err = model.forward(z_t, t[sl], ctx.take(sl))[0] - eps[sl]
        total += float((err * err).sum())
    return total / eps.size


def train(
    train_samples: list[ScenarioSample],
    val_samples: list[ScenarioSample],
    codec: TrajectoryCodec,
    model_config: DenoiserConfig,
    config: TrainConfig,
    out_dir: str | Path,
    tag: str = "model",
) -> TrainResult:
    """Minimise the noise-prediction MSE on normalised latents with AdamW.

    Batches are drawn with replacement from a generator seeded by
    ``config.seed``, so (seed, config, data) fixes the resulting checkpoint.
    """
    from .evaluation import evaluate  # deferred: evaluation imports nothing from here

    if codec.d != model_config.latent_dim:
        raise ConfigError(f"codec d={codec.d} != model latent_dim={model_config.latent_dim}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = cosine_schedule(config.T)
    train_split = _prepare(train_samples, codec, model_config, config.goal_mode)
    val_split = _prepare(val_samples, codec, model_config, config.goal_mode)

    model = DenoiserModel(model_config, seed=config.seed)
    opt = AdamW(lr=config.lr, weight_decay=config.weight_decay,
                schedule=CosineLR(config.lr, config.restart_period or config.steps, config.min_lr))
    rng = np.random.default_rng([config.seed, 0])
    val_rng = np.random.default_rng([config.seed, 1])
    n_val = min(config.val_items, len(val_samples))
    val_idx = np.arange(n_val)
    val_t = val_rng.integers(1, schedule.T + 1, size=n_val)
    val_eps = val_rng.standard_normal((n_val, codec.d))
    val_ctx = val_split.ctx.take(val_idx)
    minade_set = val_samples[: config.val_minade_scenarios]

    meta = {"codec_fingerprint": codec.fingerprint(), "goal_mode": config.goal_mode, "tag": tag,
            "train_config": asdict(config), "n_params": model.n_params}
    log.info("training %s: %d parameters, %d train / %d val samples", tag, model.n_params,
             len(train_samples), len(val_samples))

    best_path, final_path = out_dir / f"{tag}_best.json", out_dir / f"{tag}_final.json"
    losses = np.empty(config.steps)
    log_rows: list[dict] = []
    best_val = math.inf
    since_log = 0
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(train_samples), size=config.batch)
        t = rng.integers(1, schedule.T + 1, size=config.batch)
        eps = rng.standard_normal((config.batch, codec.d))
        try:
            loss, grads = loss_for_noise(model, train_split.z0[idx], train_split.ctx.take(idx), t, eps, schedule)
        except TrainingError as exc:
            raise TrainingError(f"step {step}: {exc}; dataset rows {idx.tolist()}") from exc
        lr = optimizer_step(model.params, opt, grads)
        losses[step - 1] = loss
        since_log += 1

        if step % config.eval_interval == 0 or step == config.steps:
            val_loss = validation_loss(model, val_split.z0[val_idx], val_ctx, val_t, val_eps, schedule)
            row = {"step": step, "train_loss": float(losses[step - since_log : step].mean()),
                   "val_loss": val_loss, "lr": lr}
            if config.val_minade:
                rep = evaluate(model, codec, minade_set, K=20, N=10, seed=config.seed, schedule=schedule,
                               goal_mode=config.goal_mode)
                row["val_minade"] = rep.min_ade
            log_rows.append(row)
            since_log = 0
            log.info("%s step %d: train %.5f val %.5f lr %.2e", tag, step, row["train_loss"], val_loss, lr)
            if val_loss <= best_val:
                best_val = val_loss
                model.save(best_path, opt, {**meta, "step": step, "val_loss": val_loss})

    final_val = log_rows[-1]["val_loss"]
    model.save(final_path, opt, {**meta, "step": config.steps, "val_loss": final_val})
    log_path = out_dir / f"{tag}_log.csv"
    columns = ["step", "train_loss", "val_loss", "lr"] + (["val_minade"] if config.val_minade else [])
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in log_rows:
            writer.writerow([row[c] if c == "step" else repr(row[c]) for c in columns])
    return TrainResult(model, opt, losses, log_rows, best_path, final_path, log_path, best_val, final_val, meta)


def train_from_files(train_path, val_path, codec_path, model_config: DenoiserConfig, config: TrainConfig,
                     out_dir, tag: str = "model") -> TrainResult:
    return train(load_dataset(train_path), load_dataset(val_path), TrajectoryCodec.load(codec_path),
                 model_config, config, out_dir, tag)
