"""Two-stage trajectory normalisation and the PCA latent codec.

Path from metres to the diffusion target and back::

    X (H, 2) --isotropic min/max--> X_norm --PCA (+whiten)--> z --per-coord min/max--> z_norm

Every stage is affine, so each has an exact inverse and nothing is clamped.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FitError, ShapeError

CODEC_VERSION = "latentplan.codec/1"
WHITEN_EPS = 1e-12


@dataclass(frozen=True)
class IsotropicStats:
    min_xy: float
    max_xy: float

    def __post_init__(self):
        if not (np.isfinite(self.min_xy) and np.isfinite(self.max_xy)):
            raise FitError("isotropic statistics must be finite")
        if not self.max_xy > self.min_xy:
            raise FitError(f"max_xy ({self.max_xy}) must exceed min_xy ({self.min_xy})")


def fit_isotropic_stats(trajectories: Iterable[np.ndarray]) -> IsotropicStats:
    """One shared (min, max) pair over every x and y coordinate of every trajectory."""
    lo, hi, seen = np.inf, -np.inf, False
    for traj in trajectories:
        traj = np.asarray(traj, dtype=float)
        if traj.size:
            lo, hi, seen = min(lo, traj.min()), max(hi, traj.max()), True
    if not seen:
        raise FitError("cannot fit isotropic statistics on an empty collection")
    if hi == lo:
        raise FitError("all trajectory coordinates are identical (max_xy == min_xy)")
    return IsotropicStats(float(lo), float(hi))


def normalize_traj(X: np.ndarray, stats: IsotropicStats) -> np.ndarray:
    return 2.0 * (np.asarray(X, dtype=float) - stats.min_xy) / (stats.max_xy - stats.min_xy) - 1.0


def denormalize_traj(X_norm: np.ndarray, stats: IsotropicStats) -> np.ndarray:
    return (np.asarray(X_norm, dtype=float) + 1.0) * 0.5 * (stats.max_xy - stats.min_xy) + stats.min_xy


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray  # (2H,)
    components: np.ndarray  # (2H, d), orthonormal columns
    variances: np.ndarray  # (d,), non-increasing
    total_variance: float
    whiten: bool

    @property
    def d(self) -> int:
        return self.components.shape[1]

    @property
    def horizon(self) -> int:
        return self.components.shape[0] // 2

    @property
    def scales(self) -> np.ndarray:
        """Per-coordinate divisor applied by ``project`` (ones when not whitening)."""
        if self.whiten:
            return np.sqrt(self.variances + WHITEN_EPS)
        return np.ones(self.d)

    def explained_variance_ratio(self) -> np.ndarray:
        return self.variances / self.total_variance

    def truncated(self, k: int) -> "PcaBasis":
        return PcaBasis(self.mean, self.components[:, :k], self.variances[:k], self.total_variance, self.whiten)


def fit_pca(data: np.ndarray, d: int, whiten: bool = True) -> PcaBasis:
    """Fit a rank-``d`` PCA basis by SVD of the centred ``(N, 2H)`` data matrix.

    Component signs are fixed so that each column's largest-magnitude entry is
    positive, which makes the basis reproducible across LAPACK builds.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ShapeError(f"expected an (N, 2H) matrix, got shape {data.shape}")
    n, dim = data.shape
    if not 1 <= d <= dim:
        raise FitError(f"latent dimension d={d} must lie in [1, {dim}]")
    if n <= d:
        raise FitError(f"need more samples than components (N={n}, d={d})")
    if not np.all(np.isfinite(data)):
        raise FitError("PCA input contains non-finite values")

    mean = data.mean(axis=0)
    centred = data - mean
    _, sing, vt = np.linalg.svd(centred, full_matrices=False)
    tol = max(n, dim) * np.finfo(float).eps * (sing[0] if sing.size else 0.0)
    deficient = np.flatnonzero(sing[:d] <= tol)
    if sing.size < d or deficient.size:
        index = int(deficient[0]) if deficient.size else sing.size
        raise FitError(f"data rank is below d={d}: component {index} has no variance")

    components = vt[:d].T.copy()
    pivot = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[pivot, np.arange(d)])
    components *= signs
    variances = sing[:d] ** 2 / (n - 1)
    total = float(np.sum(sing**2) / (n - 1))
    return PcaBasis(mean, components, variances, total, bool(whiten))


def _flatten(traj_norm: np.ndarray, basis: PcaBasis) -> np.ndarray:
    x = np.asarray(traj_norm, dtype=float)
    dim = basis.components.shape[0]
    if x.shape[-1] == dim:
        return x
    if x.ndim >= 2 and x.shape[-2:] == (basis.horizon, 2):
        return x.reshape(*x.shape[:-2], dim)
    raise ShapeError(f"trajectory shape {x.shape} does not match a basis with 2H={dim}")


def project(traj_norm: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Latent code(s) of normalised trajectories; accepts ``(..., H, 2)`` or ``(..., 2H)``."""
    flat = _flatten(traj_norm, basis)
    return ((flat - basis.mean) @ basis.components) / basis.scales


def reconstruct(z: np.ndarray, basis: PcaBasis) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.d:
        raise ShapeError(f"latent dimension {z.shape[-1]} != basis dimension {basis.d}")
    flat = (z * basis.scales) @ basis.components.T + basis.mean
    return flat.reshape(*z.shape[:-1], basis.horizon, 2)


def component_weights(traj_norm: np.ndarray, basis: PcaBasis) -> tuple[np.ndarray, np.ndarray]:
    """Component indices and the weight each component receives for one trajectory."""
    return np.arange(basis.d), project(traj_norm, basis)


# ---------------------------------------------------------------------------
# latent min/max stage


@dataclass(frozen=True)
class LatentStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if np.any(~(self.max > self.min)):
            bad = int(np.flatnonzero(~(self.max > self.min))[0])
            raise FitError(f"latent coordinate {bad} has a degenerate range")


def fit_latent_stats(latents: np.ndarray) -> LatentStats:
    latents = np.asarray(latents, dtype=float)
    if latents.ndim != 2 or len(latents) == 0:
        raise FitError(f"expected a non-empty (N, d) latent matrix, got shape {latents.shape}")
    return LatentStats(latents.min(axis=0), latents.max(axis=0))


def normalize_latent(z: np.ndarray, stats: LatentStats) -> np.ndarray:
    return 2.0 * (np.asarray(z, dtype=float) - stats.min) / (stats.max - stats.min) - 1.0


def denormalize_latent(z_norm: np.ndarray, stats: LatentStats) -> np.ndarray:
    return (np.asarray(z_norm, dtype=float) + 1.0) * 0.5 * (stats.max - stats.min) + stats.min


# ---------------------------------------------------------------------------
# the full codec


@dataclass(frozen=True)
class TrajectoryCodec:
    stats: IsotropicStats
    basis: PcaBasis
    latent: LatentStats

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def horizon(self) -> int:
        return self.basis.horizon

    def encode(self, X: np.ndarray) -> np.ndarray:
        """Metres ``(..., H, 2)`` to normalised latents ``(..., d)``."""
        return normalize_latent(project(normalize_traj(X, self.stats), self.basis), self.latent)

    def decode(self, z_norm: np.ndarray) -> np.ndarray:
        """Normalised latents back to metres: latent de-normalisation, PCA inverse, trajectory de-normalisation."""
        z = denormalize_latent(z_norm, self.latent)
        return denormalize_traj(reconstruct(z, self.basis), self.stats)

    def to_json(self) -> dict:
        return {
            "version": CODEC_VERSION,
            "stats": {"min_xy": self.stats.min_xy, "max_xy": self.stats.max_xy},
            "horizon": self.horizon,
            "d": self.d,
            "whiten": self.basis.whiten,
            "mean": self.basis.mean.tolist(),
            "components": self.basis.components.tolist(),
            "variances": self.basis.variances.tolist(),
            "total_variance": self.basis.total_variance,
            "latent_min": self.latent.min.tolist(),
            "latent_max": self.latent.max.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrajectoryCodec":
        if obj.get("version") != CODEC_VERSION:
            raise DataError(f"unsupported codec version {obj.get('version')!r}")
        basis = PcaBasis(
            np.asarray(obj["mean"], dtype=float),
            np.asarray(obj["components"], dtype=float),
            np.asarray(obj["variances"], dtype=float),
            float(obj["total_variance"]),
            bool(obj["whiten"]),
        )
        stats = IsotropicStats(float(obj["stats"]["min_xy"]), float(obj["stats"]["max_xy"]))
        latent = LatentStats(np.asarray(obj["latent_min"], dtype=float), np.asarray(obj["latent_max"], dtype=float))
        return cls(stats, basis, latent)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryCodec":
        path = Path(path)
        if not path.exists():
            raise DataError(f"codec file not found: {path}")
        try:
            return cls.from_json(json.loads(path.read_text(encoding="utf-8")))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: cannot parse codec ({exc})") from exc


def fit_codec(futures: np.ndarray, d: int = 16, whiten: bool = True) -> TrajectoryCodec:
    """Fit all three stages on an ``(N, H, 2)`` stack of ground-truth futures."""
    futures = np.asarray(futures, dtype=float)
    stats = fit_isotropic_stats(futures)
    X_norm = normalize_traj(futures, stats).reshape(len(futures), -1)
    basis = fit_pca(X_norm, d, whiten)
    latent = fit_latent_stats(project(X_norm, basis))
    return TrajectoryCodec(stats, basis, latent)


# ---------------------------------------------------------------------------
# reports


def variance_report(
    basis: PcaBasis, eval_norm: np.ndarray, stats: IsotropicStats, ks: Sequence[int] | None = None
) -> list[dict]:
    """Cumulative explained variance and mean per-waypoint error (metres) for each k."""
    flat = _flatten(eval_norm, basis).reshape(-1, basis.components.shape[0])
    ks = list(ks) if ks is not None else list(range(1, basis.d + 1))
    if any(not 1 <= k <= basis.d for k in ks):
        raise FitError(f"report ranks must lie in [1, {basis.d}]")
    cum = np.cumsum(basis.variances) / basis.total_variance
    centred = flat - basis.mean
    truth = denormalize_traj(flat, stats).reshape(len(flat), -1, 2)
    rows = []
    for k in ks:
        W = basis.components[:, :k]
        approx = centred @ W @ W.T + basis.mean
        err = np.linalg.norm(denormalize_traj(approx, stats).reshape(len(flat), -1, 2) - truth, axis=-1)
        rows.append({"k": k, "cum_variance_ratio": float(cum[k - 1]), "mean_waypoint_error_m": float(err.mean())})
    return rows


def write_variance_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["k", "cum_variance_ratio", "mean_waypoint_error_m"])
        writer.writeheader()
        for row in rows:
            writer.writerow({"k": row["k"], "cum_variance_ratio": repr(row["cum_variance_ratio"]),
                             "mean_waypoint_error_m": repr(row["mean_waypoint_error_m"])})
    return path
