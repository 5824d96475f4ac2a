"""Conditional noise predictor: scene encoder plus Mish MLP head, with hand-written backprop."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..diffusion import NoiseSchedule, q_sample
from ..errors import ConfigError, DataError, ShapeError, TrainingError
from ..scenegen import AGENT_FEATURES, POLYLINE_POINTS, SPARSE_ROUTE_POINTS
from . import layers as L
from .context import ContextBatch, ContextSpec

CHECKPOINT_VERSION = "latentplan.checkpoint/1"


@dataclass(frozen=True)
class DenoiserConfig:
    latent_dim: int = 16
    time_dim: int = 32
    scene_dim: int = 64
    hidden: int = 128
    hidden_layers: int = 3
    fusion_layers: int = 2
    heads: int = 4
    ff_dim: int = 256
    ego_encoder: str = "cnn"
    ego_channels: int = 32
    ego_kernel: int = 3
    zero_init_output: bool = True
    context: ContextSpec = field(default_factory=ContextSpec)

    def __post_init__(self):
        if self.scene_dim % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide scene_dim {self.scene_dim}")
        if self.time_dim % 2:
            raise ConfigError(f"time_dim must be even, got {self.time_dim}")
        if self.ego_encoder not in ("cnn", "mlp"):
            raise ConfigError(f"ego_encoder must be 'cnn' or 'mlp', got {self.ego_encoder!r}")
        if self.ego_kernel % 2 == 0:
            raise ConfigError("ego_kernel must be odd")

    @property
    def head_input(self) -> int:
        return self.latent_dim + self.time_dim + self.scene_dim

    @classmethod
    def desk(cls, **overrides) -> "DenoiserConfig":
        return replace(cls(), **overrides)

    @classmethod
    def paper(cls, **overrides) -> "DenoiserConfig":
        base = cls(time_dim=128, scene_dim=256, hidden=512, heads=8, ff_dim=1024, ego_channels=64)
        return replace(base, **overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["context"] = ContextSpec(**d.get("context", {}))
        return cls(**d)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: DenoiserConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    c, ctx = config, config.context
    D = c.scene_dim
    p: dict[str, np.ndarray] = {}

    def dense(name: str, n_in: int, n_out: int):
        p[f"{name}.W"] = _uniform(rng, n_in, (n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)

    if c.ego_encoder == "cnn":
        k, C = c.ego_kernel, c.ego_channels
        p["ego.conv1.W"] = _uniform(rng, k * ctx.ego_features, (k, ctx.ego_features, C))
        p["ego.conv1.b"] = np.zeros(C)
        p["ego.conv2.W"] = _uniform(rng, k * C, (k, C, C))
        p["ego.conv2.b"] = np.zeros(C)
        dense("ego.proj", ctx.history * C, D)
    else:
        dense("ego.fc1", ctx.history * ctx.ego_features, D)
        dense("ego.fc2", D, D)
    for name, n_in in (("agent", AGENT_FEATURES), ("map", POLYLINE_POINTS * 2), ("goal", SPARSE_ROUTE_POINTS * 2)):
        dense(f"{name}.fc1", n_in, D)
        dense(f"{name}.fc2", D, D)
    p["cls"] = rng.normal(0.0, 0.02, size=D)
    for i in range(c.fusion_layers):
        pre = f"fusion.{i}"
        dense(f"{pre}.attn.qkv", D, 3 * D)
        dense(f"{pre}.attn.out", D, D)
        p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"] = np.ones(D), np.zeros(D)
        dense(f"{pre}.ff1", D, c.ff_dim)
        dense(f"{pre}.ff2", c.ff_dim, D)
        p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"] = np.ones(D), np.zeros(D)
    width = c.head_input
    for j in range(c.hidden_layers):
        dense(f"head.{j}", width, c.hidden)
        width = c.hidden
    dense("head.out", width, c.latent_dim)
    if c.zero_init_output:
        p["head.out.W"][:] = 0.0
    return p


class DenoiserModel:
    """Parameters plus forward/backward passes of eps_theta(z_t, t, context)."""

    def __init__(self, config: DenoiserConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        expected = init_params(config, 0)
        for name, arr in expected.items():
            if name not in self.params or self.params[name].shape != arr.shape:
                raise ShapeError(f"parameter {name!r} missing or mis-shaped for this config")

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    # -- entity encoders ----------------------------------------------------

    def _mlp2(self, name: str, x: np.ndarray):
        p = self.params
        h1, c1 = L.linear(x, p[f"{name}.fc1.W"], p[f"{name}.fc1.b"])
        a1, ca = L.mish(h1)
        out, c2 = L.linear(a1, p[f"{name}.fc2.W"], p[f"{name}.fc2.b"])
        return out, (c1, ca, c2)

    def _mlp2_backward(self, name: str, dout: np.ndarray, cache, grads: dict):
        p = self.params
        c1, ca, c2 = cache
        da1, grads[f"{name}.fc2.W"], grads[f"{name}.fc2.b"] = L.linear_backward(dout, c2, p[f"{name}.fc2.W"])
        dh1 = L.mish_backward(da1, ca)
        dx, grads[f"{name}.fc1.W"], grads[f"{name}.fc1.b"] = L.linear_backward(dh1, c1, p[f"{name}.fc1.W"])
        return dx

    def _ego(self, ego: np.ndarray):
        p = self.params
        B = len(ego)
        if self.config.ego_encoder == "mlp":
            out, cache = self._mlp2("ego", ego.reshape(B, -1))
            return out, cache
        y1, c1 = L.conv1d(ego, p["ego.conv1.W"], p["ego.conv1.b"])
        a1, ca1 = L.mish(y1)
        y2, c2 = L.conv1d(a1, p["ego.conv2.W"], p["ego.conv2.b"])
        a2, ca2 = L.mish(y2)
        out, cp = L.linear(a2.reshape(B, -1), p["ego.proj.W"], p["ego.proj.b"])
        return out, (c1, ca1, c2, ca2, cp, a2.shape)

    def _ego_backward(self, dout: np.ndarray, cache, grads: dict):
        p = self.params
        if self.config.ego_encoder == "mlp":
            self._mlp2_backward("ego", dout, cache, grads)
            return
        c1, ca1, c2, ca2, cp, shape = cache
        da2, grads["ego.proj.W"], grads["ego.proj.b"] = L.linear_backward(dout, cp, p["ego.proj.W"])
        dy2 = L.mish_backward(da2.reshape(shape), ca2)
        da1, grads["ego.conv2.W"], grads["ego.conv2.b"] = L.conv1d_backward(dy2, c2, p["ego.conv2.W"])
        dy1 = L.mish_backward(da1, ca1)
        _, grads["ego.conv1.W"], grads["ego.conv1.b"] = L.conv1d_backward(dy1, c1, p["ego.conv1.W"])

    # -- scene fusion -------------------------------------------------------

    def _encode(self, ctx: ContextBatch):
        p, c = self.params, self.config
        B, D = len(ctx), c.scene_dim
        ego_tok, ce = self._ego(ctx.ego)
        agent_tok, cag = self._mlp2("agent", ctx.agents)
        map_tok, cm = self._mlp2("map", ctx.map)
        goal_raw, cg = self._mlp2("goal", ctx.goal)
        goal_tok = goal_raw * ctx.goal_on[:, None]
        tokens = np.concatenate(
            [np.broadcast_to(p["cls"], (B, 1, D)), ego_tok[:, None], agent_tok, map_tok, goal_tok[:, None]], axis=1
        )
        ones = np.ones((B, 1), dtype=bool)
        mask = np.concatenate([ones, ones, ctx.agent_mask, ctx.map_mask, ones], axis=1)

        h, layer_caches = tokens, []
        for i in range(c.fusion_layers):
            pre = f"fusion.{i}"
            # the last layer only needs the aggregation position as a query
            nq = 1 if i == c.fusion_layers - 1 else None
            a, ca = L.attention(h, mask, p[f"{pre}.attn.qkv.W"], p[f"{pre}.attn.qkv.b"],
                                p[f"{pre}.attn.out.W"], p[f"{pre}.attn.out.b"], c.heads, nq)
            h1, cl1 = L.layer_norm(h[:, : a.shape[1]] + a, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            f1, cf1 = L.linear(h1, p[f"{pre}.ff1.W"], p[f"{pre}.ff1.b"])
            m, cmish = L.mish(f1)
            f2, cf2 = L.linear(m, p[f"{pre}.ff2.W"], p[f"{pre}.ff2.b"])
            h2, cl2 = L.layer_norm(h1 + f2, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            layer_caches.append((ca, cl1, cf1, cmish, cf2, cl2, h.shape))
            h = h2
        n_agents, n_map = ctx.agents.shape[1], ctx.map.shape[1]
        return h[:, 0], (ce, cag, cm, cg, ctx.goal_on, layer_caches, n_agents, n_map)

    def _encode_backward(self, dz_c: np.ndarray, cache, grads: dict):
        p, c = self.params, self.config
        ce, cag, cm, cg, goal_on, layer_caches, n_agents, n_map = cache
        dh = dz_c[:, None, :]
        for i in reversed(range(c.fusion_layers)):
            pre = f"fusion.{i}"
            ca, cl1, cf1, cmish, cf2, cl2, in_shape = layer_caches[i]
            dr2, grads[f"{pre}.ln2.g"], grads[f"{pre}.ln2.b"] = L.layer_norm_backward(dh, cl2, p[f"{pre}.ln2.g"])
            dm, grads[f"{pre}.ff2.W"], grads[f"{pre}.ff2.b"] = L.linear_backward(dr2, cf2, p[f"{pre}.ff2.W"])
            df1 = L.mish_backward(dm, cmish)
            dh1, grads[f"{pre}.ff1.W"], grads[f"{pre}.ff1.b"] = L.linear_backward(df1, cf1, p[f"{pre}.ff1.W"])
            dh1 = dh1 + dr2
            dr1, grads[f"{pre}.ln1.g"], grads[f"{pre}.ln1.b"] = L.layer_norm_backward(dh1, cl1, p[f"{pre}.ln1.g"])
            dx, grads[f"{pre}.attn.qkv.W"], grads[f"{pre}.attn.qkv.b"], grads[f"{pre}.attn.out.W"], grads[
                f"{pre}.attn.out.b"
            ] = L.attention_backward(dr1, ca, p[f"{pre}.attn.qkv.W"], p[f"{pre}.attn.out.W"], c.heads)
            dx[:, : dr1.shape[1]] += dr1
            dh = dx
        grads["cls"] = dh[:, 0].sum(axis=0)
        self._ego_backward(dh[:, 1], ce, grads)
        self._mlp2_backward("agent", dh[:, 2 : 2 + n_agents], cag, grads)
        self._mlp2_backward("map", dh[:, 2 + n_agents : 2 + n_agents + n_map], cm, grads)
        self._mlp2_backward("goal", dh[:, -1] * goal_on[:, None], cg, grads)

    # -- MLP head -----------------------------------------------------------

    def _head(self, z_t: np.ndarray, t, z_c: np.ndarray):
        p, c = self.params, self.config
        if z_t.shape[-1] != c.latent_dim or z_c.shape[-1] != c.scene_dim or len(z_t) != len(z_c):
            raise ShapeError(f"head inputs z_t {z_t.shape} / z_c {z_c.shape} do not match the model config")
        t_emb = L.time_embedding(np.broadcast_to(np.asarray(t), (len(z_t),)), c.time_dim)
        h = np.concatenate([z_t, t_emb, z_c], axis=-1)
        caches = []
        for j in range(c.hidden_layers):
            y, cl = L.linear(h, p[f"head.{j}.W"], p[f"head.{j}.b"])
            h, cmish = L.mish(y)
            caches.append((cl, cmish))
        out, co = L.linear(h, p["head.out.W"], p["head.out.b"])
        return out, (caches, co)

    def _head_backward(self, dout: np.ndarray, cache, grads: dict) -> np.ndarray:
        p, c = self.params, self.config
        caches, co = cache
        dh, grads["head.out.W"], grads["head.out.b"] = L.linear_backward(dout, co, p["head.out.W"])
        for j in reversed(range(c.hidden_layers)):
            cl, cmish = caches[j]
            dy = L.mish_backward(dh, cmish)
            dh, grads[f"head.{j}.W"], grads[f"head.{j}.b"] = L.linear_backward(dy, cl, p[f"head.{j}.W"])
        return dh[:, c.latent_dim + c.time_dim :]

    # -- public passes ------------------------------------------------------

    def encode_scene(self, ctx: ContextBatch) -> np.ndarray:
        return self._encode(ctx)[0]

    def denoise(self, z_t: np.ndarray, t, z_c: np.ndarray) -> np.ndarray:
        return self._head(np.asarray(z_t, dtype=float), t, z_c)[0]

    def forward(self, z_t: np.ndarray, t, ctx: ContextBatch):
        z_c, ce = self._encode(ctx)
        eps, ch = self._head(z_t, t, z_c)
        return eps, (ce, ch)

    def backward(self, d_eps: np.ndarray, cache) -> dict[str, np.ndarray]:
        ce, ch = cache
        grads: dict[str, np.ndarray] = {}
        dz_c = self._head_backward(d_eps, ch, grads)
        self._encode_backward(dz_c, ce, grads)
        return grads

    # -- persistence --------------------------------------------------------

    def to_json(self, optimizer=None, meta: dict | None = None) -> dict:
        doc = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "params": {k: v.tolist() for k, v in self.params.items()},
            "meta": meta or {},
        }
        if optimizer is not None:
            doc["optimizer"] = optimizer.to_json()
        return doc

    def save(self, path: str | Path, optimizer=None, meta: dict | None = None) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(optimizer, meta)), encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, doc: dict) -> "DenoiserModel":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
        config = DenoiserConfig.from_dict(doc["config"])
        params = {k: np.asarray(v, dtype=float) for k, v in doc["params"].items()}
        return cls(config, params)


def load_checkpoint(path: str | Path) -> tuple[DenoiserModel, dict, dict | None]:
    """Model, metadata and (if saved) raw optimizer state from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return DenoiserModel.from_json(doc), doc.get("meta", {}), doc.get("optimizer")
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: cannot parse checkpoint ({exc})") from exc


# ---------------------------------------------------------------------------
# module-level API


def encode_scene(model: DenoiserModel, context: ContextBatch) -> np.ndarray:
    return model.encode_scene(context)


def denoise(model: DenoiserModel, z_t: np.ndarray, t, z_c: np.ndarray) -> np.ndarray:
    return model.denoise(z_t, t, z_c)


def loss_for_noise(
    model: DenoiserModel, z0: np.ndarray, context: ContextBatch, t: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule
) -> tuple[float, dict[str, np.ndarray]]:
    """Noise-prediction MSE for explicit (t, eps) draws, with gradients for every parameter."""
    z_t = q_sample(z0, t, eps, schedule)
    eps_hat, cache = model.forward(z_t, t, context)
    err = eps_hat - eps
    per_item = (err * err).mean(axis=1)
    if not np.all(np.isfinite(per_item)):
        bad = int(np.flatnonzero(~np.isfinite(per_item))[0])
        raise TrainingError(f"non-finite loss for batch item {bad} (t={int(np.asarray(t).ravel()[bad])})")
    loss = float(per_item.mean())
    grads = model.backward(2.0 * err / err.size, cache)
    return loss, grads


def loss_and_gradients(
    model: DenoiserModel, z0: np.ndarray, context: ContextBatch, schedule: NoiseSchedule, rng: np.random.Generator
) -> tuple[float, dict[str, np.ndarray]]:
    """Draw t ~ U{1..T} and eps ~ N(0, I) per item, then evaluate the noise-prediction loss."""
    z0 = np.asarray(z0, dtype=float)
    if len(z0) == 0:
        raise ConfigError("empty training batch")
    t = rng.integers(1, schedule.T + 1, size=len(z0))
    eps = rng.standard_normal(z0.shape)
    return loss_for_noise(model, z0, context, t, eps, schedule)
