"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CosineLR:
    """Cosine decay from ``base_lr`` to ``min_lr`` over ``period`` steps, restarting every period."""

    base_lr: float
    period: int
    min_lr: float = 1e-7

    def __call__(self, step: int) -> float:
        if self.period <= 0:
            return self.base_lr
        u = (step % self.period) / self.period
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * u))


@dataclass
class AdamW:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: CosineLR | None = None
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return self.schedule(self.step) if self.schedule is not None else self.lr

    def to_json(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "betas": [self.beta1, self.beta2],
            "eps": self.eps,
            "step": self.step,
            "schedule": None if self.schedule is None else
            {"base_lr": self.schedule.base_lr, "period": self.schedule.period, "min_lr": self.schedule.min_lr},
            "m": {k: a.tolist() for k, a in self.m.items()},
            "v": {k: a.tolist() for k, a in self.v.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AdamW":
        sched = doc.get("schedule")
        return cls(
            lr=doc["lr"],
            weight_decay=doc["weight_decay"],
            beta1=doc["betas"][0],
            beta2=doc["betas"][1],
            eps=doc["eps"],
            schedule=CosineLR(**sched) if sched else None,
            step=doc["step"],
            m={k: np.asarray(a, dtype=float) for k, a in doc["m"].items()},
            v={k: np.asarray(a, dtype=float) for k, a in doc["v"].items()},
        )


def optimizer_step(params: dict[str, np.ndarray], state: AdamW, grads: dict[str, np.ndarray]) -> float:
    """Apply one AdamW update in place; returns the learning rate used."""
    lr = state.current_lr()
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return lr
