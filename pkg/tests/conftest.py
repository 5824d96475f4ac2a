import numpy as np
import pytest

from latentplan.codec import fit_codec
from latentplan.denoiser import ContextBatch, ContextSpec, DenoiserConfig
from latentplan.scenegen import DEFAULT_MIX, GeneratorConfig, curated_sample

TINY_SPEC = ContextSpec(max_agents=3, max_polylines=2)


def tiny_config(**overrides) -> DenoiserConfig:
    base = dict(latent_dim=4, time_dim=4, scene_dim=8, hidden=6, hidden_layers=2, fusion_layers=2, heads=2,
                ff_dim=6, ego_channels=3, zero_init_output=False, context=TINY_SPEC)
    base.update(overrides)
    return DenoiserConfig(**base)


def random_context(rng, B, spec=TINY_SPEC, goal_on=None) -> ContextBatch:
    agent_mask = rng.random((B, spec.max_agents)) < 0.7
    agent_mask[:, 0] = True
    map_mask = rng.random((B, spec.max_polylines)) < 0.7
    map_mask[:, 0] = True
    if goal_on is None:
        goal_on = (rng.random(B) < 0.7).astype(float)
    return ContextBatch(
        ego=rng.normal(size=(B, spec.history, spec.ego_features)),
        agents=rng.normal(size=(B, spec.max_agents, 11)) * agent_mask[..., None],
        agent_mask=agent_mask,
        map=rng.normal(size=(B, spec.max_polylines, 20)) * map_mask[..., None],
        map_mask=map_mask,
        goal=rng.normal(size=(B, 10)),
        goal_on=np.asarray(goal_on, dtype=float),
        ids=np.arange(B),
    )


def make_samples(n, split="train", seed=0):
    params = GeneratorConfig()
    return [curated_sample(seed, split, i, DEFAULT_MIX, params) for i in range(n)]


@pytest.fixture(scope="session")
def small_samples():
    return make_samples(300)


@pytest.fixture(scope="session")
def small_val():
    return make_samples(40, split="val")


@pytest.fixture(scope="session")
def small_codec(small_samples):
    return fit_codec(np.stack([s.future for s in small_samples]), d=16)
