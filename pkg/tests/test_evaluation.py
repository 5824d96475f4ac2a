import csv
import math

import numpy as np
import pytest

from conftest import tiny_config
from latentplan.codec import denormalize_traj, normalize_traj
from latentplan.denoiser import ContextSpec, DenoiserModel, make_context
from latentplan.diffusion import cosine_schedule
from latentplan.errors import ConfigError, DataError, ShapeError
from latentplan.evaluation import (
    OracleDenoiser,
    constant_velocity_baseline,
    evaluate,
    evaluate_constant_velocity,
    generate_plans,
    goal_ablation,
    min_ade,
    min_fde,
    miss_rate,
    sampler_sweep,
    write_ablation_csv,
    write_scenario_csv,
    write_sweep_csv,
)
from latentplan.scenegen import TURN_KINDS, GeneratorConfig, curated_sample

SCHEDULE = cosine_schedule(500)


def loop_min_ade(samples, gt):
    best = math.inf
    for s in samples:
        total = 0.0
        for p, q in zip(s, gt):
            total += math.hypot(p[0] - q[0], p[1] - q[1])
        best = min(best, total / len(gt))
    return best


def loop_min_fde(samples, gt):
    return min(math.hypot(s[-1][0] - gt[-1][0], s[-1][1] - gt[-1][1]) for s in samples)


# -- metrics ------------------------------------------------------------------


def test_min_ade_examples():
    gt = np.cumsum(np.ones((10, 2)), axis=0)
    assert min_ade(gt[None], gt) == 0.0
    samples = np.stack([gt + [3.0, 4.0], gt + [6.0, 8.0]])
    assert min_ade(samples, gt) == pytest.approx(5.0, abs=1e-12)


def test_min_fde_examples():
    gt = np.zeros((8, 2))
    other = np.ones((8, 2))
    exact = other.copy()
    exact[-1] = 0.0
    assert min_fde(np.stack([other, exact]), gt) == 0.0
    single = np.zeros((1, 8, 2))
    single[0, -1] = (1.5, 2.0)
    assert min_fde(single, gt) == pytest.approx(2.5)


def test_min_fde_uses_its_own_winner():
    gt = np.zeros((10, 2))
    ade_winner = np.full((10, 2), 0.1)
    ade_winner[-1] = (3.0, 0.0)
    fde_winner = np.full((10, 2), 1.0)
    fde_winner[-1] = (0.5, 0.0)
    samples = np.stack([ade_winner, fde_winner])
    assert np.argmin(np.linalg.norm(samples - gt, axis=-1).mean(axis=1)) == 0
    assert min_fde(samples, gt) == pytest.approx(0.5)


def test_metric_shape_errors():
    with pytest.raises(ShapeError):
        min_ade(np.zeros((2, 5, 2)), np.zeros((6, 2)))
    with pytest.raises(ShapeError):
        min_fde(np.zeros((0, 5, 2)), np.zeros((5, 2)))


def test_miss_rate_examples():
    assert miss_rate([0.0, 0.0]) == 0.0
    assert miss_rate([2.0]) == 0.0
    assert miss_rate([np.nextafter(2.0, 3.0)]) == 1.0
    assert miss_rate([1.9, 2.1, 3.0, 0.5]) == 0.5
    with pytest.raises(ValueError):
        miss_rate([])


def test_metrics_match_double_loop():
    rng = np.random.default_rng(0)
    fdes = []
    for _ in range(1000):
        K, H = rng.integers(1, 8), rng.integers(2, 12)
        gt = rng.normal(size=(H, 2)) * 5
        samples = gt + rng.normal(size=(K, H, 2)) * rng.uniform(0.1, 4)
        assert abs(min_ade(samples, gt) - loop_min_ade(samples, gt)) <= 1e-12
        fde = min_fde(samples, gt)
        assert abs(fde - loop_min_fde(samples, gt)) <= 1e-12
        fdes.append(fde)
    assert miss_rate(fdes) == sum(1 for f in fdes if f > 2.0) / len(fdes)


def test_adding_samples_never_hurts():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(20, 2))
    samples = gt + rng.normal(size=(6, 20, 2))
    for k in range(1, 6):
        assert min_ade(samples[: k + 1], gt) <= min_ade(samples[:k], gt)
        assert min_fde(samples[: k + 1], gt) <= min_fde(samples[:k], gt)


# -- constant velocity --------------------------------------------------------


def test_cv_stationary():
    np.testing.assert_array_equal(constant_velocity_baseline(np.zeros((11, 6)), 80), np.zeros((80, 2)))


def test_cv_linear_extrapolation():
    hist = np.zeros((11, 6))
    hist[:, 0] = np.arange(-10, 1, dtype=float)
    out = constant_velocity_baseline(hist, 80)
    np.testing.assert_allclose(out[:, 0], np.arange(1, 81), atol=1e-9)
    np.testing.assert_allclose(out[:, 1], 0.0, atol=1e-9)


def test_cv_degenerate_history():
    with pytest.raises(ConfigError):
        constant_velocity_baseline(np.zeros((1, 6)))


def test_cv_straight_versus_turns():
    params = GeneratorConfig()
    straights = [curated_sample(0, "val", i, {"straight": 1.0}, params) for i in range(40)]
    turns = [curated_sample(0, "val", i, {"left_turn": 0.5, "right_turn": 0.5}, params) for i in range(40)]
    assert evaluate_constant_velocity(straights).min_ade < 0.5
    assert evaluate_constant_velocity(turns).min_ade > 1.0


# -- sampling pipeline with the oracle denoiser -------------------------------


@pytest.fixture(scope="module")
def oracle(small_samples, small_codec):
    return OracleDenoiser(small_codec, small_samples, SCHEDULE)


def test_oracle_reaches_codec_floor(oracle, small_samples, small_codec):
    rep = evaluate(oracle, small_codec, small_samples[:60], K=3, N=20, seed=0, schedule=SCHEDULE)
    truncation = np.mean([
        np.linalg.norm(small_codec.decode(small_codec.encode(s.future)) - s.future, axis=-1).mean()
        for s in small_samples[:60]
    ])
    assert rep.min_ade < 0.05
    assert rep.min_ade <= truncation + 1e-6


def test_ground_truth_latent_decodes_within_truncation(small_samples, small_codec):
    s = small_samples[5]
    z = small_codec.encode(s.future)
    flat = normalize_traj(s.future, small_codec.stats).ravel()
    W, mu = small_codec.basis.components, small_codec.basis.mean
    truncated = denormalize_traj((flat - mu) @ W @ W.T + mu, small_codec.stats).reshape(-1, 2)
    np.testing.assert_allclose(small_codec.decode(z), truncated, atol=1e-8)


def test_report_invariant_to_order(oracle, small_samples, small_codec):
    subset = small_samples[:20]
    a = evaluate(oracle, small_codec, subset, 2, 10, 0, SCHEDULE)
    b = evaluate(oracle, small_codec, subset[::-1], 2, 10, 0, SCHEDULE)
    assert a.summary() == b.summary()


# -- trained-model-shaped pipeline with a tiny network ------------------------


@pytest.fixture(scope="module")
def tiny_model():
    return DenoiserModel(tiny_config(latent_dim=16, context=ContextSpec()), seed=2)


def test_generate_plans_deterministic(tiny_model, small_codec, small_samples):
    a = generate_plans(tiny_model, small_codec, small_samples[0], 20, 10, 7, SCHEDULE)
    b = generate_plans(tiny_model, small_codec, small_samples[0], 20, 10, 7, SCHEDULE)
    assert a.shape == (20, 80, 2)
    np.testing.assert_allclose(a, b, atol=1e-9)
    ctx = make_context(small_samples[:2], tiny_model.config.context)
    with pytest.raises(ShapeError):
        generate_plans(tiny_model, small_codec, ctx, 2, 5, 0, SCHEDULE)


def test_subsetting_keeps_scenario_samples(tiny_model, small_codec, small_val):
    full = evaluate(tiny_model, small_codec, small_val[:12], 4, 5, 3, SCHEDULE)
    part = evaluate(tiny_model, small_codec, small_val[4:9], 4, 5, 3, SCHEDULE)
    by_id = {r["scenario_id"]: r for r in full.rows}
    for row in part.rows:
        assert row == by_id[row["scenario_id"]]


def test_scenario_csv_consistency(tmp_path, tiny_model, small_codec, small_val):
    rep = evaluate(tiny_model, small_codec, small_val[:10], 3, 5, 0, SCHEDULE)
    path = write_scenario_csv(rep, tmp_path / "scen.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["scenario_id", "kind", "min_ade", "min_fde", "miss"]
    assert sum(int(r["miss"]) for r in rows) / len(rows) == rep.miss_rate
    assert miss_rate([float(r["min_fde"]) for r in rows]) == rep.miss_rate
    assert math.fsum(float(r["min_ade"]) for r in sorted(rows, key=lambda r: int(r["scenario_id"]))) / 10 == rep.min_ade


def test_evaluate_empty(tiny_model, small_codec):
    with pytest.raises(DataError):
        evaluate(tiny_model, small_codec, [], 2, 5, 0, SCHEDULE)


def test_sweep(tmp_path, tiny_model, small_codec, small_val):
    rows = sampler_sweep(tiny_model, small_codec, small_val[:6], [10, 20, 50], 2, 0, SCHEDULE)
    assert [r["N"] for r in rows] == [10, 20, 50]
    direct = evaluate(tiny_model, small_codec, small_val[:6], 2, 20, 0, SCHEDULE)
    assert rows[1]["min_ade"] == direct.min_ade
    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    assert path.read_text().splitlines()[0] == "N,min_ade,min_fde,miss_rate"
    with pytest.raises(ConfigError):
        sampler_sweep(tiny_model, small_codec, small_val[:2], [0, 10], 2, 0, SCHEDULE)


def test_goal_ablation_rows(tmp_path, tiny_model, small_codec, small_val):
    endpoint = DenoiserModel(tiny_model.config, seed=9)
    turns = [s for s in small_val if s.kind in TURN_KINDS][:5]
    rows = goal_ablation(tiny_model, endpoint, small_codec, turns, 2, 5, 0, SCHEDULE)
    assert [r["goal_mode"] for r in rows] == ["sparse_route", "endpoint", "no_goal"]
    no_goal = evaluate(tiny_model, small_codec, [s.with_goal("none") for s in turns], 2, 5, 0, SCHEDULE)
    assert rows[2]["min_ade"] == no_goal.min_ade and rows[2]["min_fde"] == no_goal.min_fde
    path = write_ablation_csv(rows, tmp_path / "abl.csv")
    assert path.read_text().splitlines()[0] == "goal_mode,min_ade,min_fde,miss_rate"


def test_goal_ablation_codec_mismatch(tiny_model, small_codec, small_val):
    with pytest.raises(ConfigError):
        goal_ablation(tiny_model, tiny_model, small_codec, small_val[:2], 2, 5, 0, SCHEDULE,
                      sparse_meta={"codec_fingerprint": "0000"})
