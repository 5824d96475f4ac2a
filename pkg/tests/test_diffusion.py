import math
from fractions import Fraction

import numpy as np
import pytest

from latentplan.diffusion import (
    NoiseSchedule,
    chain_noise,
    clipped_noise,
    cosine_schedule,
    ddim_loop,
    ddim_sample,
    ddim_step,
    predict_z0,
    q_sample,
    timestep_subsequence,
)
from latentplan.errors import ConfigError, ShapeError


def toy_schedule(values):
    return NoiseSchedule(len(values) - 1, np.asarray(values, dtype=float))


# -- schedule -----------------------------------------------------------------


@pytest.mark.parametrize("T", [10, 100, 500])
def test_cosine_schedule_invariants(T):
    s = cosine_schedule(T)
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all(s.alpha_bar > 0)
    assert np.all((s.betas > 0) & (s.betas <= 0.999 + 1e-15))


def test_cosine_schedule_closed_form():
    s = cosine_schedule(500, 0.008)
    f = lambda t: math.cos((t / 500 + 0.008) / 1.008 * math.pi / 2) ** 2
    for t in (1, 50, 250, 400):
        assert s.alpha_bar[t] == pytest.approx(f(t) / f(0), rel=1e-12)
    assert s.alpha_bar[500] < 1e-3
    # the final raw beta is 1 and gets clipped
    assert s.betas[-1] == pytest.approx(0.999)


def test_cosine_schedule_errors():
    with pytest.raises(ConfigError):
        cosine_schedule(0)
    with pytest.raises(ConfigError):
        cosine_schedule(10, s=0.0)


# -- forward process ----------------------------------------------------------


def test_q_sample_closed_forms():
    z0 = np.array([1.0, -2.0, 4.0])
    eps = np.array([0.3, 0.1, -0.7])
    s = toy_schedule([1.0, 0.25, 0.1])
    np.testing.assert_array_equal(q_sample(z0, 0, eps, s), z0)
    np.testing.assert_allclose(q_sample(z0, 1, np.zeros(3), s), 0.5 * z0)


def test_q_sample_batched_timesteps():
    s = cosine_schedule(50)
    rng = np.random.default_rng(0)
    z0, eps = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    t = np.array([1, 10, 30, 50])
    batched = q_sample(z0, t, eps, s)
    for i in range(4):
        np.testing.assert_allclose(batched[i], q_sample(z0[i], int(t[i]), eps[i], s), atol=1e-15)


def test_q_sample_errors():
    s = cosine_schedule(10)
    with pytest.raises(ConfigError):
        q_sample(np.zeros(2), 11, np.zeros(2), s)
    with pytest.raises(ShapeError):
        q_sample(np.zeros(2), 1, np.zeros(3), s)


def test_q_sample_monte_carlo_moments():
    s = cosine_schedule(500)
    t, n = 200, 100_000
    z0 = np.array([0.8, -0.3, 0.0, 1.5])
    eps = np.random.default_rng(1).standard_normal((n, 4))
    z = q_sample(np.broadcast_to(z0, (n, 4)), t, eps, s)
    ab = s.alpha_bar[t]
    var = 1.0 - ab
    se_mean = math.sqrt(var / n)
    se_var = var * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(z.mean(axis=0) - math.sqrt(ab) * z0) < 3 * se_mean)
    assert np.all(np.abs(z.var(axis=0, ddof=1) - var) < 3 * se_var)


@pytest.mark.parametrize("t", [1, 17, 250, 499, 500])
def test_predict_z0_inverts_q_sample(t):
    s = cosine_schedule(500)
    rng = np.random.default_rng(t)
    z0, eps = rng.uniform(-1, 1, 16), rng.standard_normal(16)
    np.testing.assert_allclose(predict_z0(q_sample(z0, t, eps, s), eps, t, s), z0, atol=1e-9)


def test_predict_z0_zero_noise():
    s = cosine_schedule(100)
    z = np.array([0.2, -0.4])
    np.testing.assert_allclose(predict_z0(z, np.zeros(2), 40, s), z / math.sqrt(s.alpha_bar[40]))


def test_predict_z0_matches_linear_solve():
    # q_sample is affine in z0: recover its matrix column by column and solve
    s = cosine_schedule(500)
    rng = np.random.default_rng(2)
    d, t = 5, 123
    eps, z_t = rng.standard_normal(d), rng.standard_normal(d)
    offset = q_sample(np.zeros(d), t, eps, s)
    A = np.stack([q_sample(e, t, eps, s) - offset for e in np.eye(d)], axis=1)
    np.testing.assert_allclose(predict_z0(z_t, eps, t, s), np.linalg.solve(A, z_t - offset), atol=1e-9)


# -- DDIM ---------------------------------------------------------------------


def test_ddim_terminal_step_returns_z0_estimate():
    s = cosine_schedule(50)
    rng = np.random.default_rng(3)
    z, e = rng.standard_normal(4), rng.standard_normal(4)
    np.testing.assert_allclose(ddim_step(z, e, 7, 0, s), predict_z0(z, e, 7, s), atol=1e-15)


def test_ddim_identity_step():
    s = toy_schedule([1.0, 0.6, 0.6, 0.2])
    rng = np.random.default_rng(4)
    z, e = rng.standard_normal(4), rng.standard_normal(4)
    np.testing.assert_allclose(ddim_step(z, e, 2, 1, s), z, atol=1e-12)


def test_ddim_step_ordering_errors():
    s = cosine_schedule(10)
    with pytest.raises(ConfigError):
        ddim_step(np.zeros(2), np.zeros(2), 3, 3, s)
    with pytest.raises(ConfigError):
        ddim_step(np.zeros(2), np.zeros(2), 11, 3, s)


def test_timestep_subsequence_examples():
    assert timestep_subsequence(500, 500) == list(range(500, 0, -1))
    seq = timestep_subsequence(500, 10)
    assert seq == [500, 450, 400, 350, 300, 250, 200, 150, 100, 50]
    for n in (1, 3, 7, 20, 77, 200):
        seq = timestep_subsequence(500, n)
        assert len(seq) == n and all(b < a for a, b in zip(seq, seq[1:])) and seq[-1] >= 1
    with pytest.raises(ConfigError):
        timestep_subsequence(10, 11)


def test_timestep_subsequence_spans_range():
    # N=200 does not divide 500: strides alternate 2/3 and the chain reaches t=3
    seq = timestep_subsequence(500, 200)
    assert seq[:5] == [500, 498, 495, 493, 490] and seq[-1] == 3
    for T, N in ((500, 200), (500, 77), (100, 30), (10, 3)):
        seq = timestep_subsequence(T, N)
        assert seq == [math.ceil(Fraction(T * (N - i), N)) for i in range(N)]
        assert {a - b for a, b in zip(seq, seq[1:])} <= {T // N, -(-T // N)}
        assert seq[-1] <= -(-T // N)


def test_linear_denoiser_chain_matches_unrolled_update():
    s = cosine_schedule(10)
    c = 0.37
    z_T = np.random.default_rng(5).standard_normal(3)
    got = ddim_loop(z_T, lambda z, t, ctx: c * z, None, 3, s)
    ab = s.alpha_bar
    z = z_T.copy()
    for t, tp in ((10, 7), (7, 4), (4, 0)):
        e = c * z
        z = math.sqrt(ab[tp]) * (z - math.sqrt(1 - ab[t]) * e) / math.sqrt(ab[t]) + math.sqrt(1 - ab[tp]) * e
    np.testing.assert_allclose(got, z, atol=1e-12, rtol=0)


def test_zero_denoiser_unroll():
    s = cosine_schedule(20)
    out = ddim_sample(lambda z, t, ctx: np.zeros_like(z), None, 4, 2, 9, s, d=3)
    ab = s.alpha_bar
    expected = chain_noise(9, 2, 3)
    for t, tp in ((20, 15), (15, 10), (10, 5), (5, 0)):
        expected = math.sqrt(ab[tp]) * expected / math.sqrt(ab[t])
    np.testing.assert_allclose(out, expected, atol=1e-12)
    np.testing.assert_allclose(out, chain_noise(9, 2, 3) / math.sqrt(ab[20]), rtol=1e-12)


def test_ddim_sample_is_deterministic():
    s = cosine_schedule(100)
    den = lambda z, t, ctx: np.tanh(z * ctx + t / 100)
    a = ddim_sample(den, 0.5, 20, 20, 42, s, d=16)
    b = ddim_sample(den, 0.5, 20, 20, 42, s, d=16)
    assert a.shape == (20, 16)
    assert np.abs(a - b).max() <= 1e-12


def test_chain_outputs_stable_in_k():
    s = cosine_schedule(100)
    den = lambda z, t, ctx: 0.1 * z
    few = ddim_sample(den, None, 10, 2, 3, s, d=4)
    many = ddim_sample(den, None, 10, 9, 3, s, d=4)
    np.testing.assert_array_equal(few, many[:2])


def test_denoiser_dimension_mismatch():
    s = cosine_schedule(10)
    with pytest.raises(ShapeError):
        ddim_sample(lambda z, t, ctx: z[:, :2], None, 2, 1, 0, s, d=3)
    with pytest.raises(ConfigError):
        ddim_sample(lambda z, t, ctx: z, None, 2, 0, 0, s, d=3)


def test_clipped_noise_is_inactive_inside_bound():
    s = cosine_schedule(100)
    rng = np.random.default_rng(6)
    z0, eps = rng.uniform(-0.5, 0.5, 8), rng.standard_normal(8)
    z_t = q_sample(z0, 60, eps, s)
    np.testing.assert_allclose(clipped_noise(z_t, eps, 60, s, 1.0), eps, atol=1e-9)


def test_clipped_noise_bounds_clean_estimate():
    s = cosine_schedule(500)
    rng = np.random.default_rng(7)
    z_t, eps = rng.standard_normal(8), rng.standard_normal(8)
    adjusted = clipped_noise(z_t, eps, 500, s, 1.0)
    z0 = predict_z0(z_t, adjusted, 500, s)
    assert np.abs(z0).max() <= 1.0 + 1e-6
    assert np.abs(predict_z0(z_t, eps, 500, s)).max() > 10.0


def test_clipped_loop_stays_in_bound():
    s = cosine_schedule(500)
    noisy = lambda z, t, ctx: 0.9 * z + 0.05
    out = ddim_sample(noisy, None, 10, 6, 1, s, d=5, clip=1.0)
    assert np.abs(out).max() <= 1.0 + 1e-9


def test_linear_gaussian_covariance_improves_with_steps():
    s = cosine_schedule(500)
    rng = np.random.default_rng(8)
    A = rng.standard_normal((3, 3))
    sigma = A @ A.T / 3 + 0.05 * np.eye(3)

    def optimal(z, t, ctx):
        ab = s.alpha_bar[t]
        # E[eps | z_t] for z0 ~ N(0, sigma)
        cov = ab * sigma + (1 - ab) * np.eye(3)
        return math.sqrt(1 - ab) * np.linalg.solve(cov, z.T).T

    z_T = rng.standard_normal((10_000, 3))
    errs = {}
    for n in (10, 100):
        out = ddim_loop(z_T, optimal, None, n, s)
        errs[n] = np.linalg.norm(np.cov(out, rowvar=False) - sigma)
    assert errs[100] <= errs[10]
