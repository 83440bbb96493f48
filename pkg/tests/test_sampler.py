import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffusion_pinn import neural_core as nc
from diffusion_pinn import sampler as sp
from diffusion_pinn import targets as tg
from diffusion_pinn import trainer as tr


def exact_gaussian():
    return tr.LogDensityModel(nc.init_network(2, 0, zero=True), tg.get_target("gaussian"), shift=_half_sq)


def _half_sq(x, t):
    return -0.5 * jnp.sum(x * x)


def test_config_validation():
    with pytest.raises(ValueError):
        sp.SamplerConfig(steps=0)
    with pytest.raises(ValueError):
        sp.SamplerConfig(radius=0.0)
    assert sp.SamplerConfig(steps=998).h == pytest.approx(0.001)


def test_truncated_score_ball():
    m = exact_gaussian()
    inside = np.array([3.0, 4.0])
    np.testing.assert_allclose(sp.truncated_score(m, inside, 0.4, 20.0), -inside)
    np.testing.assert_allclose(sp.truncated_score(m, inside, 0.4, 5.0), -inside)  # closed ball
    assert np.all(np.asarray(sp.truncated_score(m, inside, 0.4, 4.0)) == 0.0)
    with pytest.raises(ValueError):
        sp.truncated_score(m, inside, 0.4, 0.0)


def test_reverse_step_examples():
    np.testing.assert_allclose(sp.reverse_step(jnp.array([1.0, 0.0]), 1.0, 3.0, jnp.zeros(2), jnp.zeros(2)), [2.0, 0.0])
    out = sp.reverse_step(jnp.zeros(2), 0.5, 0.02, jnp.zeros(2), jnp.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [math.sqrt(0.04), 0.0])
    with pytest.raises(ValueError):
        sp.reverse_step(jnp.zeros(2), 0.0, 0.1, jnp.zeros(2), jnp.zeros(2))


def test_reverse_step_small_h_limit():
    x, s, t = jnp.array([0.7, -1.2]), jnp.array([0.3, 0.5]), 0.4
    errs = []
    for h in (1e-3, 1e-4, 1e-5):
        out = sp.reverse_step(x, t, h, s, jnp.zeros(2))
        errs.append(float(jnp.linalg.norm(out - x - h / (2 * t) * (x + 2 * s))))
    # O(h^2): each tenfold decrease in h shrinks the error about a hundredfold
    assert errs[1] < errs[0] / 50 and errs[2] < errs[1] / 50


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 0.9), st.floats(1e-4, 0.1))
def test_reverse_step_is_affine(a, b, t, h):
    r = np.random.default_rng(0)
    x1, x2, s1, s2, z1, z2 = (jnp.asarray(r.normal(size=2)) for _ in range(6))
    lhs = sp.reverse_step(a * x1 + b * x2, t, h, a * s1 + b * s2, a * z1 + b * z2)
    rhs = a * sp.reverse_step(x1, t, h, s1, z1) + b * sp.reverse_step(x2, t, h, s2, z2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    k = math.sqrt(1 + h / t)
    np.testing.assert_allclose(sp.reverse_step(x1, t, h, 0 * s1, 0 * z1), k * x1, rtol=1e-14)


def test_single_step_moments():
    # one step from N(0, I) with the exact score -x: x' = (2 - a) x + sqrt(h/t) z
    cfg = sp.SamplerConfig(steps=1, samples=20_000, seed=2)
    x = sp.sample(exact_gaussian(), cfg).samples
    a = math.sqrt(1 + cfg.h / cfg.t_min)
    var = (2 - a) ** 2 + cfg.h / cfg.t_min
    assert np.allclose(x.mean(0), 0, atol=4 * math.sqrt(var / 20_000))
    assert np.allclose(x.var(0), var, rtol=0.05)


def test_exact_score_preserves_gaussian_at_100_steps():
    x = sp.sample(exact_gaussian(), sp.SamplerConfig(steps=100, samples=10_000, seed=4)).samples
    assert np.all(np.abs(x.mean(0)) <= 0.05)
    assert np.all(np.abs(np.cov(x.T) - np.eye(2)) <= 0.15)  # coarser grid, looser check


def test_sampling_determinism_and_workers():
    cfg = sp.SamplerConfig(steps=20, samples=1100, seed=8)
    a = sp.sample(exact_gaussian(), cfg)
    b = sp.sample(exact_gaussian(), cfg, workers=3)
    assert a.samples.tobytes() == b.samples.tobytes()
    c = sp.sample(exact_gaussian(), sp.SamplerConfig(steps=20, samples=1100, seed=9))
    assert not np.array_equal(a.samples, c.samples)


def test_outside_ball_moves_without_score():
    # with a tiny ball every point is outside: pure expansion + noise
    hook = lambda x, t: jnp.full_like(x, 1e6)  # noqa: E731
    x = sp.sample(hook, sp.SamplerConfig(steps=5, samples=50, radius=1e-9, seed=0), dim=2).samples
    assert np.all(np.isfinite(x)) and np.max(np.abs(x)) < 100


def test_sample_set_persistence(tmp_path):
    s = sp.SampleSet(np.arange(6.0).reshape(3, 2) / 7, "dps", 3, {"steps": 10})
    path = s.save(tmp_path / "s.csv")
    back = sp.load_samples(path)
    assert back.samples.tobytes() == s.samples.tobytes()
    assert back.method == "dps" and back.config == {"steps": 10}
    with pytest.raises(ValueError):
        sp.SampleSet(np.array([[np.nan, 0.0]]), "dps", 0)


def test_lmc_baseline_precondition():
    with pytest.raises(ValueError):
        sp.lmc_baseline(tg.get_target("gaussian"), 0.0, 10, 10, 0)


def test_lmc_baseline_gaussian_stationary_variance():
    eta = 0.01
    s = sp.lmc_baseline(tg.get_target("gaussian"), eta, 20_000, 10_000, 0).samples
    # stationary variance of x' = x - (eta/2) x + sqrt(eta) xi is 1 / (1 - eta / 4)
    assert np.all(np.abs(s.mean(0)) <= 0.05)
    assert np.allclose(s.var(0), 1 / (1 - eta / 4), rtol=0.05)


def test_lmc_baseline_workers_agree():
    t = tg.get_target("9gaussians")
    a = sp.lmc_baseline(t, 0.02, 200, 700, 1)
    b = sp.lmc_baseline(t, 0.02, 200, 700, 1, workers=2)
    assert a.samples.tobytes() == b.samples.tobytes()
