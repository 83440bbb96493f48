import jax.numpy as jnp
import numpy as np
import pytest

from diffusion_pinn import diffusion as df
from diffusion_pinn import targets as tg
from diffusion_pinn.errors import DivergenceError


def test_forward_process_coefficients():
    fp = df.ForwardProcess()
    x = jnp.array([1.0, -2.0])
    np.testing.assert_allclose(fp.drift(x, 0.5), -x)
    assert float(fp.diffusion(0.75)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        df.ForwardProcess(0.5, 0.2)


def test_conditional_law_moments(rng):
    fp = df.ForwardProcess()
    x0 = jnp.full((20_000, 2), 3.0)
    eps = jnp.asarray(rng.standard_normal((20_000, 2)))
    xt = np.asarray(fp.sample_conditional(x0, 0.36, eps))
    assert np.allclose(xt.mean(0), 0.8 * 3.0, atol=0.02)
    assert np.allclose(xt.var(0), 0.36, rtol=0.03)


def test_lmc_config_validation():
    with pytest.raises(ValueError):
        df.LmcConfig(0.0, 10, 10)
    with pytest.raises(ValueError):
        df.LmcConfig(0.1, 0, 10)
    with pytest.raises(ValueError):
        df.default_lmc("unknown")


def test_table_defaults():
    assert df.default_lmc("9gaussians") == df.LmcConfig(1.0, 60, 128)
    assert df.default_lmc("rings") == df.LmcConfig(0.15, 100, 200)
    assert df.default_lmc("funnel") == df.LmcConfig(0.02, 10_000, 200, refresh=False)
    assert df.default_lmc("doublewell") == df.LmcConfig(0.02, 100, 700)


def test_refresh_policy():
    assert df.refresh_policy(17, "rings") == "regenerate"
    assert df.refresh_policy(0, "funnel") == "regenerate"
    assert df.refresh_policy(9_999, "funnel") == "reuse"
    assert df.refresh_policy(20_000, "funnel") == "regenerate"


def test_lmc_update_formula():
    x = jnp.array([1.0, 2.0])
    out = df.lmc_update(x, jnp.array([0.5, -1.0]), 0.04, jnp.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [1.0 + 0.01 + 0.2, 2.0 - 0.02])


def test_noiseless_chain_reaches_mode():
    t = tg.get_target("gaussian")
    cfg = df.LmcConfig(0.5, 200, 4)
    x = df.lmc_chain(t, cfg, 0, x_init=jnp.full((4, 2), 3.0), noise=False)
    assert float(jnp.max(jnp.abs(x))) < 1e-10


def test_chain_determinism_and_shape():
    t = tg.get_target("9gaussians")
    cfg = df.default_lmc("9gaussians")
    a, b = df.lmc_chain(t, cfg, 5), df.lmc_chain(t, cfg, 5)
    assert a.shape == (128, 2) and np.array_equal(a, b)
    assert not np.array_equal(a, df.lmc_chain(t, cfg, 6))


def test_chain_divergence_is_reported():
    t = tg.get_target("gaussian")
    with pytest.raises(DivergenceError, match="gaussian"):
        df.lmc_chain(t, df.LmcConfig(1e3, 400, 8), 0)


def test_chain_covers_nine_gaussian_modes():
    t = tg.get_target("9gaussians")
    x = df.lmc_chain(t, df.LmcConfig(1.0, 60, 2000), 0)
    counts = np.bincount(tg.assign_modes(np.asarray(x), t.modes), minlength=9)
    assert np.all(counts > 0)


def test_collocation_batch(rng):
    fp = df.ForwardProcess()
    x0 = rng.normal(size=(500, 3))
    b = df.make_collocation(x0, fp, 3, hutchinson=True)
    t = np.asarray(b.t)
    assert t.min() >= fp.t_min and t.max() <= fp.t_max
    assert set(np.unique(np.asarray(b.v1))) == {-1.0, 1.0}
    assert not np.array_equal(b.v1, b.v2)
    plain = df.make_collocation(x0, fp, 3)
    assert plain.v1 is None and np.array_equal(plain.xt, b.xt)
    fixed = df.make_collocation(x0, fp, 3, t=0.5)
    assert np.all(np.asarray(fixed.t) == 0.5)
    with pytest.raises(ValueError):
        df.make_collocation(np.zeros((0, 2)), fp, 0)


def test_collocation_rows_independent_of_batch_split(rng):
    fp = df.ForwardProcess()
    x0 = rng.normal(size=(10, 2))
    full = df.make_collocation(x0, fp, 9)
    head = df.make_collocation(x0[:4], fp, 9)
    assert np.array_equal(np.asarray(full.xt)[:4], np.asarray(head.xt))
