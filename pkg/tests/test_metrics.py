import warnings

import jax.numpy as jnp
import numpy as np
import pytest

from diffusion_pinn import metrics as mt
from diffusion_pinn import neural_core as nc
from diffusion_pinn import targets as tg
from diffusion_pinn import trainer as tr
from diffusion_pinn.errors import UnsupportedTargetError


def test_knn_kl_shifted_gaussian():
    r = np.random.default_rng(0)
    est = mt.knn_kl(r.normal(size=(5000, 1)), r.normal(1.0, 1.0, size=(5000, 1)), 5)
    assert abs(est - 0.5) <= 0.1


def test_knn_kl_identical_distributions():
    for seed in range(10):
        r = np.random.default_rng(seed)
        assert abs(mt.knn_kl(r.normal(size=(5000, 1)), r.normal(size=(5000, 1)))) <= 0.05


@pytest.mark.parametrize("n", [1000, 5000])
def test_knn_kl_concentrates(n):
    r = np.random.default_rng(n)
    vals = [mt.knn_kl(r.normal(size=(n, 2)), r.normal(size=(n, 2))) for _ in range(3)]
    assert abs(np.mean(vals)) < 0.1


def test_knn_kl_permutation_invariant():
    r = np.random.default_rng(1)
    p, q = r.normal(size=(300, 2)), r.normal(0.5, 1, size=(400, 2))
    assert mt.knn_kl(p, q) == mt.knn_kl(p[r.permutation(300)], q[r.permutation(400)])


def test_knn_kl_duplicates_warn():
    r = np.random.default_rng(2)
    p = np.repeat(r.normal(size=(50, 2)), 2, axis=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        val = mt.knn_kl(p, r.normal(size=(100, 2)), k=1)
    assert np.isfinite(val) and any("duplicate" in str(w.message) for w in caught)


def test_knn_kl_preconditions():
    with pytest.raises(ValueError):
        mt.knn_kl(np.zeros((5, 2)), np.zeros((10, 2)), 5)
    with pytest.raises(ValueError):
        mt.knn_kl(np.zeros((10, 2)), np.zeros((10, 3)), 1)


def test_projection():
    x = np.zeros((4, 30))
    assert mt.project(x, "doublewell").shape == (4, 5)
    assert mt.project(np.zeros((4, 10)), "funnel").shape == (4, 2)
    assert mt.project(np.zeros((4, 2)), "rings").shape == (4, 2)


def test_mixing_error_exact_counts():
    t9 = tg.get_target("9gaussians")
    counts = [int(round(1000 * m.weight)) for m in t9.modes]
    pts = np.concatenate([np.tile(m.center, (c, 1)) for m, c in zip(t9.modes, counts)])
    assert mt.mixing_error(pts, t9.modes) == pytest.approx(0.0, abs=1e-15)
    assert mt.mixing_error(pts[::-1], t9.modes) == mt.mixing_error(pts, t9.modes)


def test_mixing_error_single_mode():
    t = tg.get_target("mog2")
    pts = np.tile(t.modes[0].center, (100, 1))
    assert mt.mixing_error(pts, t.modes) == pytest.approx(np.sqrt(0.64 + 0.64))


def test_score_error_exact_hook_and_random_model(rng):
    t = tg.get_target("mog2")
    mix = t.oracle
    exact = lambda x, s: tg.mog_score(tg.mog_perturbed(mix, s[0]), x)  # noqa: E731
    pts = tg.mog_perturbed(mix, 0.3).sample(500, rng)
    assert mt.score_l2_error(exact, mix, 0.3, pts) <= 1e-12
    random_model = tr.LogDensityModel(nc.init_network(2, 0), t)
    assert mt.score_l2_error(random_model, mix, 0.3, pts) > 0.0


def test_score_error_terminal_regularizer_solution(rng):
    g = tg.get_target("gaussian")
    m = tr.LogDensityModel(nc.init_network(2, 0, zero=True), g, shift=lambda x, t: -0.5 * jnp.sum(x * x))
    z = rng.normal(size=(200, 2))
    assert mt.score_l2_error(m, g.oracle, 0.999, z) <= 1e-24


def test_score_error_needs_oracle(rng):
    rings = tg.get_target("rings")
    with pytest.raises(UnsupportedTargetError):
        mt.score_l2_error(lambda x, t: x, rings.oracle, 0.5, rng.normal(size=(3, 2)))


def test_report_outputs(tmp_path):
    rep = mt.MetricsReport("mog2", "dps", 0, 1000, kl_estimate=0.01, kl_dims=2, n_reference=1000, k=5, mixing_l2=0.02)
    rep.to_json(tmp_path / "r.json")
    rep.append_csv(tmp_path / "all.csv")
    rep.append_csv(tmp_path / "all.csv")
    lines = (tmp_path / "all.csv").read_text().splitlines()
    assert lines[0].startswith("target,method,seed") and len(lines) == 3
    with pytest.raises(ValueError):
        mt.MetricsReport("x", "dps", 0, 10, mixing_l2=-1.0)
