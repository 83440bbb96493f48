"""Forward noising process and collocation-point generation.

The forward process on ``[T_MIN, T_MAX]`` is

    dx_t = -x_t / (2 (1 - t)) dt + sqrt(1 / (1 - t)) dB_t,

whose conditional law is ``N(sqrt(1 - t) x_0, t I)``. Collocation points come
from a short Langevin chain on the target followed by one draw from that
conditional.

Randomness: each batch row owns a stream ``fold_in(key, row)``, so results do
not depend on how rows are split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from diffusion_pinn.errors import DivergenceError

T_MIN = 1e-3
T_MAX = 0.999
FUNNEL_REFRESH_PERIOD = 10_000


def as_key(seed_or_key):
    """Accept an int seed or an existing PRNG key."""
    if isinstance(seed_or_key, (int, np.integer)):
        return jax.random.PRNGKey(int(seed_or_key))
    return seed_or_key


def row_keys(key, n):
    return jax.vmap(jax.random.fold_in, in_axes=(None, 0))(key, jnp.arange(n))


@dataclass(frozen=True)
class ForwardProcess:
    t_min: float = T_MIN
    t_max: float = T_MAX

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(f"need 0 < t_min < t_max < 1, got ({self.t_min}, {self.t_max})")

    def drift(self, x, t):
        return -x / (2.0 * (1.0 - t))

    def diffusion(self, t):
        return jnp.sqrt(1.0 / (1.0 - t))

    def conditional_mean(self, x0, t):
        return jnp.sqrt(1.0 - t) * x0

    def conditional_std(self, t):
        return jnp.sqrt(t)

    def sample_conditional(self, x0, t, eps):
        """Draw ``x_t | x_0`` given standard normal noise ``eps``; ``t`` broadcasts per row."""
        t = jnp.asarray(t)
        if t.ndim == 1:
            t = t[:, None]
        return jnp.sqrt(1.0 - t) * x0 + jnp.sqrt(t) * eps


@dataclass(frozen=True)
class LmcConfig:
    """Short Langevin chain used to place collocation points.

    ``refresh`` regenerates the chain every training iteration; otherwise it is
    rerun every ``refresh_period`` iterations.
    """

    step_size: float
    iterations: int
    batch_size: int
    refresh: bool = True
    refresh_period: int = FUNNEL_REFRESH_PERIOD

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"LMC step size must be > 0, got {self.step_size}")
        if self.iterations < 1:
            raise ValueError(f"LMC iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"LMC batch size must be >= 1, got {self.batch_size}")
        if self.refresh_period < 1:
            raise ValueError("refresh period must be >= 1")


LMC_DEFAULTS = {
    "9gaussians": LmcConfig(1.0, 60, 128),
    "rings": LmcConfig(0.15, 100, 200),
    "funnel": LmcConfig(0.02, 10_000, 200, refresh=False),
    "doublewell": LmcConfig(0.02, 100, 700),
    # not benchmark targets in their own right; 9-Gaussians settings
    "mog2": LmcConfig(1.0, 60, 128),
    "gaussian": LmcConfig(0.1, 60, 128),
}


def default_lmc(target_name):
    try:
        return LMC_DEFAULTS[target_name]
    except KeyError:
        raise ValueError(f"no LMC defaults for target {target_name!r}") from None


def refresh_policy(iteration, target_name):
    """"regenerate" or "reuse" the collocation chain at ``iteration``."""
    cfg = default_lmc(target_name)
    return "regenerate" if needs_refresh(iteration, cfg) else "reuse"


def needs_refresh(iteration, cfg):
    if cfg.refresh:
        return True if isinstance(iteration, (int, np.integer)) else jnp.bool_(True)
    return iteration % cfg.refresh_period == 0


def lmc_update(x, grad, step_size, xi):
    """x + (eta / 2) grad log mu(x) + sqrt(eta) xi."""
    return x + 0.5 * step_size * grad + jnp.sqrt(step_size) * xi


def lmc_run(grad_batch, x, key, step_size, iterations, noise_scale=1.0):
    """Traceable Langevin loop.

    Returns the final states and the first step index at which a gradient was
    non-finite (``-1`` if none).
    """
    keys = row_keys(key, x.shape[0])
    d = x.shape[1]

    def body(n, carry):
        x, bad = carry
        xi = jax.vmap(lambda k: jax.random.normal(jax.random.fold_in(k, n), (d,)))(keys)
        g = grad_batch(x)
        finite = jnp.all(jnp.isfinite(g)) & jnp.all(jnp.isfinite(x))
        bad = jnp.where((bad < 0) & ~finite, n, bad)
        return lmc_update(x, g, step_size, noise_scale * xi), bad

    return jax.lax.fori_loop(0, iterations, body, (x, jnp.asarray(-1)))


def lmc_init(key, batch_size, d):
    keys = row_keys(key, batch_size)
    return jax.vmap(lambda k: jax.random.normal(k, (d,)))(keys)


def lmc_chain(target, cfg, rng, *, x_init=None, noise=True):
    """Run the short chain from N(0, I) and return the final batch of x_0.

    ``x_init`` and ``noise=False`` are test hooks (fixed start, no noise).
    """
    key = as_key(rng)
    init_key, chain_key = jax.random.split(key)
    x = lmc_init(init_key, cfg.batch_size, target.dim) if x_init is None else jnp.asarray(x_init, jnp.float64)
    x, bad = _lmc_jit(target.grad_log_mu_batch, x, chain_key, cfg.step_size, cfg.iterations, 1.0 if noise else 0.0)
    bad = int(bad)
    if bad >= 0 or not bool(jnp.all(jnp.isfinite(x))):
        raise DivergenceError(f"LMC chain on target {target.name!r} diverged at step {bad}", step=bad)
    return x


_lmc_jit = jax.jit(lmc_run, static_argnums=(0, 4))


class CollocationBatch(NamedTuple):
    """Rows of (x0, t, x_t) plus optional Rademacher probes."""

    x0: jax.Array
    t: jax.Array
    xt: jax.Array
    v1: jax.Array | None = None
    v2: jax.Array | None = None


def make_collocation(x0s, fp, rng, *, hutchinson=False, t=None):
    """Noise ``x0s`` to uniformly drawn times in ``[fp.t_min, fp.t_max]``.

    ``t`` (scalar or per-row array) overrides the drawn times, as a test hook.
    """
    x0s = jnp.asarray(x0s, dtype=jnp.float64)
    if x0s.ndim != 2 or x0s.shape[0] == 0:
        raise ValueError("x0s must be a nonempty (B, d) array")
    return _collocation(x0s, fp.t_min, fp.t_max, as_key(rng), hutchinson, t)


def _collocation(x0s, t_min, t_max, key, hutchinson=False, t=None):
    n, d = x0s.shape

    def per_row(k):
        kt, ke, k1, k2 = jax.random.split(k, 4)
        tt = jax.random.uniform(kt, (), minval=t_min, maxval=t_max)
        eps = jax.random.normal(ke, (d,))
        v1 = jax.random.rademacher(k1, (d,)).astype(jnp.float64)
        v2 = jax.random.rademacher(k2, (d,)).astype(jnp.float64)
        return tt, eps, v1, v2

    tt, eps, v1, v2 = jax.vmap(per_row)(row_keys(key, n))
    if t is not None:
        tt = jnp.broadcast_to(jnp.asarray(t, dtype=jnp.float64), (n,))
    xt = jnp.sqrt(1.0 - tt)[:, None] * x0s + jnp.sqrt(tt)[:, None] * eps
    if hutchinson:
        return CollocationBatch(x0s, tt, xt, v1, v2)
    return CollocationBatch(x0s, tt, xt)
