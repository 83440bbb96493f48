"""Reverse-SDE sampling with a truncated learned score, and an LMC baseline.

Chains are processed in fixed blocks of ``BLOCK`` rows; ``workers`` only
changes how many blocks run concurrently, so outputs are bit-identical for any
worker count.
"""

from __future__ import annotations

import functools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from diffusion_pinn.diffusion import T_MAX, T_MIN, lmc_run
from diffusion_pinn.errors import DivergenceError

BLOCK = 512

RADIUS_DEFAULTS = {"9gaussians": 20.0, "rings": 20.0, "funnel": 2000.0, "doublewell": 30.0}


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 1000
    samples: int = 1000
    radius: float = 20.0
    seed: int = 0
    t_min: float = T_MIN
    t_max: float = T_MAX

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not 0 < self.t_min < self.t_max < 1:
            raise ValueError("need 0 < t_min < t_max < 1")

    @property
    def h(self):
        return (self.t_max - self.t_min) / self.steps


@dataclass
class SampleSet:
    samples: np.ndarray
    method: str
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("sample set contains non-finite entries")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def save(self, path):
        """Write ``path`` (CSV, one row per sample) and ``path.json`` sidecar."""
        path = Path(path)
        np.savetxt(path, self.samples, delimiter=",", fmt="%.17g")
        meta = {"method": self.method, "seed": self.seed, "config": self.config, "shape": list(self.samples.shape)}
        sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        return path


def sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_samples(path):
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    side = sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
        return SampleSet(data, meta.get("method", "unknown"), meta.get("seed", 0), meta.get("config", {}))
    return SampleSet(data, "unknown", 0)


# ---------------------------------------------------------------------------
# score functions


@functools.lru_cache(maxsize=None)
def _hook_parts(fn):
    return lambda params, x, t: fn(x, t)


def score_parts(model):
    """``(fn(params, x, t) -> (B, d), params)`` for a model or a batched score hook."""
    if hasattr(model, "score_parts"):
        return model.score_parts()
    if callable(model):
        return _hook_parts(model), None
    raise TypeError(f"cannot take a score from {type(model).__name__}")


def _truncate(score, x, radius):
    inside = jnp.sum(x * x, -1) <= radius * radius
    return jnp.where(inside[:, None], score, 0.0)


def truncated_score(model, x, t, radius):
    """``grad_x u(x, t)`` inside the closed ball of radius ``radius``, else zero."""
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    x = jnp.asarray(x, jnp.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    fn, params = score_parts(model)
    s = _truncate(fn(params, xb, jnp.full(xb.shape[:1], t, jnp.float64)), xb, radius)
    return s[0] if single else s


def reverse_step(x, t_prev, h, score_value, z):
    """Exponential-integrator update of the reverse process."""
    if not t_prev > 0 or not h > 0:
        raise ValueError("need t_prev > 0 and h > 0")
    return _reverse_update(x, t_prev, h, score_value, z)


def _reverse_update(x, t, h, s, z):
    a = jnp.sqrt(1.0 + h / t)
    return a * x + 2.0 * (a - 1.0) * s + jnp.sqrt(h / t) * z


def chain_keys(seed, start, n):
    base = jax.random.PRNGKey(seed)
    return jax.vmap(jax.random.fold_in, in_axes=(None, 0))(base, start + jnp.arange(n))


def _make_block_runner(score_fn, d, steps):
    @jax.jit
    def run(params, keys, radius, t_min, h):
        x = jax.vmap(lambda k: jax.random.normal(jax.random.fold_in(k, 0), (d,)))(keys)

        def body(n, carry):
            x, bad = carry
            t = t_min + n * h
            z = jax.vmap(lambda k: jax.random.normal(jax.random.fold_in(k, n + 1), (d,)))(keys)
            s = _truncate(score_fn(params, x, jnp.full(x.shape[:1], 1.0 - t)), x, radius)
            x = _reverse_update(x, t, h, s, z)
            bad = jnp.where((bad < 0) & ~jnp.all(jnp.isfinite(x)), n, bad)
            return x, bad

        return jax.lax.fori_loop(0, steps, body, (x, jnp.asarray(-1)))

    return run


_runner_cache = {}


def _block_runner(score_fn, d, steps):
    key = (score_fn, d, steps)
    if key not in _runner_cache:
        _runner_cache[key] = _make_block_runner(score_fn, d, steps)
    return _runner_cache[key]


def _blocks(n):
    return [(s, min(BLOCK, n - s)) for s in range(0, n, BLOCK)]


def _run_blocks(job, n, workers):
    blocks = _blocks(n)
    if workers <= 1 or len(blocks) == 1:
        return [job(s, m) for s, m in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: job(*b), blocks))


def sample(model, cfg, *, dim=None, workers=1):
    """Run the reverse-SDE sampler; returns a :class:`SampleSet`.

    ``dim`` is required only when ``model`` is a bare score hook.
    """
    fn, params = score_parts(model)
    d = dim if dim is not None else model.target.dim
    run = _block_runner(fn, d, cfg.steps)

    def job(start, m):
        keys = chain_keys(cfg.seed, start, BLOCK)  # padded to a fixed block
        x, bad = run(params, keys, cfg.radius, cfg.t_min, cfg.h)
        return np.asarray(x)[:m], int(bad)

    parts = _run_blocks(job, cfg.samples, workers)
    bads = [b for _, b in parts if b >= 0]
    if bads:
        raise DivergenceError(f"reverse sampler produced non-finite samples at step {min(bads) + 1}", step=min(bads) + 1)
    x = np.concatenate([p for p, _ in parts])
    return SampleSet(x, "dps", cfg.seed, asdict(cfg))


# ---------------------------------------------------------------------------
# LMC baseline


_lmc_block = jax.jit(lmc_run, static_argnums=(0, 4))


def lmc_baseline(target, step_size, iterations, samples, seed, *, workers=1):
    """Long-run Langevin chains from N(0, I) with the collocation-chain update."""
    if not step_size > 0:
        raise ValueError(f"LMC step size must be > 0, got {step_size}")
    if iterations < 1 or samples < 1:
        raise ValueError("iterations and samples must be >= 1")
    d = target.dim

    def job(start, m):
        keys = chain_keys(seed, start, BLOCK)
        x0 = jax.vmap(lambda k: jax.random.normal(jax.random.fold_in(k, 0), (d,)))(keys)
        key = jax.random.fold_in(jax.random.PRNGKey(seed), 2**31 - 1 - start)
        x, _ = _lmc_block(target.grad_log_mu_batch, x0, key, step_size, iterations)
        return np.asarray(x)[:m]

    x = np.concatenate(_run_blocks(job, samples, workers))
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        idx = int(np.argmax(bad))
        raise DivergenceError(f"LMC chain {idx} on {target.name!r} diverged", step=None)
    cfg = {"step_size": step_size, "iterations": iterations, "samples": samples}
    return SampleSet(x, "lmc", seed, cfg)
