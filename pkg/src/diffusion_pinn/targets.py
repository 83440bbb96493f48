"""Benchmark targets, Gaussian-mixture oracles and mode descriptors.

Every target exposes an unnormalized ``log_mu(x)`` and ``grad_log_mu(x)`` for a
single point ``x`` of shape ``(d,)``; both are written in ``jax.numpy`` so that
higher derivatives (needed by the PINN residual) come from autodiff.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp
from scipy import integrate

NINE_GAUSSIAN_VARIANCE = 0.3
RINGS_RADII = (2.0, 4.0, 6.0, 8.0)
RINGS_WEIGHTS = (0.05, 0.45, 0.05, 0.45)
RINGS_VARIANCE = 0.2**2
RINGS_MIN_RADIUS = 1e-6


def _concrete(*values):
    return not any(isinstance(v, jax.core.Tracer) for v in values)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Isotropic Gaussian mixture with a shared variance."""

    weights: jax.Array
    means: jax.Array
    var: jax.Array

    def __post_init__(self):
        w = jnp.asarray(self.weights, dtype=jnp.float64)
        m = jnp.atleast_2d(jnp.asarray(self.means, dtype=jnp.float64))
        v = jnp.asarray(self.var, dtype=jnp.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "var", v)
        if w.shape[0] != m.shape[0]:
            raise ValueError(f"{w.shape[0]} weights for {m.shape[0]} means")
        if _concrete(w, v):
            if np.any(np.asarray(w) <= 0) or abs(float(np.sum(w)) - 1.0) > 1e-12:
                raise ValueError("mixture weights must be positive and sum to 1")
            if not float(v) > 0:
                raise ValueError(f"mixture variance must be positive, got {float(v)}")

    @property
    def dim(self):
        return int(self.means.shape[1])

    @property
    def n_components(self):
        return int(self.means.shape[0])

    def sample(self, n, rng):
        """Exact draws (numpy ``Generator``)."""
        w = np.asarray(self.weights)
        comp = rng.choice(len(w), size=n, p=w / w.sum())
        noise = rng.standard_normal((n, self.dim))
        return np.asarray(self.means)[comp] + math.sqrt(float(self.var)) * noise


def mog_perturbed(mix, t):
    """Marginal at time ``t`` of the forward process x_t = sqrt(1-t) x_0 + sqrt(t) eps."""
    if _concrete(t) and not 0.0 <= float(t) <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {float(t)}")
    return GaussianMixture(mix.weights, jnp.sqrt(1.0 - t) * mix.means, (1.0 - t) * mix.var + t)


def _component_logits(mix, x):
    diff = x[..., None, :] - mix.means
    return jnp.log(mix.weights) - 0.5 * jnp.sum(diff * diff, axis=-1) / mix.var


def mog_logdensity(mix, x):
    """Normalized log-density; ``x`` has shape ``(..., d)``."""
    x = jnp.asarray(x, dtype=jnp.float64)
    d = x.shape[-1]
    return logsumexp(_component_logits(mix, x), axis=-1) - 0.5 * d * jnp.log(2 * jnp.pi * mix.var)


def mog_score(mix, x):
    """Score (gradient of the log-density); ``x`` has shape ``(..., d)``."""
    x = jnp.asarray(x, dtype=jnp.float64)
    resp = jax.nn.softmax(_component_logits(mix, x), axis=-1)
    return (resp @ mix.means - x) / mix.var


# ---------------------------------------------------------------------------
# modes


@dataclass(frozen=True)
class ModeDescriptor:
    """One mode of a multimodal target.

    ``rule`` selects how samples are assigned: "nearest-center" (Euclidean
    distance to ``center``), "sign-pattern" (sign of the leading coordinates
    equals ``center``) or "nearest-radius" (distance of the norm to
    ``center``, a radius).
    """

    label: str
    center: tuple
    weight: float
    rule: str = "nearest-center"


def assign_modes(samples, modes):
    """Index of the mode each sample belongs to (every sample gets exactly one)."""
    samples = np.asarray(samples, dtype=np.float64)
    rule = modes[0].rule
    if any(m.rule != rule for m in modes):
        raise ValueError("modes mix different assignment rules")
    if rule == "nearest-center":
        centers = np.array([m.center for m in modes])
        dist = ((samples[:, None, :] - centers[None]) ** 2).sum(-1)
        return np.argmin(dist, axis=1)
    if rule == "sign-pattern":
        patterns = np.array([m.center for m in modes])
        k = patterns.shape[1]
        signs = np.where(samples[:, :k] >= 0, 1.0, -1.0)
        return np.argmin(np.abs(signs[:, None, :] - patterns[None]).sum(-1), axis=1)
    if rule == "nearest-radius":
        radii = np.array([m.center[0] for m in modes])
        r = np.linalg.norm(samples, axis=1)
        return np.argmin(np.abs(r[:, None] - radii[None]), axis=1)
    raise ValueError(f"unknown mode assignment rule {rule!r}")


def mode_weights(modes):
    return np.array([m.weight for m in modes])


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True, eq=False)
class TargetDistribution:
    name: str
    dim: int
    log_mu: Callable
    grad_log_mu: Callable
    modes: tuple = ()
    oracle: GaussianMixture | None = None
    spec: dict = field(default_factory=dict)

    @functools.cached_property
    def log_mu_batch(self):
        return jax.jit(jax.vmap(self.log_mu))

    @functools.cached_property
    def grad_log_mu_batch(self):
        return jax.jit(jax.vmap(self.grad_log_mu))

    def laplacian_log_mu(self, x):
        return jnp.trace(jax.jacfwd(self.grad_log_mu)(x))


def make_mog(weights, means, var, name="mog"):
    """Target given by an isotropic Gaussian mixture; the oracle is the mixture itself."""
    mix = GaussianMixture(weights, means, var)
    modes = tuple(
        ModeDescriptor(f"({', '.join(f'{c:g}' for c in np.asarray(m))})", tuple(np.asarray(m).tolist()), float(w))
        for m, w in zip(mix.means, mix.weights)
    )
    spec = {
        "name": name,
        "weights": np.asarray(mix.weights).tolist(),
        "means": np.asarray(mix.means).tolist(),
        "var": float(mix.var),
    }
    return TargetDistribution(
        name=name,
        dim=mix.dim,
        log_mu=lambda x: mog_logdensity(mix, x),
        grad_log_mu=lambda x: mog_score(mix, x),
        modes=modes,
        oracle=mix,
        spec=spec,
    )


def make_gaussian(d=2):
    """Standard Gaussian N(0, I); log mu(x) = -|x|^2 / 2."""
    mix = GaussianMixture(jnp.ones(1), jnp.zeros((1, d)), 1.0)
    return TargetDistribution(
        name="gaussian",
        dim=d,
        log_mu=lambda x: -0.5 * jnp.sum(x * x),
        grad_log_mu=lambda x: -x,
        modes=(ModeDescriptor("origin", (0.0,) * d, 1.0),),
        oracle=mix,
        spec={"name": "gaussian", "dim": d},
    )


def make_two_mode():
    """0.2 N((-5,-5), I) + 0.8 N((5,5), I)."""
    return make_mog([0.2, 0.8], [[-5.0, -5.0], [5.0, 5.0]], 1.0, name="mog2")


def make_9gaussians(var=NINE_GAUSSIAN_VARIANCE):
    """Nine modes on {-5, 0, 5}^2; corners weigh 0.2, the rest 0.04."""
    grid = (-5.0, 0.0, 5.0)
    means = [[a, b] for a in grid for b in grid]
    weights = [0.2 if abs(a) == 5 and abs(b) == 5 else 0.04 for a, b in means]
    return make_mog(weights, means, var, name="9gaussians")


def make_rings():
    """Radial mixture of N(c_i, 0.2^2) at radii 2, 4, 6, 8 with a uniform angle."""
    radii = jnp.asarray(RINGS_RADII)
    logw = jnp.log(jnp.asarray(RINGS_WEIGHTS))

    def radius(x):
        return jnp.sqrt(jnp.maximum(jnp.sum(x * x), RINGS_MIN_RADIUS**2))

    def log_mu(x):
        r = radius(x)
        return logsumexp(logw - 0.5 * (r - radii) ** 2 / RINGS_VARIANCE) - jnp.log(r)

    def grad_log_mu(x):
        sq = jnp.sum(x * x)
        r = radius(x)
        logits = logw - 0.5 * (r - radii) ** 2 / RINGS_VARIANCE
        resp = jax.nn.softmax(logits)
        d_dr = -jnp.sum(resp * (r - radii)) / RINGS_VARIANCE - 1.0 / r
        return jnp.where(sq > RINGS_MIN_RADIUS**2, d_dr * x / r, jnp.zeros_like(x))

    modes = tuple(
        ModeDescriptor(f"r={c:g}", (c,), w, rule="nearest-radius") for c, w in zip(RINGS_RADII, RINGS_WEIGHTS)
    )
    return TargetDistribution("rings", 2, log_mu, grad_log_mu, modes, None, {"name": "rings"})


def make_funnel():
    """Neal's funnel in 10-D: N(x0; 0, 9) N(x_{1:9}; 0, exp(x0) I), log mu(0) = 0."""

    def log_mu(x):
        x0, rest = x[0], x[1:]
        return -x0**2 / 18.0 - 4.5 * x0 - 0.5 * jnp.exp(-x0) * jnp.sum(rest * rest)

    def grad_log_mu(x):
        x0, rest = x[0], x[1:]
        scale = jnp.exp(-x0)
        g0 = -x0 / 9.0 - 4.5 + 0.5 * scale * jnp.sum(rest * rest)
        return jnp.concatenate([g0[None], -scale * rest])

    return TargetDistribution("funnel", 10, log_mu, grad_log_mu, (), None, {"name": "funnel"})


DOUBLEWELL_DIM = 30
DOUBLEWELL_WELLS = 3


def doublewell_potential_1d(x):
    """Log-density (unnormalized) of one double-well coordinate."""
    return -(x**4) + 6.0 * x**2 + 0.5 * x


@functools.lru_cache(maxsize=None)
def doublewell_positive_mass():
    """P(x > 0) under exp(-x^4 + 6x^2 + 0.5x), by adaptive quadrature."""
    shift = 9.5  # keeps the integrand O(1) near the wells
    f = lambda x: math.exp(doublewell_potential_1d(x) - shift)  # noqa: E731
    pos, _ = integrate.quad(f, 0.0, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    neg, _ = integrate.quad(f, -np.inf, 0.0, epsabs=0, epsrel=1e-13, limit=200)
    return pos / (pos + neg)


def make_doublewell(d=DOUBLEWELL_DIM, wells=DOUBLEWELL_WELLS):
    """Product of ``wells`` double-well coordinates and ``d - wells`` Gaussian ones."""

    def log_mu(x):
        head, tail = x[:wells], x[wells:]
        return jnp.sum(doublewell_potential_1d(head)) - 0.5 * jnp.sum(tail * tail)

    def grad_log_mu(x):
        head, tail = x[:wells], x[wells:]
        return jnp.concatenate([-4.0 * head**3 + 12.0 * head + 0.5, -tail])

    p = doublewell_positive_mass()
    modes = []
    for bits in np.ndindex(*(2,) * wells):
        pattern = tuple(1.0 if b == 0 else -1.0 for b in bits)
        weight = float(np.prod([p if s > 0 else 1.0 - p for s in pattern]))
        label = "".join("+" if s > 0 else "-" for s in pattern)
        modes.append(ModeDescriptor(label, pattern, weight, rule="sign-pattern"))
    return TargetDistribution(
        "doublewell", d, log_mu, grad_log_mu, tuple(modes), None, {"name": "doublewell", "dim": d, "wells": wells}
    )


BUILDERS = {
    "9gaussians": make_9gaussians,
    "rings": make_rings,
    "funnel": make_funnel,
    "doublewell": make_doublewell,
    "mog2": make_two_mode,
    "gaussian": make_gaussian,
}


def get_target(spec):
    """Build a target from a name or a spec dict.

    A dict with ``weights``/``means``/``var`` defines a custom mixture; other
    dicts name a built-in target plus keyword arguments (e.g. ``dim``).
    """
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    if "weights" in spec:
        return make_mog(spec["weights"], spec["means"], spec["var"], name=spec.get("name", "mog"))
    name = spec.pop("name", None)
    if name not in BUILDERS:
        raise ValueError(f"unknown target {name!r}; expected one of {sorted(BUILDERS)} or a mixture spec")
    if name == "gaussian":
        return make_gaussian(spec.get("dim", 2))
    if name == "doublewell":
        return make_doublewell(spec.get("dim", DOUBLEWELL_DIM), spec.get("wells", DOUBLEWELL_WELLS))
    if name == "9gaussians" and "var" in spec:
        return make_9gaussians(spec["var"])
    return BUILDERS[name]()
