"""Two-component mixture oracles: divergence bounds, numeric divergences, score-FPE residuals.

The mixtures here have unit-variance components with shared means ``a1, a2``
and two weight vectors ``w`` and ``w_tilde``. Along the forward process both
stay mixtures (see :func:`diffusion_pinn.targets.mog_perturbed`), so every
quantity is available at any time ``t``.

Divergences in 2-D use a trapezoid rule on ``[-12, 12]^2`` whose grid is
refined until two successive estimates agree to 1e-6; in higher dimension an
importance-free Monte Carlo average under the first mixture is used and its
standard error reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp, xlogy

from diffusion_pinn.errors import QuadratureError
from diffusion_pinn.targets import GaussianMixture, mog_perturbed

QUAD_HALF_WIDTH = 12.0
QUAD_TOL = 1e-6
QUAD_START = 121
QUAD_MAX_LEVELS = 5
FD_STEP = 1e-5


@dataclass(frozen=True)
class MogPair:
    a1: np.ndarray
    a2: np.ndarray
    w: tuple
    w_tilde: tuple

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=np.float64).reshape(-1)
        a2 = np.asarray(self.a2, dtype=np.float64).reshape(-1)
        if a1.shape != a2.shape:
            raise ValueError("means must have the same dimension")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)
        for name in ("w", "w_tilde"):
            w = tuple(float(v) for v in getattr(self, name))
            if len(w) != 2 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be two non-negative weights summing to 1, got {w}")
            object.__setattr__(self, name, w)

    @property
    def dim(self):
        return self.a1.shape[0]

    @property
    def separation_sq(self):
        return float(np.sum((self.a1 - self.a2) ** 2))

    def mixtures(self, t=0.0):
        means = np.stack([self.a1, self.a2])
        p = GaussianMixture(np.asarray(self.w), means, 1.0)
        q = GaussianMixture(np.asarray(self.w_tilde), means, 1.0)
        if t == 0:
            return p, q
        return mog_perturbed(p, t), mog_perturbed(q, t)


def example_pair(w1, w_tilde1=0.2, a=(-5.0, -5.0)):
    """Means ``a`` and ``-a``; weights ``(w1, 1 - w1)`` against ``(w_tilde1, 1 - w_tilde1)``."""
    a = np.asarray(a, dtype=np.float64)
    return MogPair(a, -a, (w1, 1.0 - w1), (w_tilde1, 1.0 - w_tilde1))


# ---------------------------------------------------------------------------
# closed-form bounds


def _tail(pair):
    d = pair.dim
    return math.exp(0.5 * d * math.log(2.0) - pair.separation_sq / 64.0)


def kl_lower_bound(pair):
    """Lower bound on KL(p || p_tilde) for well-separated two-mode mixtures."""
    delta = pair.separation_sq
    overlap = math.exp(-delta / 4.0)
    main = sum(xlogy(w, w) - xlogy(w, wt + overlap) for w, wt in zip(pair.w, pair.w_tilde))
    return float(main - (math.log(4.0) + pair.dim) * _tail(pair))


def fisher_upper_bound(pair):
    """Upper bound on the Fisher divergence between the two mixtures."""
    (w1, w2), (v1, v2) = pair.w, pair.w_tilde
    if min(w1, w2, v1, v2) <= 0:
        raise ValueError("all four weights must be > 0 for the Fisher bound")
    delta = pair.separation_sq
    ratios = (w2 / w1) ** 2 + (v2 / v1) ** 2 + (w1 / w2) ** 2 + (v1 / v2) ** 2
    norms = float(np.sum(pair.a1**2) + np.sum(pair.a2**2))
    return 2.0 * math.exp(-delta / 2.0) * ratios * delta + 8.0 * norms * _tail(pair)


# ---------------------------------------------------------------------------
# numeric divergences


def _fields(mix, x):
    """Log-density and score of a mixture at points ``x`` (numpy)."""
    means = np.asarray(mix.means)
    var = float(mix.var)
    d = means.shape[1]
    diff = x[:, None, :] - means[None]
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(mix.weights, dtype=np.float64))
    logc = logw - 0.5 * np.sum(diff**2, -1) / var - 0.5 * d * math.log(2 * math.pi * var)
    logp = logsumexp(logc, axis=1)
    resp = np.exp(logc - logp[:, None])
    score = -np.einsum("nk,nkd->nd", resp, diff) / var
    return logp, score


def _integrands(pair, t, x):
    p, q = pair.mixtures(t)
    lp, sp = _fields(p, x)
    lq, sq = _fields(q, x)
    gap = lp - lq
    return lp, {"kl": gap, "fisher": np.sum((sp - sq) ** 2, -1), "gap": gap * gap}


class Estimate(NamedTuple):
    value: float
    stderr: float
    method: str


def _grid_integral(pair, t, kind, n):
    axis = np.linspace(-QUAD_HALF_WIDTH, QUAD_HALF_WIDTH, n)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    lp, vals = _integrands(pair, t, pts)
    f = (np.exp(lp) * vals[kind]).reshape(n, n)
    return float(trapezoid(trapezoid(f, axis, axis=1), axis))


def _quadrature(pair, t, kind):
    n = QUAD_START
    prev = _grid_integral(pair, t, kind, n)
    change = math.inf
    for _ in range(QUAD_MAX_LEVELS):
        n = 2 * n - 1
        cur = _grid_integral(pair, t, kind, n)
        change = abs(cur - prev)
        if change < QUAD_TOL:
            return Estimate(cur, change, "quadrature")
        prev = cur
    raise QuadratureError(f"{kind} quadrature did not converge (last change {change:.3g})", achieved=change)


def _monte_carlo(pair, t, kind, n, seed):
    p, _ = pair.mixtures(t)
    x = p.sample(n, np.random.default_rng(seed))
    _, vals = _integrands(pair, t, x)
    v = vals[kind]
    return Estimate(float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(n)), "monte-carlo")


def divergence(pair, t=0.0, kind="kl", *, n_mc=200_000, seed=0):
    """``kind`` in {"kl", "fisher", "gap"}; returns an :class:`Estimate`.

    Quadrature for ``d = 2``, Monte Carlo otherwise.
    """
    if kind not in ("kl", "fisher", "gap"):
        raise ValueError(f"unknown divergence {kind!r}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if pair.dim == 2:
        return _quadrature(pair, t, kind)
    return _monte_carlo(pair, t, kind, n_mc, seed)


def numeric_kl(pair, t=0.0):
    return divergence(pair, t, "kl").value


def numeric_fisher(pair, t=0.0):
    return divergence(pair, t, "fisher").value


def logdensity_gap(pair, t=0.0):
    """Mean squared log-density difference under the first mixture at time ``t``."""
    return divergence(pair, t, "gap").value


# ---------------------------------------------------------------------------
# score-FPE residual


def score_fpe_residual(score_field, x, t):
    """``d_t s - grad[(g^2/2)(div s + |s|^2) - f.s - div f]`` for a traceable field.

    ``score_field(x, t)`` is written in ``jax.numpy``; its time derivative and
    divergence come from autodiff, the outer gradient from central differences.
    """
    x = jnp.asarray(x, jnp.float64)
    t = float(t)
    d = x.shape[0]
    div = lambda y: jnp.trace(jax.jacfwd(score_field)(y, t))  # noqa: E731

    def bracket(y):
        s = score_field(y, t)
        f = -y / (2.0 * (1.0 - t))
        return (div(y) + jnp.sum(s * s)) / (2.0 * (1.0 - t)) - jnp.sum(f * s) + d / (2.0 * (1.0 - t))

    eye = np.eye(d) * FD_STEP
    grad = jnp.stack([(bracket(x + e) - bracket(x - e)) / (2 * FD_STEP) for e in eye])
    ds = jax.jacfwd(score_field, argnums=1)(x, t)
    return np.asarray(ds - grad)


def mixture_score_field(mix):
    """Exact perturbed score ``(x, t) -> grad log pi_t(x)`` of a mixture."""
    from diffusion_pinn.targets import mog_score

    return lambda x, t: mog_score(mog_perturbed(mix, t), x)


# ---------------------------------------------------------------------------
# curves


def weight_sweep(w1_grid, t=0.0, w_tilde1=0.2, a=(-5.0, -5.0)):
    """Rows ``(w1, kl, fisher, gap)`` over the first weight."""
    rows = []
    for w1 in w1_grid:
        pair = example_pair(float(w1), w_tilde1, a)
        rows.append((float(w1), numeric_kl(pair, t), numeric_fisher(pair, t), logdensity_gap(pair, t)))
    return rows


def time_sweep(pair, t_grid):
    """Rows ``(t, kl, fisher, gap)`` along the forward process."""
    return [(float(t), numeric_kl(pair, t), numeric_fisher(pair, t), logdensity_gap(pair, t)) for t in t_grid]


def bounds_table(pairs):
    """Rows ``(kl_bound, kl, kl_ok, fisher_bound, fisher, fisher_ok)``."""
    rows = []
    for pair in pairs:
        kb, kn = kl_lower_bound(pair), numeric_kl(pair)
        fb, fn = fisher_upper_bound(pair), numeric_fisher(pair)
        rows.append((kb, kn, kb <= kn + QUAD_TOL, fb, fn, fb + QUAD_TOL >= fn))
    return rows


def random_separated_pairs(n, rng, min_separation=10.0, box=6.0):
    """Random 2-D pairs with means in ``[-box, box]^2`` at least ``min_separation`` apart."""
    pairs = []
    while len(pairs) < n:
        a1, a2 = rng.uniform(-box, box, size=(2, 2))
        if np.linalg.norm(a1 - a2) < min_separation:
            continue
        w1, v1 = rng.uniform(0.05, 0.95, size=2)
        pairs.append(MogPair(a1, a2, (w1, 1 - w1), (v1, 1 - v1)))
    return pairs
