"""Exact samplers for the benchmark targets, used as ground truth for KL estimates."""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy.optimize import brentq

from diffusion_pinn.errors import UnsupportedTargetError
from diffusion_pinn.targets import (
    DOUBLEWELL_WELLS,
    RINGS_RADII,
    RINGS_VARIANCE,
    RINGS_WEIGHTS,
    doublewell_potential_1d,
)


def funnel_samples(n, rng, d=10):
    """x0 ~ N(0, 9), then x_{1:} ~ N(0, exp(x0) I)."""
    x0 = 3.0 * rng.standard_normal(n)
    rest = np.exp(0.5 * x0)[:, None] * rng.standard_normal((n, d - 1))
    return np.column_stack([x0, rest])


def rings_samples(n, rng):
    """Radius from the radial mixture (kept positive), angle uniform."""
    comp = rng.choice(len(RINGS_RADII), size=n, p=np.asarray(RINGS_WEIGHTS))
    r = np.asarray(RINGS_RADII)[comp] + math.sqrt(RINGS_VARIANCE) * rng.standard_normal(n)
    bad = r <= 0
    while bad.any():
        k = int(bad.sum())
        c = rng.choice(len(RINGS_RADII), size=k, p=np.asarray(RINGS_WEIGHTS))
        r[bad] = np.asarray(RINGS_RADII)[c] + math.sqrt(RINGS_VARIANCE) * rng.standard_normal(k)
        bad = r <= 0
    theta = rng.uniform(0.0, 2 * math.pi, n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


@functools.lru_cache(maxsize=None)
def _doublewell_envelope():
    """Two-Gaussian envelope centred at the wells; returns (centres, scales, weights, log M)."""
    grad = lambda x: -4 * x**3 + 12 * x + 0.5  # noqa: E731
    centres = np.array([brentq(grad, -3, -1), brentq(grad, 1, 3)])
    curv = 12 * centres**2 - 12
    scales = 1.5 / np.sqrt(curv)  # wider than the local curvature for a safe bound
    logf_c = doublewell_potential_1d(centres)
    weights = np.exp(logf_c - logf_c.max()) * scales
    weights = weights / weights.sum()
    grid = np.linspace(-5, 5, 200_001)
    log_ratio = doublewell_potential_1d(grid) - _log_envelope(grid, centres, scales, weights)
    return centres, scales, weights, float(log_ratio.max()) + 1e-3


def _log_envelope(x, centres, scales, weights):
    z = (x[:, None] - centres) / scales
    comps = np.log(weights) - 0.5 * z**2 - np.log(scales * math.sqrt(2 * math.pi))
    m = comps.max(1)
    return m + np.log(np.exp(comps - m[:, None]).sum(1))


def doublewell_1d(n, rng):
    """Rejection sampling from exp(-x^4 + 6 x^2 + x / 2)."""
    centres, scales, weights, log_m = _doublewell_envelope()
    out = np.empty(0)
    while out.size < n:
        k = max(2 * (n - out.size), 64)
        comp = rng.choice(2, size=k, p=weights)
        x = centres[comp] + scales[comp] * rng.standard_normal(k)
        log_accept = doublewell_potential_1d(x) - _log_envelope(x, centres, scales, weights) - log_m
        keep = np.log(rng.uniform(size=k)) < log_accept
        out = np.concatenate([out, x[keep]])
    return out[:n]


def doublewell_samples(n, rng, d=30, wells=DOUBLEWELL_WELLS):
    head = np.column_stack([doublewell_1d(n, rng) for _ in range(wells)])
    return np.column_stack([head, rng.standard_normal((n, d - wells))])


def reference_samples(target, n, rng):
    """Exact draws from ``target``."""
    if target.oracle is not None:
        return np.asarray(target.oracle.sample(n, rng))
    if target.name == "funnel":
        return funnel_samples(n, rng, target.dim)
    if target.name == "rings":
        return rings_samples(n, rng)
    if target.name == "doublewell":
        return doublewell_samples(n, rng, target.dim, target.spec.get("wells", DOUBLEWELL_WELLS))
    raise UnsupportedTargetError(f"no exact sampler for target {target.name!r}")
