"""Sample-quality metrics: kNN KL divergence, mixing-proportion error, score error."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import jax.numpy as jnp
import numpy as np
from scipy.spatial import cKDTree

from diffusion_pinn.errors import UnsupportedTargetError
from diffusion_pinn.targets import assign_modes, mode_weights, mog_perturbed, mog_score

DEFAULT_K = 5
DUPLICATE_JITTER = 1e-12

# KL is reported on the leading coordinates for these targets
PROJECTIONS = {"funnel": 2, "doublewell": 5}


def project(samples, target_name):
    samples = np.asarray(samples, dtype=np.float64)
    keep = PROJECTIONS.get(target_name)
    return samples if keep is None else samples[:, :keep]


def _as_array(samples):
    return np.asarray(getattr(samples, "samples", samples), dtype=np.float64)


def _kth_distances(p, q, k):
    rho = cKDTree(p).query(p, k=k + 1)[0][:, k]
    nu = cKDTree(q).query(p, k=k)[0]
    nu = nu[:, k - 1] if nu.ndim == 2 else nu
    return rho, nu


def knn_kl(samples_p, samples_q, k=DEFAULT_K):
    """k-nearest-neighbour estimate of KL(p || q) from samples.

    ``(d / n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))``. Zero distances
    (duplicate points) are broken by a 1e-12 jitter with a warning.
    """
    p = _as_array(samples_p)
    q = _as_array(samples_q)
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ValueError(f"sample sets must be 2-D with equal dimension, got {p.shape} and {q.shape}")
    n, d = p.shape
    m = q.shape[0]
    if k < 1 or n <= k or m <= k:
        raise ValueError(f"need n, m > k >= 1, got n={n}, m={m}, k={k}")
    rho, nu = _kth_distances(p, q, k)
    if np.any(rho == 0) or np.any(nu == 0):
        warnings.warn("duplicate points give zero neighbour distances; jittering by 1e-12", RuntimeWarning, stacklevel=2)
        rng = np.random.default_rng(0)
        p = p + DUPLICATE_JITTER * rng.standard_normal(p.shape)
        q = q + DUPLICATE_JITTER * rng.standard_normal(q.shape)
        rho, nu = _kth_distances(p, q, k)
    # fsum: exact rounding, so the result does not depend on sample order
    return d / n * math.fsum(np.log(nu / rho)) + math.log(m / (n - 1))


def mode_proportions(samples, modes):
    x = _as_array(samples)
    if x.shape[0] == 0:
        raise ValueError("no samples")
    counts = np.bincount(assign_modes(x, modes), minlength=len(modes))
    return counts / x.shape[0]


def mixing_error(samples, modes):
    """Euclidean distance between empirical and true mode proportions."""
    return float(np.linalg.norm(mode_proportions(samples, modes) - mode_weights(modes)))


def score_l2_error(model, oracle, t, points):
    """Mean squared distance of the model score from the exact perturbed score."""
    if oracle is None:
        raise UnsupportedTargetError("score error needs an analytic mixture oracle")
    from diffusion_pinn.sampler import score_parts

    x = jnp.asarray(_as_array(points))
    fn, params = score_parts(model)
    s = fn(params, x, jnp.full(x.shape[:1], float(t)))
    exact = mog_score(mog_perturbed(oracle, float(t)), x)
    return float(jnp.mean(jnp.sum((s - exact) ** 2, -1)))


@dataclass
class MetricsReport:
    target: str
    method: str
    seed: int
    n_samples: int
    kl_estimate: float | None = None
    kl_dims: int | None = None
    n_reference: int | None = None
    k: int | None = None
    mixing_l2: float | None = None
    score_l2: float | None = None

    def __post_init__(self):
        if self.mixing_l2 is not None and self.mixing_l2 < 0:
            raise ValueError("mixing error must be >= 0")
        if self.kl_estimate is not None and self.n_samples < (self.k or 0) + 1:
            raise ValueError("too few samples for the kNN estimate")

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return Path(path)

    def append_csv(self, path):
        """Append one row keyed by (target, method, seed); writes a header if new."""
        path = Path(path)
        row = self.to_dict()
        fresh = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            if fresh:
                w.writeheader()
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return path
