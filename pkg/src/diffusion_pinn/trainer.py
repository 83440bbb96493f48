"""PINN training of the log-density Fokker-Planck equation.

The model is ``u(x, t) = (1 - t) log mu(x) + t NN(x, t)``, which equals
``log mu`` at ``t = 0`` by construction. Under the forward process of
:mod:`diffusion_pinn.diffusion` the log-density satisfies, after multiplying by
the weight ``2 (1 - t)``,

    2 (1 - t) d_t u = lap u + |grad u|^2 + x . grad u + d,

and the training objective is the mean squared residual of this equation over
collocation points plus ``lam * E_z |grad u(z, T_MAX) + z|^2`` with
``z ~ N(0, I)``.
"""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from diffusion_pinn import neural_core as nc
from diffusion_pinn.checkpoint import save_checkpoint
from diffusion_pinn.diffusion import (
    LMC_DEFAULTS,
    T_MAX,
    CollocationBatch,
    ForwardProcess,
    LmcConfig,
    _collocation,
    default_lmc,
    lmc_init,
    lmc_run,
)
from diffusion_pinn.errors import DivergenceError

log = logging.getLogger(__name__)

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    iterations: int = 50_000
    clip_norm: float = 1.0
    reg_coef: float = 0.0
    batch_size: int | None = None  # None: the LMC batch size
    seed: int = 0
    hutchinson: bool = False
    checkpoint_every: int = 10_000
    lmc: LmcConfig | None = None  # None: per-target defaults
    fp: ForwardProcess = field(default_factory=ForwardProcess)
    track_score_error: bool = False
    chunk: int = 250

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not self.clip_norm > 0:
            raise ValueError(f"clip norm must be > 0, got {self.clip_norm}")
        if not self.reg_coef >= 0:
            raise ValueError(f"regularization coefficient must be >= 0, got {self.reg_coef}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.checkpoint_every < 1 or self.chunk < 1:
            raise ValueError("checkpoint cadence and chunk must be >= 1")


# full-scale settings per target (learning rate, clip, lambda, iterations)
TRAIN_DEFAULTS = {
    "9gaussians": dict(learning_rate=5e-4, clip_norm=1.0, reg_coef=0.0, iterations=400_000),
    "rings": dict(learning_rate=5e-4, clip_norm=1.0, reg_coef=0.0, iterations=1_000_000),
    "funnel": dict(learning_rate=1e-4, clip_norm=1000.0, reg_coef=1.0, iterations=800_000),
    "doublewell": dict(learning_rate=5e-4, clip_norm=1.0, reg_coef=0.0, iterations=1_500_000),
}


def default_train_config(target_name, **overrides):
    base = dict(TRAIN_DEFAULTS.get(target_name, {}))
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class LogDensityModel:
    """``u(x, t) = (1 - t) log mu(x) + t (NN(x, t) + shift(x, t))``.

    ``shift`` is an optional analytic term (a test hook); with zero network
    parameters it lets the model represent a known exact solution.
    """

    params: dict
    target: object
    shift: Callable | None = None

    def u(self, x, t):
        x = jnp.asarray(x, jnp.float64)
        return float(model_record(self.params, self.target, x[None], jnp.full((1,), t), self.shift, order=0).u[0])

    def record(self, x, t):
        """Batched :class:`EvalRecord` at points ``x`` ``(B, d)`` and times ``t``."""
        x = jnp.asarray(x, jnp.float64)
        t = jnp.broadcast_to(jnp.asarray(t, jnp.float64), x.shape[:1])
        return _record_jit(self.params, self.target, x, t, self.shift, 2)

    def score(self, x, t):
        """Spatial gradient of ``u``, batched."""
        x = jnp.asarray(x, jnp.float64)
        t = jnp.broadcast_to(jnp.asarray(t, jnp.float64), x.shape[:1])
        return _score_jit(self.params, x, t, self.target, self.shift)

    def score_parts(self):
        return logdensity_score_fn(self.target, self.shift), self.params


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """Vector field ``s(x, t) = (1 - t) grad log mu(x) + t NN_vec(x, t)``."""

    params: dict
    target: object

    def score(self, x, t):
        x = jnp.asarray(x, jnp.float64)
        t = jnp.broadcast_to(jnp.asarray(t, jnp.float64), x.shape[:1])
        return _vec_score_jit(self.params, x, t, self.target)

    def score_parts(self):
        return vector_score_fn(self.target), self.params


def _shift_terms(shift, x, t, order):
    if order == 0:
        return jax.vmap(shift)(x, t), None, None, None
    if order == 1:
        u, g = jax.vmap(jax.value_and_grad(shift))(x, t)
        return u, g, None, jax.vmap(jax.grad(shift, argnums=1))(x, t)
    recs = jax.vmap(lambda a, b: nc.derivatives(shift, a, b))(x, t)
    return recs.u, recs.grad_x, recs.laplacian_x, recs.dt


def model_record(params, target, x, t, shift=None, order=2):
    """Batched value/gradient/Laplacian/time-derivative of the model."""
    tay = nc.nn_taylor(params, x, t, order=order, second="trace")
    n = tay.value[:, 0]
    lm = jax.vmap(target.log_mu)(x)
    if order == 0:
        if shift is not None:
            n = n + _shift_terms(shift, x, t, 0)[0]
        return nc.EvalRecord((1 - t) * lm + t * n, None, None, None)
    gn, dn = tay.grad[:, :, 0], tay.dt[:, 0]
    ln = tay.second[:, 0] if order >= 2 else None
    if shift is not None:
        su, sg, sl, sd = _shift_terms(shift, x, t, order)
        n, gn, dn = n + su, gn + sg, dn + sd
        ln = None if ln is None else ln + sl
    glm = jax.vmap(target.grad_log_mu)(x)
    s = (1 - t)[:, None]
    u = (1 - t) * lm + t * n
    grad = s * glm + t[:, None] * gn
    dt = -lm + n + t * dn
    lap = None
    if order >= 2:
        lap = (1 - t) * jax.vmap(target.laplacian_log_mu)(x) + t * ln
    return nc.EvalRecord(u, grad, lap, dt)


def model_probes(params, target, x, t, directions, shift=None):
    """``v^T H v`` of the model for each direction in ``directions`` ``(B, k, d)``."""
    tay = nc.nn_taylor(params, x, t, directions=directions, order=2, second="diag")
    pn = tay.second[:, :, 0]
    if shift is not None:
        pn = pn + jax.vmap(_hvp_quad(lambda a, b: jax.grad(shift)(a, b)))(x, t, directions)
    p0 = jax.vmap(_hvp_quad(lambda a, b: target.grad_log_mu(a)))(x, t, directions)
    return (1 - t)[:, None] * p0 + t[:, None] * pn


def _hvp_quad(grad_fn):
    def quad(x, t, vs):
        def one(v):
            return v @ jax.jvp(lambda y: grad_fn(y, t), (x,), (v,))[1]

        return jax.vmap(one)(vs)

    return quad


_record_jit = jax.jit(model_record, static_argnums=(1, 4, 5))


@functools.partial(jax.jit, static_argnums=(3, 4))
def _score_jit(params, x, t, target, shift):
    return model_record(params, target, x, t, shift, order=1).grad_x


@functools.lru_cache(maxsize=None)
def logdensity_score_fn(target, shift=None):
    """Traceable ``fn(params, x, t)`` returning the batched model score."""

    def fn(params, x, t):
        return model_record(params, target, x, t, shift, order=1).grad_x

    return fn


@functools.lru_cache(maxsize=None)
def vector_score_fn(target):
    def fn(params, x, t):
        n = nc.nn_taylor(params, x, t, order=0).value
        return (1 - t)[:, None] * jax.vmap(target.grad_log_mu)(x) + t[:, None] * n

    return fn


# ---------------------------------------------------------------------------
# residuals and objective


def first_order_part(rec, x, t):
    """Everything in the rescaled residual except the Laplacian."""
    d = x.shape[-1]
    return 2 * (1 - t) * rec.dt - (jnp.sum(rec.grad_x**2, -1) + jnp.sum(x * rec.grad_x, -1) + d)


def residual_from_record(rec, x, t):
    return first_order_part(rec, x, t) - rec.laplacian_x


def _callable_record(fn, x, t):
    return jax.vmap(lambda a, b: nc.derivatives(fn, a, b))(x, t)


def _as_batch(x, t):
    x = jnp.asarray(x, jnp.float64)
    single = x.ndim == 1
    x = x[None] if single else x
    t = jnp.broadcast_to(jnp.asarray(t, jnp.float64), x.shape[:1])
    return x, t, single


def residual(model, x, t):
    """Rescaled log-density FPE residual at ``(x, t)`` (single point or batch).

    ``model`` is a :class:`LogDensityModel` or any scalar ``fn(x, t)`` written
    in ``jax.numpy`` (used for exact-solution checks).
    """
    xb, tb, single = _as_batch(x, t)
    if isinstance(model, LogDensityModel):
        rec = model.record(xb, tb)
    else:
        rec = _callable_record(model, xb, tb)
    r = residual_from_record(rec, xb, tb)
    if not bool(jnp.all(jnp.isfinite(r))):
        bad = int(jnp.argmax(~jnp.isfinite(r)))
        raise FloatingPointError(f"non-finite residual at x={np.asarray(xb[bad])}, t={float(tb[bad])}")
    return float(r[0]) if single else r


def _regularizer(params, target, z, t_max, shift):
    grad = model_record(params, target, z, jnp.full(z.shape[:1], t_max), shift, order=1).grad_x
    return jnp.mean(jnp.sum((grad + z) ** 2, -1))


def _exact_objective(params, target, xt, t, z, lam, t_max, shift=None):
    rec = model_record(params, target, xt, t, shift)
    res = jnp.mean(residual_from_record(rec, xt, t) ** 2)
    reg = _regularizer(params, target, z, t_max, shift) if z is not None else jnp.zeros(())
    return res + lam * reg, (res, reg)


def _hutchinson_objective(params, target, xt, t, v1, v2, z, lam, t_max, shift=None):
    rec = model_record(params, target, xt, t, shift, order=1)
    base = first_order_part(rec, xt, t)
    probes = model_probes(params, target, xt, t, jnp.stack([v1, v2], axis=1), shift)
    r1 = base - probes[:, 0]
    r2 = base - probes[:, 1]
    surrogate = jnp.mean(nc.detach(2.0 * r1) * r2)
    reg = _regularizer(params, target, z, t_max, shift) if z is not None else jnp.zeros(())
    # the value reported is an unbiased estimate of the residual loss
    return surrogate + lam * reg, (jnp.mean(nc.detach(r1) * nc.detach(r2)), reg)


def _check_prior(lam, prior_draws):
    if lam > 0 and (prior_draws is None or len(prior_draws) == 0):
        raise ValueError("lam > 0 needs prior draws")
    if lam == 0 and prior_draws is not None and len(prior_draws) > 0:
        raise ValueError("prior draws given but lam == 0")
    return None if prior_draws is None or len(prior_draws) == 0 else jnp.asarray(prior_draws, jnp.float64)


def loss_batch(model, batch, lam=0.0, prior_draws=None, t_max=T_MAX):
    """Monte Carlo objective on a collocation batch (exact Laplacian)."""
    z = _check_prior(lam, prior_draws)
    if isinstance(model, LogDensityModel):
        val, _ = _exact_jit(model.params, model.target, batch.xt, batch.t, z, lam, t_max, model.shift)
        return float(val)
    rec = _callable_record(model, batch.xt, batch.t)
    val = jnp.mean(residual_from_record(rec, batch.xt, batch.t) ** 2)
    if z is not None:
        grad = jax.vmap(jax.grad(model), in_axes=(0, None))(z, t_max)
        val = val + lam * jnp.mean(jnp.sum((grad + z) ** 2, -1))
    return float(val)


_exact_jit = jax.jit(_exact_objective, static_argnums=(1, 7))
_exact_grad_jit = jax.jit(jax.grad(_exact_objective, has_aux=True), static_argnums=(1, 7))
_hutch_grad_jit = jax.jit(jax.grad(_hutchinson_objective, has_aux=True), static_argnums=(1, 9))


def exact_gradient(model, batch, lam=0.0, prior_draws=None, t_max=T_MAX):
    """Exact parameter gradient of :func:`loss_batch`."""
    z = _check_prior(lam, prior_draws)
    grads, _ = _exact_grad_jit(model.params, model.target, batch.xt, batch.t, z, lam, t_max, model.shift)
    return grads


def unbiased_gradient(model, batch, lam=0.0, prior_draws=None, t_max=T_MAX):
    """Two-probe Hutchinson gradient estimate of the objective.

    Per row: ``detach(2 r1) * grad r2`` with ``r_k`` the residual whose
    Laplacian is replaced by ``v_k^T H v_k``. Unbiased when the probes are
    independent with identity second moment.
    """
    if batch.v1 is None or batch.v2 is None:
        raise ValueError("batch carries no probe vectors; build it with hutchinson=True")
    z = _check_prior(lam, prior_draws)
    grads, _ = _hutch_grad_jit(
        model.params, model.target, batch.xt, batch.t, batch.v1, batch.v2, z, lam, t_max, model.shift
    )
    return grads


# ---------------------------------------------------------------------------
# score-FPE ablation


def score_record(params, target, x, t):
    """Vector model value, Jacobian ``J[j, i] = d_i s_j``, grad of divergence, time derivative."""
    tay = nc.nn_taylor(params, x, t, order=2, second="full")
    n = tay.value
    jn = jnp.swapaxes(tay.grad, 1, 2)  # (B, out=j, k=i)
    gdn = jnp.einsum("bijj->bi", tay.second)
    dn = tay.dt
    s0 = jax.vmap(target.grad_log_mu)(x)
    j0 = jax.vmap(jax.jacfwd(target.grad_log_mu))(x)
    gd0 = jax.vmap(jax.grad(target.laplacian_log_mu))(x)
    a, b = (1 - t)[:, None], t[:, None]
    s = a * s0 + b * n
    jac = a[:, :, None] * j0 + b[:, :, None] * jn
    graddiv = a * gd0 + b * gdn
    ds = -s0 + n + b * dn
    return s, jac, graddiv, ds


def score_residual_from_terms(s, jac, graddiv, ds, x, t):
    """Rescaled score-FPE residual 2(1-t) d_t s - grad(div s + |s|^2 + x.s)."""
    grad_phi = graddiv + 2 * jnp.einsum("bj,bji->bi", s, jac) + s + jnp.einsum("bj,bji->bi", x, jac)
    return 2 * (1 - t)[:, None] * ds - grad_phi


def score_residual(field_or_model, x, t):
    """Rescaled score-FPE residual vectors; accepts a :class:`ScoreModel` or ``s(x, t)``."""
    xb, tb, single = _as_batch(x, t)
    if isinstance(field_or_model, ScoreModel):
        terms = _score_terms_jit(field_or_model.params, field_or_model.target, xb, tb)
    else:
        fn = field_or_model

        def one(a, b):
            s = fn(a, b)
            jac = jax.jacfwd(fn)(a, b)
            graddiv = jax.grad(lambda y: jnp.trace(jax.jacfwd(fn)(y, b)))(a)
            ds = jax.jacfwd(fn, argnums=1)(a, b)
            return s, jac, graddiv, ds

        terms = jax.vmap(one)(xb, tb)
    r = score_residual_from_terms(*terms, xb, tb)
    return r[0] if single else r


_score_terms_jit = jax.jit(score_record, static_argnums=(1,))


@functools.partial(jax.jit, static_argnums=(3,))
def _vec_score_jit(params, x, t, target):
    n = nc.nn_taylor(params, x, t, order=0).value
    return (1 - t)[:, None] * jax.vmap(target.grad_log_mu)(x) + t[:, None] * n


def _score_objective(params, target, xt, t, z, lam, t_max):
    r = score_residual_from_terms(*score_record(params, target, xt, t), xt, t)
    res = jnp.mean(jnp.sum(r * r, -1))
    if z is None:
        return res, (res, jnp.zeros(()))
    n = nc.nn_taylor(params, z, jnp.full(z.shape[:1], t_max), order=0).value
    s = (1 - t_max) * jax.vmap(target.grad_log_mu)(z) + t_max * n
    reg = jnp.mean(jnp.sum((s + z) ** 2, -1))
    return res + lam * reg, (res, reg)


# ---------------------------------------------------------------------------
# optimizer


class AdamState(NamedTuple):
    m: dict
    v: dict


def init_adam(params):
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(zeros, zeros)


def learning_rate_at(iteration, cfg):
    """Linear decay from ``cfg.learning_rate`` to zero over ``cfg.iterations``."""
    total = max(cfg.iterations, 1)
    return cfg.learning_rate * (1.0 - iteration / total)


def clip_by_global_norm(grads, max_norm):
    norm = nc.global_norm(grads)
    scale = jnp.where(norm > max_norm, max_norm / jnp.where(norm > 0, norm, 1.0), 1.0)
    return jax.tree_util.tree_map(lambda g: g * scale, grads), norm


def adam_step(params, state, grads, iteration, cfg):
    """One clipped Adam update; returns ``(params, state, pre_clip_grad_norm)``."""
    grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
    step = iteration + 1
    m = jax.tree_util.tree_map(lambda m, g: ADAM_B1 * m + (1 - ADAM_B1) * g, state.m, grads)
    v = jax.tree_util.tree_map(lambda v, g: ADAM_B2 * v + (1 - ADAM_B2) * g * g, state.v, grads)
    c1 = 1 - ADAM_B1**step
    c2 = 1 - ADAM_B2**step
    lr = learning_rate_at(iteration, cfg)
    params = jax.tree_util.tree_map(
        lambda p, m, v: p - lr * (m / c1) / (jnp.sqrt(v / c2) + ADAM_EPS), params, m, v
    )
    return params, AdamState(m, v), norm


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainLog:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    reg: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    score_error: list = field(default_factory=list)  # (iteration, value) at checkpoints
    final_loss: float | None = None  # residual loss of the final model on held-out points

    def extend(self, start, loss, reg, gnorm, lr):
        n = len(loss)
        self.iteration.extend(range(start, start + n))
        self.loss.extend(np.asarray(loss).tolist())
        self.reg.extend(np.asarray(reg).tolist())
        self.grad_norm.extend(np.asarray(gnorm).tolist())
        self.lr.extend(np.asarray(lr).tolist())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "reg", "grad_norm", "lr"])
            for row in zip(self.iteration, self.loss, self.reg, self.grad_norm, self.lr):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return Path(path)

    def score_error_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "score_l2_error"])
            for it, val in self.score_error:
                w.writerow([it, repr(float(val))])
        return Path(path)


def _resolve(target, cfg):
    lmc = cfg.lmc or default_lmc(target.name if target.name in LMC_DEFAULTS else "9gaussians")
    batch = cfg.batch_size or lmc.batch_size
    return lmc, batch


def heldout_loss(params, target, lmc, kind, key, fp, n=2048):
    """Mean squared residual on ``n`` fresh collocation points."""
    k_init, k_chain, k_col = jax.random.split(key, 3)
    grad_batch = jax.vmap(target.grad_log_mu)
    x0, _ = lmc_run(grad_batch, lmc_init(k_init, n, target.dim), k_chain, lmc.step_size, lmc.iterations)
    col = _collocation(x0, fp.t_min, fp.t_max, k_col)
    if kind == "score":
        r = score_residual_from_terms(*score_record(params, target, col.xt, col.t), col.xt, col.t)
        return float(jnp.mean(jnp.sum(r * r, -1)))
    rec = model_record(params, target, col.xt, col.t)
    return float(jnp.mean(residual_from_record(rec, col.xt, col.t) ** 2))


def _make_runner(target, cfg, lmc, batch, objective_kind):
    """Jitted function running ``n`` iterations with ``lax.scan``."""
    fp = cfg.fp
    d = target.dim
    lam = cfg.reg_coef
    grad_batch = jax.vmap(target.grad_log_mu)

    def objective(params, xt, t, v1, v2, z):
        if objective_kind == "score":
            return _score_objective(params, target, xt, t, z, lam, fp.t_max)
        if objective_kind == "hutchinson":
            return _hutchinson_objective(params, target, xt, t, v1, v2, z, lam, fp.t_max)
        return _exact_objective(params, target, xt, t, z, lam, fp.t_max)

    value_grad = jax.value_and_grad(objective, has_aux=True)

    def chain(key):
        ki, kc = jax.random.split(key)
        return lmc_run(grad_batch, lmc_init(ki, batch, d), kc, lmc.step_size, lmc.iterations)

    def one(carry, it):
        params, opt, x0, base_key = carry
        key = jax.random.fold_in(base_key, it)
        k_lmc, k_col, k_z = jax.random.split(key, 3)
        if lmc.refresh:
            x0, bad = chain(k_lmc)
        else:
            x0, bad = jax.lax.cond(
                it % lmc.refresh_period == 0, chain, lambda k: (x0, jnp.asarray(-1)), k_lmc
            )
        col = _collocation(x0, fp.t_min, fp.t_max, k_col, objective_kind == "hutchinson")
        z = jax.random.normal(k_z, (batch, d)) if lam > 0 else None
        (_, (res, reg)), grads = value_grad(params, col.xt, col.t, col.v1, col.v2, z)
        params, opt, gnorm = adam_step(params, opt, grads, it, cfg)
        lr = learning_rate_at(it, cfg)
        bad_flag = (bad >= 0) | ~jnp.all(jnp.isfinite(x0))
        return (params, opt, x0, base_key), (res, reg, gnorm, lr, bad_flag)

    @functools.partial(jax.jit, static_argnums=(5,))
    def run(params, opt, x0, base_key, start, n):
        its = start + jnp.arange(n)
        carry, out = jax.lax.scan(one, (params, opt, x0, base_key), its)
        return carry[0], carry[1], carry[2], out

    return run


def _score_error_probe(model, target, seed, n=2000, times=(0.05, 0.25, 0.5, 0.75, 0.95)):
    from diffusion_pinn.metrics import score_l2_error
    from diffusion_pinn.targets import mog_perturbed

    rng = np.random.default_rng(seed)
    vals = []
    for t in times:
        pts = mog_perturbed(target.oracle, t).sample(n, rng)
        vals.append(score_l2_error(model, target.oracle, t, pts))
    return float(np.mean(vals))


def _train_loop(target, cfg, kind, out_dir, init_params, out_dim, metadata, wrap):
    lmc, batch = _resolve(target, cfg)
    params = init_params if init_params is not None else nc.init_network(target.dim, cfg.seed, out_dim=out_dim)
    opt = init_adam(params)
    run = _make_runner(target, cfg, lmc, batch, kind)
    base_key = jax.random.PRNGKey(cfg.seed)
    x0 = jnp.zeros((batch, target.dim))
    log_ = TrainLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    meta = {"target": target.spec, "mode": kind if kind == "score" else "logdensity", **(metadata or {})}
    track = cfg.track_score_error and target.oracle is not None

    def checkpoint(it, params):
        if track:
            err = _score_error_probe(wrap(params), target, cfg.seed + 7919)
            log_.score_error.append((it, err))
        if out_dir is not None:
            save_checkpoint(out_dir / f"ckpt_{it:07d}.dpc", params, seed=cfg.seed, iteration=it, metadata=meta)

    if track:
        log_.score_error.append((0, _score_error_probe(wrap(params), target, cfg.seed + 7919)))
    it = 0
    while it < cfg.iterations:
        next_ckpt = (it // cfg.checkpoint_every + 1) * cfg.checkpoint_every
        n = min(cfg.chunk, next_ckpt - it, cfg.iterations - it)
        new_params, new_opt, new_x0, (res, reg, gnorm, lr, bad) = run(params, opt, x0, base_key, it, n)
        res = np.asarray(res)
        finite = np.isfinite(res) & np.isfinite(np.asarray(gnorm)) & ~np.asarray(bad)
        if not finite.all():
            first = it + int(np.argmin(finite))
            raise DivergenceError(
                f"training on {target.name!r} produced a non-finite loss at iteration {first}",
                step=first,
                last_params=params,
            )
        params, opt, x0 = new_params, new_opt, new_x0
        log_.extend(it, res, reg, gnorm, lr)
        it += n
        if it % cfg.checkpoint_every == 0 and it < cfg.iterations:
            checkpoint(it, params)
            log.info("iteration %d: loss %.3e", it, res[-1])
    checkpoint(cfg.iterations, params)
    log_.final_loss = heldout_loss(params, target, lmc, kind, jax.random.fold_in(base_key, 2**31 - 1), cfg.fp)
    return params, log_


def train(target, cfg, *, out_dir=None, init_params=None, metadata=None):
    """Run PINN training; returns ``(LogDensityModel, TrainLog)``.

    Deterministic given ``cfg.seed``. On a non-finite loss a
    :class:`DivergenceError` is raised carrying the last finite parameters.
    """
    kind = "hutchinson" if cfg.hutchinson else "exact"
    wrap = lambda p: LogDensityModel(p, target)  # noqa: E731
    params, log_ = _train_loop(target, cfg, kind, out_dir, init_params, 1, metadata, wrap)
    return LogDensityModel(params, target), log_


def train_score_fpe(target, cfg, *, out_dir=None, init_params=None, metadata=None):
    """Ablation: fit the score FPE with a vector-output network."""
    wrap = lambda p: ScoreModel(p, target)  # noqa: E731
    params, log_ = _train_loop(target, replace(cfg, hutchinson=False), "score", out_dir, init_params, target.dim, metadata, wrap)
    return ScoreModel(params, target), log_


def model_from_checkpoint(params, header, target):
    """Rebuild a model object from loaded checkpoint parts."""
    mode = header.get("metadata", {}).get("mode", "logdensity")
    if mode == "score":
        return ScoreModel(params, target)
    return LogDensityModel(params, target)


__all__ = [
    "AdamState",
    "CollocationBatch",
    "LogDensityModel",
    "ScoreModel",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "default_train_config",
    "exact_gradient",
    "init_adam",
    "loss_batch",
    "residual",
    "score_residual",
    "train",
    "train_score_fpe",
    "unbiased_gradient",
]

