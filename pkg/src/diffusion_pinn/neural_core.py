"""Network architecture and exact input/parameter derivatives.

The network is

    NN(x, t) = dec(embx(x) + embt(emb(t)))

with three GELU MLPs: ``embx`` of widths ``[d, 128]``, ``embt`` of widths
``[256, 128, 128]`` fed by a sinusoidal embedding of ``t`` and ``dec`` of
widths ``[128, 128, 128, out]``. The embedding blocks end in a GELU, the
decoder ends in a linear layer.

Input derivatives are propagated forward through the layers in Taylor mode: a
batch of points carries its value, its first derivatives along ``k`` spatial
directions, second-order terms along those directions and the time derivative.
With the identity as direction set and ``second="trace"`` this yields the exact
Laplacian in a single pass, which is far cheaper than nesting reverse-mode
Hessians. Parameter gradients of any expression built from these quantities
come from reverse-mode autodiff on top (``param_gradient``).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import erf

HIDDEN = 128
TIME_EMBED_DIM = 256
BLOCKS = ("embx", "embt", "dec")

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class EvalRecord(NamedTuple):
    """Value and derivatives of a scalar field u(x, t).

    Fields broadcast over a leading batch axis when evaluated on a batch.
    """

    u: jax.Array
    grad_x: jax.Array
    laplacian_x: jax.Array
    dt: jax.Array


class Taylor(NamedTuple):
    """Raw output of the forward Taylor pass on a batch.

    ``value`` is ``(B, out)``, ``grad`` is ``(B, k, out)`` (directional first
    derivatives), ``dt`` is ``(B, out)``. ``second`` depends on the mode:
    ``(B, out)`` for "trace", ``(B, k, out)`` for "diag", ``(B, k, k, out)`` for
    "full" and ``None`` when not requested.
    """

    value: jax.Array
    grad: jax.Array | None
    second: jax.Array | None
    dt: jax.Array | None


# ---------------------------------------------------------------------------
# parameters


def layer_widths(d, out_dim=1, hidden=HIDDEN, time_dim=TIME_EMBED_DIM):
    """Widths of the three blocks for input dimension ``d``."""
    return {
        "embx": [d, hidden],
        "embt": [time_dim, hidden, hidden],
        "dec": [hidden, hidden, hidden, out_dim],
    }


def _param_names(widths):
    for block in BLOCKS:
        for i in range(len(widths[block]) - 1):
            yield block, i


def init_network(d, seed, *, out_dim=1, hidden=HIDDEN, time_dim=TIME_EMBED_DIM, zero=False):
    """Initialize network parameters.

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and biases are
    zero. The draw uses a numpy Generator seeded with ``seed`` so the result is
    bit-identical across runs. ``zero=True`` returns all-zero parameters, for
    which the network output is identically zero.
    """
    if d < 1:
        raise ValueError(f"input dimension must be >= 1, got {d}")
    if time_dim % 2:
        raise ValueError(f"time embedding dimension must be even, got {time_dim}")
    widths = layer_widths(d, out_dim, hidden, time_dim)
    rng = np.random.default_rng(seed)
    params = {}
    for block, i in _param_names(widths):
        fan_in, fan_out = widths[block][i], widths[block][i + 1]
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{block}.{i}.weight"] = jnp.asarray(w, dtype=jnp.float64)
        params[f"{block}.{i}.bias"] = jnp.zeros(fan_out, dtype=jnp.float64)
    return params


def widths_from_params(params):
    """Recover the block widths from a parameter dict."""
    widths = {}
    for block in BLOCKS:
        layers = []
        i = 0
        while f"{block}.{i}.weight" in params:
            w = params[f"{block}.{i}.weight"]
            if not layers:
                layers.append(int(w.shape[0]))
            layers.append(int(w.shape[1]))
            i += 1
        if not layers:
            raise ValueError(f"parameters have no '{block}' block")
        widths[block] = layers
    return widths


def input_dim(params):
    return int(params["embx.0.weight"].shape[0])


def output_dim(params):
    last = len(widths_from_params(params)["dec"]) - 2
    return int(params[f"dec.{last}.weight"].shape[1])


def num_parameters(params):
    return sum(int(np.prod(p.shape)) for p in params.values())


# ---------------------------------------------------------------------------
# activations: (f, f', f'')


def _gelu(z):
    cdf = 0.5 * (1.0 + erf(z / _SQRT2))
    pdf = jnp.exp(-0.5 * z * z) * _INV_SQRT_2PI
    return z * cdf, cdf + z * pdf, pdf * (2.0 - z * z)


def _identity(z):
    return z, jnp.ones_like(z), jnp.zeros_like(z)


ACTIVATIONS = {"gelu": _gelu, "identity": _identity}


def gelu(z):
    """Exact (erf-based) GELU."""
    return _gelu(z)[0]


# ---------------------------------------------------------------------------
# time embedding


def sinusoidal_embed(t, dim=TIME_EMBED_DIM, *, base=10000.0, scale=1000.0):
    """Interleaved sin/cos embedding of ``scale * t``.

    Entry ``2i`` is ``sin(scale * t * w_i)`` and entry ``2i + 1`` is
    ``cos(scale * t * w_i)`` with ``w_i = base ** (-2i / dim)``. ``t`` may be a
    scalar or an array; the embedding is appended as a trailing axis.
    """
    return _embed_with_dt(t, dim, base, scale)[0]


def _embed_with_dt(t, dim, base=10000.0, scale=1000.0):
    if dim % 2:
        raise ValueError(f"embedding dimension must be even, got {dim}")
    t = jnp.asarray(t, dtype=jnp.float64)
    freqs = scale * base ** (-2.0 * jnp.arange(dim // 2) / dim)
    arg = t[..., None] * freqs
    s, c = jnp.sin(arg), jnp.cos(arg)
    emb = jnp.stack([s, c], axis=-1).reshape(t.shape + (dim,))
    demb = jnp.stack([c * freqs, -s * freqs], axis=-1).reshape(t.shape + (dim,))
    return emb, demb


# ---------------------------------------------------------------------------
# forward Taylor propagation


def _linear(p, name, v, g, s, dt):
    w, b = p[f"{name}.weight"], p[f"{name}.bias"]
    v = v @ w + b
    g = None if g is None else g @ w
    s = None if s is None else s @ w
    dt = None if dt is None else dt @ w
    return v, g, s, dt


def _activate(fn, second, v, g, s, dt):
    a0, a1, a2 = fn(v)
    if second is not None and g is not None:
        if second == "trace":
            curv = a2 * jnp.sum(g * g, axis=1)
            s = curv if s is None else a1 * s + curv
        elif second == "diag":
            curv = a2[:, None, :] * g * g
            s = curv if s is None else a1[:, None, :] * s + curv
        else:
            curv = a2[:, None, None, :] * g[:, :, None, :] * g[:, None, :, :]
            s = curv if s is None else a1[:, None, None, :] * s + curv
    g = None if g is None else a1[:, None, :] * g
    dt = None if dt is None else a1 * dt
    return a0, g, s, dt


def nn_taylor(
    params,
    x,
    t,
    *,
    directions=None,
    order=2,
    second="trace",
    activation="gelu",
):
    """Batched forward Taylor pass.

    Parameters
    ----------
    x : (B, d) array
    t : (B,) array
    directions : None, (k, d) or (B, k, d)
        Spatial directions for the derivative channels; ``None`` uses the
        coordinate axes, so the "trace" mode gives the Laplacian.
    order : 0, 1 or 2
        Highest derivative order to propagate. Time derivatives are first
        order only.
    second : "trace", "diag" or "full"
        How second-order terms are kept (see :class:`Taylor`).
    """
    if second not in ("trace", "diag", "full"):
        raise ValueError(f"unknown second-order mode {second!r}")
    fn = ACTIVATIONS[activation]
    widths = widths_from_params(params)
    x = jnp.asarray(x, dtype=jnp.float64)
    t = jnp.asarray(t, dtype=jnp.float64)
    if x.ndim != 2 or x.shape[1] != widths["embx"][0]:
        raise ValueError(f"expected x of shape (B, {widths['embx'][0]}), got {x.shape}")
    if t.shape != x.shape[:1]:
        raise ValueError(f"expected t of shape {x.shape[:1]}, got {t.shape}")
    batch = x.shape[0]
    mode = second if order >= 2 else None

    # data embedding: linear in x, so second-order terms start at zero
    w0 = params["embx.0.weight"]
    v = x @ w0 + params["embx.0.bias"]
    g = None
    if order >= 1:
        if directions is None:
            g = jnp.broadcast_to(w0, (batch,) + w0.shape)
        else:
            directions = jnp.asarray(directions, dtype=jnp.float64)
            g = directions @ w0
            if g.ndim == 2:
                g = jnp.broadcast_to(g, (batch,) + g.shape)
    s = None
    v, g, s, _ = _activate(fn, mode, v, g, s, None)
    for i in range(1, len(widths["embx"]) - 1):
        v, g, s, _ = _linear(params, f"embx.{i}", v, g, s, None)
        v, g, s, _ = _activate(fn, mode, v, g, s, None)

    # time embedding: depends on t only
    e, de = _embed_with_dt(t, widths["embt"][0])
    de = de if order >= 1 else None
    for i in range(len(widths["embt"]) - 1):
        e, _, _, de = _linear(params, f"embt.{i}", e, None, None, de)
        e, _, _, de = _activate(fn, None, e, None, None, de)

    v = v + e
    dt = de
    n_dec = len(widths["dec"]) - 1
    for i in range(n_dec):
        v, g, s, dt = _linear(params, f"dec.{i}", v, g, s, dt)
        if i < n_dec - 1:
            v, g, s, dt = _activate(fn, mode, v, g, s, dt)

    if mode is not None and s is None:
        # purely linear network: zero curvature
        if mode == "trace":
            s = jnp.zeros_like(v)
        elif mode == "diag":
            s = jnp.zeros_like(g)
        else:
            s = jnp.zeros(g.shape[:2] + g.shape[1:], dtype=v.dtype)
    return Taylor(v, g, s, dt)


# ---------------------------------------------------------------------------
# single-point conveniences


def _as_point(params, x, t):
    x = jnp.asarray(x, dtype=jnp.float64)
    d = input_dim(params)
    if x.shape != (d,):
        raise ValueError(f"expected x of shape ({d},), got {x.shape}")
    t = jnp.asarray(t, dtype=jnp.float64)
    if t.shape != ():
        raise ValueError(f"expected scalar t, got shape {t.shape}")
    return x[None], t[None]


def nn_apply(params, x, t, *, activation="gelu"):
    """Network output on a batch: ``(B,)`` for scalar networks, else ``(B, out)``."""
    out = nn_taylor(params, x, t, order=0, activation=activation).value
    return out[:, 0] if out.shape[1] == 1 else out


def nn_eval(params, x, t, *, activation="gelu"):
    """Scalar network output at one point ``x`` (shape ``(d,)``) and time ``t``."""
    xb, tb = _as_point(params, x, t)
    out = nn_taylor(params, xb, tb, order=0, activation=activation).value[0]
    return out[0] if out.shape[0] == 1 else out


def nn_derivatives(params, x, t, *, activation="gelu"):
    """Exact value, spatial gradient, Laplacian and time derivative at a point."""
    xb, tb = _as_point(params, x, t)
    r = nn_taylor(params, xb, tb, order=2, second="trace", activation=activation)
    return EvalRecord(r.value[0, 0], r.grad[0, :, 0], r.second[0, 0], r.dt[0, 0])


def quadratic_probe(params, x, t, v, *, activation="gelu"):
    """``v^T H v`` for the spatial Hessian ``H`` of the network at ``(x, t)``."""
    xb, tb = _as_point(params, x, t)
    v = jnp.asarray(v, dtype=jnp.float64)
    r = nn_taylor(params, xb, tb, directions=v[None], second="diag", activation=activation)
    return r.second[0, 0, 0]


def derivatives(fn, x, t):
    """Value, gradient, Laplacian and time derivative of any scalar ``fn(x, t)``.

    Plain autodiff (forward-over-reverse Hessian); used for analytic fields and
    test hooks, not for the network itself.
    """
    x = jnp.asarray(x, dtype=jnp.float64)
    t = jnp.asarray(t, dtype=jnp.float64)
    u, grad = jax.value_and_grad(fn, argnums=0)(x, t)
    hess = jax.hessian(fn, argnums=0)(x, t)
    dt = jax.grad(fn, argnums=1)(x, t)
    return EvalRecord(u, grad, jnp.trace(hess), dt)


# ---------------------------------------------------------------------------
# parameter gradients


def detach(value):
    """Treat ``value`` as a constant under parameter differentiation."""
    return jax.lax.stop_gradient(value)


def param_gradient(expr, params):
    """Exact gradient of a scalar ``expr(params)`` over all parameter arrays."""
    return jax.grad(expr)(params)


def global_norm(tree):
    leaves = jax.tree_util.tree_leaves(tree)
    return jnp.sqrt(sum(jnp.sum(leaf * leaf) for leaf in leaves))
