"""Diffusion sampling with a PINN-learned log-density.

The package learns the log-density of the diffused target, log pi_t(x), by
minimizing the residual of the log-density Fokker-Planck equation, then draws
samples with an exponential-integrator discretization of the reverse SDE.
"""

import os

# The legacy XLA CPU runtime is markedly faster for the small float64 matmuls
# used here; must be set before jax is first imported.
if "jax" not in __import__("sys").modules:
    os.environ.setdefault("XLA_FLAGS", "--xla_cpu_use_thunk_runtime=false")

import jax

jax.config.update("jax_enable_x64", True)

from diffusion_pinn.errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    DivergenceError,
    QuadratureError,
    UnsupportedTargetError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "QuadratureError",
    "UnsupportedTargetError",
    "__version__",
]
