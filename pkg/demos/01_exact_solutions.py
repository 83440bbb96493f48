"""
Residuals of known solutions
============================

The log-density of a Gaussian target under the forward process is known in
closed form, and so is that of a Gaussian mixture. Both should make the
equation residual vanish up to rounding. A randomly initialised network
should not.
"""

import jax.numpy as jnp
import numpy as np

from diffusion_pinn import neural_core as nc
from diffusion_pinn import targets as tg
from diffusion_pinn import trainer as tr

rng = np.random.default_rng(0)
x = 2.0 * rng.normal(size=(200, 2))
t = rng.uniform(0.001, 0.999, size=200)

# a standard normal stays standard normal along the forward process
gauss = tr.residual(lambda y, s: -0.5 * jnp.sum(y * y), x, t)
print("gaussian, max |R| =", float(np.max(np.abs(gauss))))

# two unit-variance modes at +-(5,5) with weights 0.2 / 0.8
mix = tg.get_target("mog2").oracle
exact = lambda y, s: tg.mog_logdensity(tg.mog_perturbed(mix, s), y)
print("mixture,  max |R| =", float(np.max(np.abs(tr.residual(exact, 4 * x, t)))))

# the same target with an untrained network: the initial condition holds
# exactly at t = 0, but the residual is far from zero elsewhere
model = tr.LogDensityModel(nc.init_network(2, 0), tg.get_target("mog2"))
r = np.asarray(tr.residual(model, 4 * x, t))
print("untrained network, mean R^2 =", float(np.mean(r**2)))
u0 = np.asarray(model.record(4 * x, 0.0).u)
print("initial condition error:", float(np.max(np.abs(u0 - np.asarray(tg.mog_logdensity(mix, jnp.asarray(4 * x)))))))
