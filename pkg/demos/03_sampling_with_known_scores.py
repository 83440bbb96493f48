"""
Reverse-time sampling with a known score
========================================

With the exact score of N(0, I) the discretised reverse process should return
standard normal samples. For the nine-Gaussian target, plain Langevin dynamics
started near the origin stays stuck and gets the mode weights wrong.
"""

import numpy as np

from diffusion_pinn import metrics as mt
from diffusion_pinn import sampler as sp
from diffusion_pinn import targets as tg

out = sp.sample(lambda x, t: -x, sp.SamplerConfig(steps=1000, samples=5000, seed=0), dim=2)
print("mean", out.samples.mean(0).round(3))
print("cov\n", np.cov(out.samples.T).round(3))

nine = tg.get_target("9gaussians")
lmc = sp.lmc_baseline(nine, 0.02, 5000, 1000, seed=0)
print("\nLangevin mode proportions:", mt.mode_proportions(lmc, nine.modes).round(3))
print("true weights:             ", tg.mode_weights(nine.modes).round(3))
print("mixing error:", round(mt.mixing_error(lmc, nine.modes), 4))
