"""Noise schedules and the forward diffusion process.

Walks through the two built-in schedules, the half-log-SNR view that
the samplers integrate in, and a Monte Carlo check that q_sample
produces the marginal moments the closed form promises.
"""

import numpy as np

from nodulesynth import VoxelVolume, make_schedule, q_sample

# A schedule is a frozen table of coefficients over T discrete steps.
cosine = make_schedule("cosine", 1000)
linear = make_schedule("linear", 1000)

print("schedule endpoints (alpha_bar):")
for s in (cosine, linear):
    print(f"  {s.kind:>6}: ab[1]={s.alpha_bar[1]:.6f}  "
          f"ab[T/2]={s.alpha_bar[s.T // 2]:.6f}  ab[T]={s.alpha_bar[s.T]:.2e}")

# Half-log-SNR lambda = 0.5 * log(ab / (1 - ab)) is strictly decreasing
# in t; the cap at t=0 keeps arithmetic finite.
print("\ncosine lambda range:", cosine.lam[0], "->", cosine.lam[-1])

# The continuous view interpolates lambda between grid points and is
# exactly invertible -- float-time sampling grids rely on this.
t = 123.456
lam = cosine.lambda_of(t)
print(f"lambda({t}) = {lam:.4f}, t_of_lambda back = "
      f"{float(cosine.t_of_lambda(lam)):.4f}")

# Forward diffusion: x_t = sqrt(ab) x0 + sqrt(1 - ab) eps, checked
# against its own moments by Monte Carlo.
rng = np.random.default_rng(0)
x0 = VoxelVolume(np.full((25, 20, 20), 0.3))
print("\nMonte Carlo moments of q_sample (10^4 draws, target 0.3):")
for t in (100, 500, 900):
    eps = VoxelVolume(rng.standard_normal(x0.dims))
    xt = q_sample(x0, t, eps, cosine).x_t.data
    ab, sig, _ = cosine.coefficients_at(t)
    print(f"  t={t:4d}: mean {xt.mean():+.4f} (theory {np.sqrt(ab) * 0.3:+.4f})"
          f"  std {xt.std():.4f} (theory {sig:.4f})")
