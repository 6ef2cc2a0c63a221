"""
How much could an omitted confounder move the estimates?
========================================================

An unobserved income variable would bias the effect of length of stay by
an amount fixed by two partial correlations and two residual standard
deviations. Priors on the correlations turn this into a bias distribution
that is added draw by draw to the effect.
"""

# %%
import numpy as np

from csicausal.estimate import ModelSpec, ace_table, effect_draws, fit
from csicausal.scm import simulate_observational
from csicausal.sensitivity import (
    DEFAULT_PRIORS,
    SensitivityConfig,
    adjusted_ace,
    bias_draws,
    ovb_bias,
    outcome_residual_sd,
    sample_correlation,
    treatment_residual_sd,
)
from csicausal.synthetic import expenditure_gamma_scm, expenditure_model_columns

print(ovb_bias(0.45, 0.10, 300.0, 2.0))

# %%
for p in DEFAULT_PRIORS:
    r = sample_correlation(p, 0, 100_000)
    print(p.context, p.target, round(r.mean(), 3), round(r.std(), 3))

# %%
data = simulate_observational(expenditure_gamma_scm(), 2000, seed=3).frame
frame = data[data.M == 0].reset_index(drop=True)
spec = ModelSpec(x_max=8, chains=2, iterations=400, warmup=200, **expenditure_model_columns("0"))
draws = fit(spec, frame, seed=3).draws
sd_y = outcome_residual_sd(draws, frame)
sd_x = treatment_residual_sd(frame, spec, seed=4).sd
bias = bias_draws("0", sd_y, sd_x, SensitivityConfig(), seed=5)
print(bias.summary())

# %%
plain = ace_table({"0": draws}, {"0": frame}, xs=[1, 2, 3])
adjusted = adjusted_ace(effect_draws({"0": draws}, {"0": frame}, xs=[1, 2, 3]), {"0": bias})
print(plain[["x", "ace", "lower", "upper"]])
print(adjusted[["x", "ace", "lower", "upper", "mean_bias"]])
print(np.histogram(bias.bias, bins=10)[0])
