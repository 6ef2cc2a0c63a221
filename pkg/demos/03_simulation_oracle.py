"""
Simulating from a structural model and computing ground truth
=============================================================

``expenditure_gamma_scm`` puts a gamma outcome on the expenditure graph. Replaying
units with their exogenous noise held fixed gives the counterfactual
difference that the estimation pipeline is meant to recover.
"""

# %%
import numpy as np

from csicausal import exact_joint, oracle_counterfactual_difference, random_discrete_scm, simulate_observational
from csicausal.identify import combine_contexts
from csicausal.functional import evaluate_factor
from csicausal.ldag import fixture
from csicausal.scm import oracle_interventional
from csicausal.synthetic import expenditure_gamma_scm

scm = expenditure_gamma_scm()
data = simulate_observational(scm, 2000, seed=1).frame
print(data.head())
print(data.groupby("M").Y.describe())

# %%
for m in (0, 1):
    for x in (1, 2, 3):
        o = oracle_counterfactual_difference(scm, "X", x, "M", m, 20_000, seed=[5, m])
        print(f"M={m} x={x}: {o.estimate:7.2f} +- {o.se:.2f} ({o.n_units} units)")

# %%
# with discrete mechanisms the identified functional can be checked exactly
g = fixture("toy_labelled")
small = random_discrete_scm(g, np.random.default_rng(0))
joint = exact_joint(small).restrict(g.observed)
f = evaluate_factor(combine_contexts(g, "X", "Y", "M").functional, joint)
truth = exact_joint(oracle_interventional(small, "X", 1)).marginal(("Y",)).values
print(f.aligned(("X", "Y"))[2:], truth)
