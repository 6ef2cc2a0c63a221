"""Ready-made structural models used by the tests, demos and CLI.

``expenditure_gamma_scm`` is built so that the per-context gamma regression is
correctly specified for the conditional mean: Z and W are Gaussian with the
treatment entering through the same monotonic transform as the outcome, so
``E(Y | X, C, S, D, M=1)`` stays log-linear in ``mo(X)`` after the mediators
are integrated out.
"""

from __future__ import annotations

import numpy as np

from .ldag import fixture
from .scm import ByContext, Cpt, Gamma, Linear, Logit, Normal, ScmSpec

N_COUNTRIES = 8
X_MAX = 8


def _lookup(values):
    return {float(i): float(v) for i, v in enumerate(values)}


def _lookup_rows(rows):
    return {float(i): tuple(float(v) for v in row) for i, row in enumerate(rows)}


def expenditure_gamma_scm(effect0=1.2, effect1=0.6, shape=3.0, seed=2024) -> ScmSpec:
    """Expenditure-like model on the expenditure graph.

    Parameters
    ----------
    effect0, effect1 : float
        Total log-scale effect of going from 1 to ``X_MAX`` nights in each
        context (for M=1 this is the direct term; mediators add to it).
    shape : float
        Gamma shape of the outcome.
    seed : int
        Fixes the auxiliary coefficients (country effects and the like).
    """
    g = fixture("expenditure")
    rng = np.random.default_rng(seed)
    levels_x = tuple(range(1, X_MAX + 1))
    zeta = np.array([0.3, 0.2, 0.15, 0.1, 0.1, 0.08, 0.07])
    country_y = rng.normal(0, 0.3, N_COUNTRIES)
    country_x = rng.normal(0, 0.15, N_COUNTRIES)
    country_zw = rng.normal(0, 0.3, N_COUNTRIES)
    country_m = rng.normal(0, 0.4, N_COUNTRIES)

    def logit_x(with_u1):
        slopes = {"U2": tuple(0.12 * k for k in range(X_MAX))}
        if with_u1:
            slopes["U1"] = tuple(0.15 * k for k in range(X_MAX))
        shift = {i: tuple(c * k for k in range(X_MAX)) for i, c in enumerate(country_x)}
        return Logit(levels_x, tuple(-0.35 * k for k in range(X_MAX)), slopes, {"D": shift})

    def logit_cat(K, with_u1, scale):
        base = tuple(rng.normal(0, 0.3, K))
        slopes = {"U2": tuple(scale * (k - (K - 1) / 2) for k in range(K))}
        if with_u1:
            slopes["U1"] = tuple(-scale * (k - (K - 1) / 2) for k in range(K))
        shift = _lookup_rows(rng.normal(0, 0.3, (N_COUNTRIES, K)))
        return base, slopes, {"D": shift}

    c0 = logit_cat(3, True, 0.5)
    c1 = logit_cat(3, False, 0.5)
    s0 = logit_cat(4, True, 0.4)
    s1 = logit_cat(4, False, 0.4)

    mechs = {
        "D": Cpt(tuple(range(N_COUNTRIES)), (), (), np.full(N_COUNTRIES, 1.0 / N_COUNTRIES)),
        "U1": Normal(Linear(0.0), 1.0),
        "U2": Normal(Linear(0.0), 1.0),
        "M": Logit((0, 1), (0.0, -0.6), {}, {"D": _lookup_rows([(0.0, v) for v in country_m])}),
        "X": ByContext("M", {"0": logit_x(True), "1": logit_x(False)}),
        "C": ByContext("M", {"0": Logit((0, 1, 2), *c0), "1": Logit((0, 1, 2), *c1)}),
        "S": ByContext("M", {"0": Logit((1, 2, 3, 4), *s0), "1": Logit((1, 2, 3, 4), *s1)}),
        "Z": ByContext("M", {
            "0": Normal(Linear(0.0, {"U1": 0.8}, {"D": _lookup(country_zw)}), 0.6),
            "1": Normal(Linear(0.0, {"U1": 0.8}, {"D": _lookup(country_zw), "C": _lookup([0, 0.3, -0.2]),
                                                   "S": {1.0: 0.0, 2.0: 0.2, 3.0: -0.1, 4.0: 0.1}},
                               "X", 0.5, tuple(zeta)), 0.6),
        }),
        "W": ByContext("M", {
            "0": Normal(Linear(0.0, {"U1": -0.5, "Z": 0.4}, {"D": _lookup(-country_zw)}), 0.5),
            "1": Normal(Linear(0.0, {"U1": -0.5, "Z": 0.4}, {"D": _lookup(-country_zw), "C": _lookup([0, -0.2, 0.1]),
                                                             "S": {1.0: 0.0, 2.0: -0.1, 3.0: 0.1, 4.0: 0.0}},
                               "X", 0.3, tuple(zeta)), 0.5),
        }),
        "Y": ByContext("M", {
            "0": Gamma(Linear(4.6, {"Z": 0.15, "W": -0.1},
                              {"D": _lookup(country_y), "C": _lookup([0, 0.2, -0.15]),
                               "S": {1.0: 0.0, 2.0: 0.1, 3.0: -0.1, 4.0: 0.05}},
                              "X", effect0, tuple(zeta)), shape),
            "1": Gamma(Linear(5.0, {"Z": 0.1, "W": 0.1},
                              {"D": _lookup(country_y), "C": _lookup([0, -0.1, 0.2]),
                               "S": {1.0: 0.0, 2.0: -0.05, 3.0: 0.1, 4.0: 0.0}},
                              "X", effect1, tuple(zeta)), shape),
        }),
    }
    return ScmSpec(g, mechs)


EXPENDITURE_ADJUSTMENT = {"0": ("C", "S", "Z", "W", "D"), "1": ("C", "S", "D")}


def expenditure_model_columns(context: str) -> dict:
    """Categorical/numeric/group split of the adjustment set for each context."""
    if str(context) == "0":
        return {"categorical": ("C", "S"), "numeric": ("Z", "W"), "group": "D"}
    return {"categorical": ("C", "S"), "numeric": (), "group": "D"}


def toy_scm() -> ScmSpec:
    """Binary model on the labelled toy graph with a strong X->Z effect when M=1."""
    g = fixture("toy_labelled")
    mechs = {
        "M": Cpt((0, 1), (), (), [0.55, 0.45]),
        "U": Cpt((0, 1), (), (), [0.5, 0.5]),
        "X": ByContext("M", {
            "0": Cpt((0, 1), ("U",), ((0, 1),), [[0.8, 0.2], [0.25, 0.75]]),
            "1": Cpt((0, 1), (), (), [0.45, 0.55]),
        }),
        "Z": ByContext("M", {
            "0": Cpt((0, 1), ("U",), ((0, 1),), [[0.7, 0.3], [0.2, 0.8]]),
            "1": Cpt((0, 1), ("X",), ((0, 1),), [[0.85, 0.15], [0.3, 0.7]]),
        }),
        "Y": Cpt((0, 1), ("X", "Z"), ((0, 1), (0, 1)), [[[0.9, 0.1], [0.6, 0.4]], [[0.5, 0.5], [0.2, 0.8]]]),
    }
    return ScmSpec(g, mechs)


def linear_confounded(rng, n, tau=None):
    """Draw ``(S, X, Y, I)`` from a random linear-Gaussian model where I confounds X and Y.

    Returns the data arrays and the coefficients used.
    """
    rng = np.random.default_rng(rng)
    coef = {
        "tau": rng.uniform(-1, 1) if tau is None else tau,
        "xs": rng.uniform(-1, 1),
        "xi": rng.choice([-1, 1]) * rng.uniform(0.3, 1.0),
        "ys": rng.uniform(-1, 1),
        "yi": rng.choice([-1, 1]) * rng.uniform(0.3, 1.0),
        "is": rng.uniform(-0.5, 0.5),
    }
    S = rng.normal(size=n)
    I = coef["is"] * S + rng.normal(size=n)
    X = coef["xs"] * S + coef["xi"] * I + rng.normal(size=n)
    Y = coef["tau"] * X + coef["ys"] * S + coef["yi"] * I + rng.normal(size=n)
    return {"S": S, "X": X, "Y": Y, "I": I}, coef
