import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csicausal.estimate import ModelSpec, ace_table, effect_draws
from csicausal.sensitivity import (
    DEFAULT_PRIORS,
    BiasDraws,
    CorrelationPrior,
    SensitivityConfig,
    SensitivityError,
    adjusted_ace,
    bias_draws,
    bias_histogram,
    ovb_bias,
    outcome_residual_sd,
    sample_correlation,
    treatment_residual_sd,
    write_histograms,
)
from csicausal.synthetic import linear_confounded

from oracles import gamma_frame
from test_fit_effects import fixed_draws

corr = st.floats(-0.99, 0.99)


def _ols_coef(y, cols):
    A = np.column_stack([np.ones(len(y))] + cols)
    return np.linalg.lstsq(A, y, rcond=None)[0]


def _resid(y, cols):
    A = np.column_stack([np.ones(len(y))] + cols)
    return y - A @ np.linalg.lstsq(A, y, rcond=None)[0]


@pytest.mark.parametrize("prior", DEFAULT_PRIORS, ids=lambda p: f"{p.target}{p.context}")
def test_prior_moments_on_correlation_scale(prior):
    r = sample_correlation(prior, 123, 100_000)
    n = len(r)
    se_mean = prior.sd / np.sqrt(n)
    # sd of the sample sd, from the fourth central moment
    m4 = np.mean((r - r.mean()) ** 4)
    se_sd = np.sqrt(max(m4 - prior.sd ** 4, 0) / n) / (2 * prior.sd)
    assert abs(r.mean() - prior.mean) < 3 * se_mean
    assert abs(r.std(ddof=1) - prior.sd) < 3 * se_sd


def test_zero_mean_prior_is_symmetric():
    p = CorrelationPrior(0.0, 0.3)
    loc, scale = p.z_params()
    assert loc == pytest.approx(0.0, abs=1e-12) and scale > 0.3
    r = sample_correlation(p, 1, 50_000)
    assert abs(np.mean(r > 0) - 0.5) < 3 * 0.5 / np.sqrt(50_000)


def test_wide_z_prior_stays_inside_interval():
    r = sample_correlation(CorrelationPrior(0.9, 20.0, scale="z"), 0, 100_000)
    assert np.all(np.abs(r) < 1)


def test_z_scale_is_uncalibrated_tanh_normal():
    p = CorrelationPrior(0.45, 0.10, scale="z")
    assert p.z_params() == (pytest.approx(np.arctanh(0.45)), 0.10)


def test_prior_validation():
    with pytest.raises(SensitivityError):
        CorrelationPrior(1.0, 0.1)
    with pytest.raises(SensitivityError):
        CorrelationPrior(0.5, 0.9)
    with pytest.raises(SensitivityError):
        CorrelationPrior(0.1, 0.1, target="ZZ")
    assert np.all(sample_correlation(CorrelationPrior(0.3, 0.0), 0, 10) == pytest.approx(0.3))


def test_config_round_trip_and_lookup():
    c = SensitivityConfig()
    back = SensitivityConfig.from_dict(json.loads(json.dumps(c.to_dict())))
    assert set(back.priors) == set(c.priors)
    assert c.prior("1", "YI").mean == 0.20
    with pytest.raises(SensitivityError):
        c.prior("7", "XI")


@pytest.mark.parametrize("seed", range(20))
def test_bias_formula_equals_ols_short_minus_long(seed):
    v, _ = linear_confounded(seed, 20_000)
    S, X, Y, I = v["S"], v["X"], v["Y"], v["I"]
    short = _ols_coef(Y, [X, S])[1]
    long = _ols_coef(Y, [X, S, I])[1]
    ry = _resid(Y, [X, S])
    rx = _resid(X, [S])
    r_yi = np.corrcoef(ry, _resid(I, [X, S]))[0, 1]
    r_xi = np.corrcoef(rx, _resid(I, [S]))[0, 1]
    b = ovb_bias(r_yi, r_xi, ry.std(), rx.std())
    assert b == pytest.approx(short - long, rel=1e-9, abs=1e-12)


@given(corr, corr, st.floats(0.01, 100), st.floats(0.01, 100))
def test_bias_sign_and_scaling(r_yi, r_xi, sd_y, sd_x):
    b = ovb_bias(r_yi, r_xi, sd_y, sd_x)
    assert np.sign(b) == np.sign(r_yi * r_xi)
    assert ovb_bias(-r_yi, -r_xi, sd_y, sd_x) == pytest.approx(b)
    assert ovb_bias(r_yi, r_xi, 3 * sd_y, sd_x) == pytest.approx(3 * b)
    assert ovb_bias(r_yi, r_xi, sd_y, 2 * sd_x) == pytest.approx(b / 2)


def test_bias_zero_cases_and_errors():
    assert ovb_bias(0.0, 0.7, 2, 1) == 0 and ovb_bias(0.4, 0.0, 2, 1) == 0
    assert ovb_bias(0.5, 0.5, 2.0, 1.0) == pytest.approx(np.sqrt(0.0625 / 0.75) * 2)
    with pytest.raises(SensitivityError):
        ovb_bias(1.0, 0.2, 1, 1)
    with pytest.raises(SensitivityError):
        ovb_bias(0.2, 0.2, 1, 0)


def test_bias_draws_are_per_draw_and_permutation_equivariant():
    rng = np.random.default_rng(0)
    sd_y, sd_x = rng.uniform(1, 2, 400), rng.uniform(0.5, 1, 400)
    b = bias_draws("0", sd_y, sd_x, SensitivityConfig(), 5)
    perm = rng.permutation(400)
    b2 = BiasDraws("0", b.r_xi[perm], b.r_yi[perm], sd_y[perm], sd_x[perm])
    assert np.array_equal(b2.bias, b.bias[perm])
    assert np.array_equal(b.bias, bias_draws("0", sd_y, sd_x, SensitivityConfig(), 5).bias)
    s = b.summary()
    assert s["lower"] <= s["mean"] <= s["upper"]
    assert list(b.to_frame().columns) == ["context", "draw", "r_xi", "r_yi", "sd_y", "sd_x", "bias"]
    with pytest.raises(SensitivityError):
        BiasDraws("0", b.r_xi[:3], b.r_yi, sd_y, sd_x)
    with pytest.raises(SensitivityError):
        bias_draws("0", sd_y, np.zeros(400), SensitivityConfig(), 5)


def test_zero_priors_reproduce_unadjusted_table():
    f, _ = gamma_frame(8, 200)
    d = fixed_draws(f, B=80)
    zero = SensitivityConfig(tuple(CorrelationPrior(0.0, 0.0, t, "0") for t in ("XI", "YI")))
    b = bias_draws("0", np.ones(80), np.ones(80), zero, 0)
    assert np.all(b.bias == 0)
    plain = ace_table({"0": d}, {"0": f})
    adj = adjusted_ace(effect_draws({"0": d}, {"0": f}), {"0": b})
    for col in ("ace", "lower", "upper"):
        assert adj[col].tolist() == plain[col].tolist()


def test_adjustment_shifts_every_draw():
    eff = {("0", 1): np.arange(10.0), ("1", 1): np.zeros(10)}
    b0 = BiasDraws("0", np.full(10, 0.5), np.full(10, 0.5), np.full(10, 2.0), np.ones(10))
    b1 = BiasDraws("1", np.full(10, -0.5), np.full(10, 0.5), np.ones(10), np.ones(10))
    t = adjusted_ace(eff, {"0": b0, "1": b1})
    assert t.loc[0, "ace"] == pytest.approx(4.5 + b0.bias[0])
    assert t.loc[1, "mean_bias"] < 0
    with pytest.raises(SensitivityError):
        adjusted_ace({("0", 1): np.zeros(3)}, {"0": b0})


def test_outcome_residual_sd_by_hand():
    f, _ = gamma_frame(9, 120)
    d = fixed_draws(f, B=7)
    got = outcome_residual_sd(d, f)
    want = [np.std(f.Y - np.exp(d.linear_predictor(f)[b])) for b in range(7)]
    assert np.allclose(got, want)


def test_treatment_residual_sd_matches_gamma_sd():
    rng = np.random.default_rng(0)
    n, k = 10_000, 3.0
    N = rng.normal(size=n)
    mu = np.exp(1.0 + 0.4 * N)
    f = pd.DataFrame({"N": N, "X": rng.gamma(k, mu / k), "Y": 1.0, "weight": 1.0})
    r = treatment_residual_sd(f, ModelSpec(numeric=("N",), chains=1, iterations=400, warmup=200), 0)
    assert not r.degenerate and len(r.sd) == 200
    assert r.sd.mean() == pytest.approx(np.sqrt(np.mean(mu ** 2) / k), rel=0.05)


def test_constant_treatment_is_degenerate():
    f = pd.DataFrame({"N": np.arange(10.0), "X": 3, "Y": 1.0, "weight": 1.0})
    r = treatment_residual_sd(f, ModelSpec(numeric=("N",), chains=2, iterations=20, warmup=10), 0)
    assert r.degenerate and np.all(r.sd == 0) and len(r.sd) == 20


def test_histograms(tmp_path):
    b = BiasDraws("0", np.full(50, 0.3), np.linspace(-0.5, 0.5, 50), np.ones(50), np.ones(50))
    h = bias_histogram(b.bias, 10)
    assert sum(h["counts"]) == 50 and len(h["edges"]) == 11
    data = write_histograms(tmp_path / "h.json", {"0": b}, 10, {"seed": 3})
    assert json.loads((tmp_path / "h.json").read_text()) == data
