import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from csicausal.estimate import DataError, Encoder, GammaRegression, ModelError, ModelSpec, Params, build_design, mo
from csicausal.estimate.model import (
    dirichlet_logpdf,
    half_t_logpdf,
    normal_logpdf,
    simplex_to_unconstrained,
    stick_breaking,
    stick_breaking_grad,
)

from oracles import gamma_frame

simplexes = st.lists(st.floats(0.01, 10), min_size=1, max_size=14).map(lambda w: np.array(w) / np.sum(w))


def test_mo_worked_example():
    zeta = (0.5, 0.25, 0.25)
    assert mo(3, zeta) == pytest.approx(0.75)
    assert mo(1, zeta) == 0.0
    assert mo(4, zeta) == 1.0
    assert np.allclose(mo([1, 2, 3, 4], zeta), [0, 0.5, 0.75, 1.0])


def test_mo_rejects_bad_levels():
    with pytest.raises(ModelError):
        mo(0, (0.5, 0.5))
    with pytest.raises(ModelError):
        mo(4, (0.5, 0.5))
    with pytest.raises(ModelError):
        mo(1.5, (0.5, 0.5))


@given(simplexes)
def test_mo_monotone_bounded(zeta):
    v = mo(np.arange(1, len(zeta) + 2), zeta)
    assert v[0] == 0 and v[-1] == 1
    assert np.all(np.diff(v) >= 0) and np.all((v >= 0) & (v <= 1))
    assert np.allclose(np.diff(v), zeta)


@given(st.lists(st.floats(-4, 4), min_size=1, max_size=10))
def test_stick_breaking_inverse(y):
    zeta, _ = stick_breaking(y)
    assert zeta.sum() == pytest.approx(1.0, abs=1e-12) and np.all(zeta > 0)
    assert np.allclose(simplex_to_unconstrained(zeta), y, atol=1e-8)


@pytest.mark.parametrize("K", [2, 3, 5, 8])
def test_stick_breaking_log_jacobian(K):
    rng = np.random.default_rng(K)
    y = rng.normal(size=K - 1)
    h = 1e-6
    J = np.empty((K - 1, K - 1))
    for j in range(K - 1):
        e = np.zeros(K - 1)
        e[j] = h
        J[:, j] = (stick_breaking(y + e)[0][:-1] - stick_breaking(y - e)[0][:-1]) / (2 * h)
    assert stick_breaking(y)[1] == pytest.approx(np.log(abs(np.linalg.det(J))), abs=1e-6)


def test_stick_breaking_gradient_fd():
    rng = np.random.default_rng(0)
    for K in (2, 4, 7):
        y = rng.normal(size=K - 1)
        g = rng.normal(size=K)

        def f(v):
            z, lj = stick_breaking(v)
            return g @ z + lj

        h = 1e-6
        fd = np.array([(f(y + h * e) - f(y - h * e)) / (2 * h) for e in np.eye(K - 1)])
        assert np.allclose(stick_breaking_grad(y, g), fd, rtol=1e-6, atol=1e-8)


def test_prior_densities_match_scipy():
    x = np.array([0.1, 0.7, 3.0, 12.0])
    assert np.allclose(half_t_logpdf(x, 3.0, 5.0), np.log(2) + stats.t.logpdf(x, 3.0, scale=5.0))
    assert integrate.quad(lambda v: np.exp(half_t_logpdf(v, 3.0, 1.0)), 0, np.inf)[0] == pytest.approx(1.0)
    assert normal_logpdf([0.3, -1.0], 0.5) == pytest.approx(stats.norm.logpdf([0.3, -1.0], scale=0.5).sum())
    z = np.array([0.2, 0.3, 0.5])
    assert dirichlet_logpdf(z, 2.0) == pytest.approx(stats.dirichlet.logpdf(z, [2.0] * 3))


def _model(n=300, seed=0, **kw):
    f, truth = gamma_frame(seed, n, **kw)
    spec = ModelSpec(categorical=("B", "K"), numeric=("N",), group="D", x_max=5, chains=1, iterations=20, warmup=10)
    enc = Encoder.fit(f, spec)
    return GammaRegression(build_design(f, enc), spec), f, enc, truth


def test_gradient_matches_finite_differences():
    model, *_ = _model()
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(20):
        theta = rng.normal(0, 0.5, model.dim)
        theta[0] = 4.0 + rng.normal(0, 0.2)
        # pin a simplex coordinate near the boundary on some points
        if rng.random() < 0.3:
            theta[model._s["zeta"]][0] = -6.0
        lp, g = model.logp_grad(theta)
        fd = np.array([(model.logp(theta + h * e) - model.logp(theta - h * e)) / (2 * h) for e in np.eye(model.dim)])
        rel = np.abs(g - fd) / np.maximum(1.0, np.abs(fd))
        assert rel.max() < 1e-5, rel.max()


def test_gradient_with_tiny_simplex_entry():
    model, *_ = _model()
    theta = np.zeros(model.dim)
    theta[0] = 4.0
    theta[model._s["zeta"]] = [-5.0, 0.0, 1.0]
    p = model.unpack(theta)
    assert 1e-3 <= p.zeta.min() < 1e-2
    _, g = model.logp_grad(theta)
    h = 1e-6
    fd = np.array([(model.logp(theta + h * e) - model.logp(theta - h * e)) / (2 * h) for e in np.eye(model.dim)])
    assert (np.abs(g - fd) / np.maximum(1.0, np.abs(fd))).max() < 1e-5


def test_unconstrained_density_equals_constrained_plus_jacobian():
    model, *_ = _model()
    rng = np.random.default_rng(2)
    diffs = []
    G = model.layout.n_groups
    for _ in range(10):
        theta = rng.normal(0, 0.5, model.dim)
        p = model.unpack(theta)
        logj = stick_breaking(theta[model._s["zeta"]])[1]
        # log sigma_u and log shape transforms, plus u = sigma_u z
        jac = logj + np.log(p.sigma_u) + np.log(p.shape) + G * np.log(p.sigma_u)
        diffs.append(model.logp(theta) - (model.log_posterior(p) + jac))
    assert np.ptp(diffs) < 1e-8


def test_pack_unpack_round_trip():
    model, *_ = _model()
    theta = np.random.default_rng(3).normal(0, 0.5, model.dim)
    assert np.allclose(model.pack(model.unpack(theta)), theta)


def test_gamma_log_density_at_mean_with_unit_shape():
    # shape 1 and y = mu: log f(y) = -log y - 1
    model, f, enc, _ = _model()
    p = model.unpack(np.zeros(model.dim))
    p.shape = 1.0
    mu = np.exp(model.eta(p))
    model.design.y = mu
    model._logy = np.log(mu)
    assert model.log_likelihood(p) == pytest.approx(float(np.sum(-np.log(mu) - 1)), rel=1e-12)


def test_linear_predictor_by_hand():
    model, f, enc, _ = _model(n=40)
    rng = np.random.default_rng(4)
    p = model.unpack(rng.normal(0, 0.5, model.dim))
    steps = np.concatenate([[0.0], np.cumsum(p.zeta)])
    cols = dict(zip(enc.columns, p.coef))
    want = []
    for _, r in f.iterrows():
        e = p.alpha + cols.get(f"B[{r.B}]", 0.0) + cols.get(f"K[{r.K}]", 0.0) + cols["N"] * r.N
        e += p.u[list(enc.group_levels).index(str(r.D))] + p.a * steps[r.X - 1]
        want.append(e)
    assert np.allclose(model.eta(p), want, atol=1e-12)
    assert np.all(np.exp(model.eta(p)) > 0)


def test_encoder_reference_is_most_frequent():
    f = pd.DataFrame({"C": ["b", "a", "b", "Other", "c", "b", "a"], "X": 1, "Y": 1.0, "weight": 1.0})
    enc = Encoder.fit(f, ModelSpec(categorical=("C",), x_max=3))
    assert enc.reference["C"] == "b"
    assert enc.columns == ("C[a]", "C[c]", "C[Other]")


def test_unseen_group_gets_zero_intercept_and_unseen_level_fails():
    model, f, enc, _ = _model(n=60)
    new = f.head(3).copy()
    new["D"] = 99
    assert (enc.group_index(new) == -1).all()
    d = build_design(new, enc)
    m = GammaRegression(d, model.spec)
    p = m.unpack(np.random.default_rng(5).normal(0, 0.5, m.dim))
    ref = new.copy()
    ref["D"] = f.D.iloc[0]
    base = GammaRegression(build_design(ref, enc), model.spec)
    gi = enc.group_index(ref)[0]
    assert np.allclose(m.eta(p), base.eta(p) - p.u[gi])
    bad = f.head(2).copy()
    bad["K"] = "k9"
    with pytest.raises(DataError, match="not seen"):
        enc.matrix(bad)


@pytest.mark.parametrize("col, value", [("Y", 0.0), ("X", 9), ("X", 1.5), ("weight", -1.0)])
def test_check_frame_rejects(col, value):
    f, _ = gamma_frame(0, 20)
    f[col] = f[col].astype(float)
    f.loc[3, col] = value
    with pytest.raises(DataError):
        Encoder.fit(f, ModelSpec(categorical=("B",), x_max=5))


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(iterations=100, warmup=100)
    with pytest.raises(ValueError):
        ModelSpec(categorical=("A",), numeric=("A",))
    with pytest.raises(ValueError, match="unknown"):
        ModelSpec.from_dict({"bogus": 1})
    s = ModelSpec(categorical=("A",))
    assert ModelSpec.from_dict(s.to_dict()) == s
