"""Omitted-variable bias from an unobserved confounder of treatment and outcome.

For one omitted variable ``I`` the partial R-squared values reduce to squared
partial correlations, and the bias of the treatment effect is

    sign(r_YI r_XI) * sqrt(r_YI^2 r_XI^2 / (1 - r_XI^2)) * sd(Y resid) / sd(X resid)

Correlations are given priors on the Fisher-z scale and drawn once per
posterior draw, so the bias carries both prior and posterior uncertainty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import optimize

from .estimate import ModelSpec, PosteriorDraws, fit


class SensitivityError(ValueError):
    pass


TARGETS = ("XI", "YI")


@dataclass(frozen=True)
class CorrelationPrior:
    """Prior on a partial correlation, sampled through the Fisher z-transform.

    With ``scale="correlation"`` (default) ``mean`` and ``sd`` are moments of
    the correlation itself; the normal on the z-scale is calibrated so that
    ``tanh(z)`` has exactly these moments. With ``scale="z"`` the draws are
    ``tanh(N(atanh(mean), sd^2))`` with no calibration.
    """

    mean: float
    sd: float
    target: str = "XI"
    context: str = "0"
    scale: str = "correlation"

    def __post_init__(self):
        if not -1 < self.mean < 1:
            raise SensitivityError("prior mean correlation must lie in (-1, 1)")
        if not self.sd >= 0:
            raise SensitivityError("prior sd must be non-negative")
        if self.target not in TARGETS:
            raise SensitivityError(f"target must be one of {TARGETS}")
        if self.scale not in ("correlation", "z"):
            raise SensitivityError("scale must be 'correlation' or 'z'")
        if self.scale == "correlation" and self.sd ** 2 >= 1 - self.mean ** 2:
            # a variable on (-1, 1) with mean m has variance below 1 - m^2
            raise SensitivityError("sd too large for a correlation with this mean; use scale='z'")

    def z_params(self) -> tuple:
        """Location and scale of the normal on the Fisher-z scale."""
        if self.scale == "z" or self.sd == 0:
            return float(np.arctanh(self.mean)), float(self.sd)
        return _calibrate(self.mean, self.sd)


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(120)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _tanh_moments(loc, scale):
    r = np.tanh(loc + scale * _GH_NODES)
    m = float(_GH_WEIGHTS @ r)
    return m, float(np.sqrt(max(_GH_WEIGHTS @ (r - m) ** 2, 0.0)))


@lru_cache(maxsize=256)
def _calibrate(mean, sd):
    def resid(v):
        m, s = _tanh_moments(v[0], np.exp(v[1]))
        return [m - mean, s - sd]

    start = [np.arctanh(mean), np.log(sd / (1 - mean ** 2))]
    sol = optimize.root(resid, start, method="hybr", options={"xtol": 1e-13})
    if not sol.success or max(abs(np.asarray(resid(sol.x)))) > 1e-9:
        raise SensitivityError(f"could not match correlation moments ({mean}, {sd})")
    return float(sol.x[0]), float(np.exp(sol.x[1]))


def sample_correlation(prior: CorrelationPrior, seed, count: int) -> np.ndarray:
    """``tanh`` of normal draws on the Fisher-z scale."""
    loc, scale = prior.z_params()
    rng = np.random.default_rng(seed)
    r = np.tanh(rng.normal(loc, scale, size=count))
    # tanh rounds to +-1 for |z| > ~19; keep draws strictly inside the interval
    return np.clip(r, -np.nextafter(1.0, 0), np.nextafter(1.0, 0))


# paper-default prior blocks: personal trips (M=0) and work-related trips (M=1)
DEFAULT_PRIORS = (
    CorrelationPrior(0.10, 0.15, "XI", "0"),
    CorrelationPrior(0.45, 0.10, "YI", "0"),
    CorrelationPrior(0.05, 0.15, "XI", "1"),
    CorrelationPrior(0.20, 0.10, "YI", "1"),
)


@dataclass
class SensitivityConfig:
    priors: tuple = DEFAULT_PRIORS
    bins: int = 40

    def prior(self, context, target) -> CorrelationPrior:
        for p in self.priors:
            if str(p.context) == str(context) and p.target == target:
                return p
        raise SensitivityError(f"no {target} prior for context {context}")

    @classmethod
    def from_dict(cls, d) -> "SensitivityConfig":
        priors = []
        for ctx, block in d.get("priors", {}).items():
            for target in TARGETS:
                if target in block:
                    b = block[target]
                    priors.append(CorrelationPrior(float(b["mean"]), float(b["sd"]), target, str(ctx),
                                                   b.get("scale", "correlation")))
        return cls(tuple(priors) or DEFAULT_PRIORS, int(d.get("bins", 40)))

    def to_dict(self) -> dict:
        out = {}
        for p in self.priors:
            out.setdefault(str(p.context), {})[p.target] = {"mean": p.mean, "sd": p.sd, "scale": p.scale}
        return {"priors": out, "bins": self.bins}


def ovb_bias(r_yi, r_xi, sd_y, sd_x):
    """Bias of the treatment coefficient caused by the omitted variable.

    Parameters
    ----------
    r_yi : float or array
        Partial correlation of outcome and omitted variable given treatment and covariates.
    r_xi : float or array
        Partial correlation of treatment and omitted variable given covariates.
    sd_y, sd_x : float or array
        Residual standard deviations of outcome and treatment.
    """
    r_yi, r_xi = np.asarray(r_yi, dtype=float), np.asarray(r_xi, dtype=float)
    sd_y, sd_x = np.asarray(sd_y, dtype=float), np.asarray(sd_x, dtype=float)
    if np.any(np.abs(r_yi) >= 1) or np.any(np.abs(r_xi) >= 1):
        raise SensitivityError("correlations must lie strictly inside (-1, 1)")
    if np.any(sd_y < 0) or np.any(sd_x <= 0):
        raise SensitivityError("residual sds must be non-negative, treatment sd positive")
    # same as sqrt(r_yi^2 r_xi^2 / (1 - r_xi^2)) without squaring tiny values to zero
    mag = np.abs(r_yi) * np.abs(r_xi) / np.sqrt(1 - r_xi ** 2) * sd_y / sd_x
    out = np.sign(r_yi * r_xi) * mag
    return float(out) if out.ndim == 0 else out


def outcome_residual_sd(draws: PosteriorDraws, frame: pd.DataFrame) -> np.ndarray:
    """Per-draw sd of ``Y - mu`` on the response scale."""
    y = frame[draws.spec.outcome].to_numpy(dtype=float)
    mu = draws.mean(frame)
    return np.std(y[None, :] - mu, axis=1)


@dataclass
class TreatmentResidual:
    sd: np.ndarray
    degenerate: bool = False
    draws: PosteriorDraws | None = None
    diagnostics: object = None


def treatment_spec(outcome_spec: ModelSpec, coef_sd=2.0) -> ModelSpec:
    """Gamma model of the treatment on the outcome model's covariates."""
    t = outcome_spec.treatment
    return replace(
        outcome_spec,
        outcome=t,
        categorical=tuple(c for c in outcome_spec.categorical if c != t),
        numeric=tuple(c for c in outcome_spec.numeric if c != t),
        monotonic=False,
        coef_sd=coef_sd,
    )


def treatment_residual_sd(frame: pd.DataFrame, outcome_spec: ModelSpec, seed, n_draws=None) -> TreatmentResidual:
    """Per-draw sd of ``X - mu_X`` from a gamma fit of the treatment."""
    spec = treatment_spec(outcome_spec)
    x = frame[spec.outcome].to_numpy(dtype=float)
    B = n_draws or spec.chains * spec.draws_per_chain
    if np.ptp(x) == 0:
        return TreatmentResidual(np.zeros(B), degenerate=True)
    res = fit(spec, frame, seed)
    mu = res.draws.mean(frame)
    sd = np.std(x[None, :] - mu, axis=1)
    return TreatmentResidual(sd, False, res.draws, res.diagnostics)


@dataclass
class BiasDraws:
    context: str
    r_xi: np.ndarray
    r_yi: np.ndarray
    sd_y: np.ndarray
    sd_x: np.ndarray
    bias: np.ndarray = field(init=False)

    def __post_init__(self):
        n = {len(self.r_xi), len(self.r_yi), len(self.sd_y), len(self.sd_x)}
        if len(n) != 1:
            raise SensitivityError("bias inputs must have one value per posterior draw")
        self.bias = ovb_bias(self.r_yi, self.r_xi, self.sd_y, self.sd_x)

    def summary(self) -> dict:
        return {"context": self.context, "mean": float(np.mean(self.bias)),
                "lower": float(np.percentile(self.bias, 2.5)), "upper": float(np.percentile(self.bias, 97.5))}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"context": self.context, "draw": np.arange(len(self.bias)), "r_xi": self.r_xi,
                             "r_yi": self.r_yi, "sd_y": self.sd_y, "sd_x": self.sd_x, "bias": self.bias})


def bias_draws(context, sd_y, sd_x, config: SensitivityConfig, seed) -> BiasDraws:
    """Sample correlations for every posterior draw and evaluate the bias."""
    sd_y, sd_x = np.asarray(sd_y, dtype=float), np.asarray(sd_x, dtype=float)
    if len(sd_y) != len(sd_x):
        raise SensitivityError("outcome and treatment fits must have the same number of draws")
    if np.any(sd_x <= 0):
        raise SensitivityError("treatment residual sd is zero; the treatment is constant")
    ss = np.random.SeedSequence(seed).spawn(2)
    r_xi = sample_correlation(config.prior(context, "XI"), ss[0], len(sd_y))
    r_yi = sample_correlation(config.prior(context, "YI"), ss[1], len(sd_y))
    return BiasDraws(str(context), r_xi, r_yi, sd_y, sd_x)


ADJUSTED_COLUMNS = ["context", "x", "increment", "ace", "lower", "upper", "mean_bias"]


def adjusted_ace(effects: dict, biases: dict) -> pd.DataFrame:
    """Shift every per-draw effect by that draw's bias and summarise.

    Parameters
    ----------
    effects : dict
        ``{(context, x): per-draw differences}``.
    biases : dict
        ``{context: BiasDraws}``.
    """
    rows = []
    for (ctx, x), per_draw in effects.items():
        b = biases[ctx].bias
        if len(b) != len(per_draw):
            raise SensitivityError(f"context {ctx}: {len(per_draw)} effect draws but {len(b)} bias draws")
        adj = per_draw + b
        rows.append([ctx, x, f"{x}->{x + 1}", float(np.mean(adj)), float(np.percentile(adj, 2.5)),
                     float(np.percentile(adj, 97.5)), float(np.mean(b))])
    return pd.DataFrame(rows, columns=ADJUSTED_COLUMNS)


def bias_histogram(bias, bins=40) -> dict:
    counts, edges = np.histogram(np.asarray(bias, dtype=float), bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def write_histograms(path, biases: dict, bins=40, extra=None):
    data = {str(k): bias_histogram(v.bias, bins) for k, v in biases.items()}
    data.update(extra or {})
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))
    return data
