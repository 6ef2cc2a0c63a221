"""Counterfactual one-step differences from posterior draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .design import DataError
from .fit import PosteriorDraws


@dataclass
class EffectSummary:
    x: int
    estimate: float
    lower: float
    upper: float
    per_draw: np.ndarray
    n_stratum: int
    # sd over stratum rows of the posterior-mean unit differences, over sqrt(n)
    covariate_se: float = float("nan")

    @property
    def posterior_sd(self) -> float:
        return float(np.std(self.per_draw, ddof=1)) if len(self.per_draw) > 1 else 0.0


def _summary(per_draw):
    return float(np.mean(per_draw)), float(np.percentile(per_draw, 2.5)), float(np.percentile(per_draw, 97.5))


def _level(v) -> str:
    # 1, 1.0 and "1" name the same context level
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    return str(int(f)) if f.is_integer() else str(v)


def stratum(draws: PosteriorDraws, frame: pd.DataFrame, x) -> pd.DataFrame:
    spec = draws.spec
    if not spec.monotonic:
        raise DataError("model has no ordinal treatment term")
    if int(x) != x or not 1 <= x < spec.x_max:
        raise DataError(f"x must be an integer in 1..{spec.x_max - 1}")
    rows = frame[frame[spec.treatment].astype(float) == float(x)]
    if spec.context and spec.context in frame.columns and spec.context_level is not None:
        rows = rows[rows[spec.context].map(_level) == _level(spec.context_level)]
    if rows.empty:
        raise DataError(f"empty stratum {spec.treatment}={x}")
    return rows


def counterfactual_difference(draws: PosteriorDraws, frame: pd.DataFrame, x, chunk=512) -> EffectSummary:
    """Weighted mean of ``mu(x+1) - mu(x)`` over rows observed at ``X = x``.

    Weights are normalised within the stratum. Returns the posterior mean,
    the 2.5/97.5 percentile interval and the per-draw values.
    """
    rows = stratum(draws, frame, x)
    spec = draws.spec
    w = rows[spec.weight].to_numpy(dtype=float) if spec.weight else np.ones(len(rows))
    w = w / w.sum()
    base = draws.eta_base(rows)
    lo, hi = draws.mo_term(x), draws.mo_term(x + 1)
    per_draw = np.empty(len(draws))
    unit = np.zeros(len(rows))
    for s in range(0, len(draws), chunk):
        b = base[s:s + chunk]
        diff = np.exp(b + hi[s:s + chunk, None]) - np.exp(b + lo[s:s + chunk, None])
        per_draw[s:s + chunk] = diff @ w
        unit += diff.sum(axis=0)
    unit /= len(draws)
    est, l, u = _summary(per_draw)
    cov_se = float(np.sqrt(np.sum(w ** 2 * (unit - unit @ w) ** 2))) if len(rows) > 1 else float("nan")
    return EffectSummary(int(x), est, l, u, per_draw, len(rows), cov_se)


ACE_COLUMNS = ["context", "x", "increment", "ace", "lower", "upper", "n", "note"]


def ace_table(fits: dict, frames: dict, xs=None) -> pd.DataFrame:
    """Table of effects for every context and ``x = 1..X_max-1``.

    Parameters
    ----------
    fits : dict
        ``{context label: PosteriorDraws}``.
    frames : dict
        ``{context label: DataFrame}`` with the same keys.
    """
    if set(fits) != set(frames):
        raise ValueError("fits and data must cover the same contexts")
    rows = []
    for ctx in fits:
        d = fits[ctx]
        levels = xs if xs is not None else range(1, d.spec.x_max)
        for x in levels:
            try:
                e = counterfactual_difference(d, frames[ctx], x)
                rows.append([ctx, x, f"{x}->{x + 1}", e.estimate, e.lower, e.upper, e.n_stratum, ""])
            except DataError as exc:
                rows.append([ctx, x, f"{x}->{x + 1}", np.nan, np.nan, np.nan, 0, str(exc)])
    return pd.DataFrame(rows, columns=ACE_COLUMNS)


def effect_draws(fits: dict, frames: dict, xs=None) -> dict:
    """``{(context, x): per-draw differences}`` for strata that are not empty."""
    out = {}
    for ctx in fits:
        levels = xs if xs is not None else range(1, fits[ctx].spec.x_max)
        for x in levels:
            try:
                out[(ctx, x)] = counterfactual_difference(fits[ctx], frames[ctx], x).per_draw
            except DataError:
                continue
    return out
