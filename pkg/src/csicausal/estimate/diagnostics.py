"""Convergence diagnostics: rank-normalised split R-hat and bulk ESS."""

from __future__ import annotations

import numpy as np
from scipy import stats


def _split(chains: np.ndarray) -> np.ndarray:
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 1:
        chains = chains[None, :]
    n = chains.shape[1]
    half = n // 2
    if half < 2:
        return chains
    return np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat(chains: np.ndarray) -> float:
    m, n = chains.shape
    if n < 2:
        return np.nan
    means = chains.mean(axis=1)
    W = chains.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1) if m > 1 else 0.0
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def split_rhat(chains) -> float:
    """Maximum of bulk and folded rank-normalised split R-hat.

    Parameters
    ----------
    chains : array, shape (n_chains, n_draws)
    """
    s = _split(chains)
    if np.ptp(s) == 0:
        return 1.0
    bulk = _rhat(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat(_rank_normalize(folded)) if np.ptp(folded) > 0 else 1.0
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / n


def _ess(chains: np.ndarray) -> float:
    m, n = chains.shape
    if n < 4:
        return np.nan
    acov = np.array([_autocov(c) for c in chains])
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = 1.0 - (mean_var - acov[:, 1:].mean(axis=0)) / var_plus

    # Geyer: sum adjacent pairs while positive, then enforce monotonicity
    t = 0
    pairs = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pairs.append(p)
        t += 2
    pairs = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else tau
    return float(m * n / tau)


def bulk_ess(chains) -> float:
    """Bulk effective sample size on rank-normalised split chains."""
    s = _split(chains)
    if np.ptp(s) == 0:
        return float(s.size)
    return _ess(_rank_normalize(s))


def summarize(chains_by_name: dict) -> dict:
    """``{name: {"rhat": ..., "ess_bulk": ...}}`` for arrays of shape (chains, draws)."""
    return {k: {"rhat": split_rhat(v), "ess_bulk": bulk_ess(v)} for k, v in chains_by_name.items()}
