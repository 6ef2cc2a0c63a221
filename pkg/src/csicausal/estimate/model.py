"""Gamma log-link regression with a monotonic ordinal term and random intercepts.

The mean of observation ``i`` is ``exp(eta_i)`` with

    eta_i = alpha + X_i @ coef + u[g_i] + a * mo(x_i, zeta)

Sampling happens on an unconstrained vector: random intercepts are
non-centred (``u = sigma_u * z``), ``sigma_u`` and ``shape`` are log
transformed and ``zeta`` is stick-broken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

from .design import Design, ModelSpec

LOG_2PI = np.log(2 * np.pi)


class ModelError(ValueError):
    pass


def mo(x, zeta) -> np.ndarray:
    """Monotonic transform ``sum_{k < x} zeta_k``.

    Parameters
    ----------
    x : int or array of int
        Ordinal levels, ``1 <= x <= len(zeta) + 1``.
    zeta : array
        Simplex of increments.

    Returns
    -------
    ndarray
        Values in ``[0, 1]``; ``mo(1) = 0`` and ``mo(len(zeta) + 1) = 1``.
    """
    zeta = np.asarray(zeta, dtype=float)
    x = np.asarray(x)
    if np.any(x != np.round(x)):
        raise ModelError("ordinal levels must be integers")
    xi = x.astype(int)
    if np.any(xi < 1) or np.any(xi > len(zeta) + 1):
        raise ModelError(f"level outside 1..{len(zeta) + 1}")
    steps = np.concatenate([[0.0], np.cumsum(zeta)])
    steps[-1] = 1.0 if len(zeta) else 0.0
    return steps[xi - 1]


# -- transforms ---------------------------------------------------------------------


def stick_breaking(y):
    """Map ``y`` (length K-1) to a K-simplex; also return the log Jacobian."""
    y = np.asarray(y, dtype=float)
    K = len(y) + 1
    t = y - np.log(K - 1 - np.arange(K - 1))
    z = expit(t)
    log_1mz = -np.logaddexp(0.0, t)
    log_rest = np.concatenate([[0.0], np.cumsum(log_1mz)])
    rest = np.exp(log_rest)
    zeta = np.empty(K)
    zeta[:-1] = rest[:-1] * z
    zeta[-1] = rest[-1]
    logj = float(np.sum(-np.logaddexp(0.0, -t) + log_1mz + log_rest[:-1]))
    return zeta, logj


def stick_breaking_grad(y, g_zeta):
    """Gradient w.r.t. ``y`` of ``g_zeta . zeta(y) + log|J|(y)``."""
    y = np.asarray(y, dtype=float)
    K = len(y) + 1
    z = expit(y - np.log(K - 1 - np.arange(K - 1)))
    rests = np.exp(np.concatenate([[0.0], np.cumsum(np.log1p(-z))]))
    g_y = np.empty(K - 1)
    g_rest = g_zeta[K - 1]  # adjoint of the stick left after step k
    for k in range(K - 2, -1, -1):
        r = rests[k]
        zk = z[k]
        # d/dz of log z + log(1 - z), already multiplied by dz/dy = z(1 - z)
        g_y[k] = (g_zeta[k] - g_rest) * r * zk * (1 - zk) + (1 - 2 * zk)
        g_rest = g_zeta[k] * zk + g_rest * (1 - zk) + 1.0 / r
    return g_y


def simplex_to_unconstrained(zeta):
    zeta = np.asarray(zeta, dtype=float)
    K = len(zeta)
    y = np.empty(K - 1)
    rest = 1.0
    for k in range(K - 1):
        z = zeta[k] / rest
        y[k] = np.log(z) - np.log1p(-z) + np.log(K - 1 - k)
        rest -= zeta[k]
    return y


# -- parameters ---------------------------------------------------------------------


@dataclass
class Params:
    alpha: float
    coef: np.ndarray
    a: float
    zeta: np.ndarray
    u: np.ndarray
    sigma_u: float
    shape: float


@dataclass(frozen=True)
class Layout:
    n_coef: int
    n_simplex: int  # length of zeta, 0 without a monotonic term
    n_groups: int

    @property
    def slices(self):
        out, i = {}, 0
        for name, size in (
            ("alpha", 1),
            ("coef", self.n_coef),
            ("a", 1 if self.n_simplex else 0),
            ("zeta", max(self.n_simplex - 1, 0)),
            ("z", self.n_groups),
            ("log_sigma_u", 1 if self.n_groups else 0),
            ("log_shape", 1),
        ):
            out[name] = slice(i, i + size)
            i += size
        return out

    @property
    def dim(self) -> int:
        return list(self.slices.values())[-1].stop


def _half_t_const(df, scale):
    return np.log(2.0) + gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * np.log(df * np.pi) - np.log(scale)


def half_t_logpdf(x, df, scale):
    return _half_t_const(df, scale) - (df + 1) / 2 * np.log1p((x / scale) ** 2 / df)


def normal_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * LOG_2PI - np.log(sd) - 0.5 * (x / sd) ** 2))


def dirichlet_logpdf(zeta, conc):
    K = len(zeta)
    return float(gammaln(K * conc) - K * gammaln(conc) + (conc - 1) * np.sum(np.log(zeta)))


class GammaRegression:
    """Posterior density for one context's data.

    Parameters
    ----------
    design : Design
        Encoded data.
    spec : ModelSpec
        Priors and structure.
    """

    def __init__(self, design: Design, spec: ModelSpec):
        self.design = design
        self.spec = spec
        K = spec.x_max - 1 if spec.monotonic else 0
        G = design.n_groups if spec.group else 0
        self.layout = Layout(design.X.shape[1], K, G)
        self._s = self.layout.slices
        self._logy = np.log(design.y)
        self._sum_logy = float(self._logy.sum())
        self._gidx = np.where(design.group >= 0, design.group, 0)
        self._has_group = design.group >= 0
        # eta = A @ [alpha, coef, u, a * steps] with one-hot groups and levels
        L = self.layout
        n = design.n
        blocks = [np.ones((n, 1)), design.X]
        if L.n_groups:
            Gm = np.zeros((n, L.n_groups))
            rows = np.flatnonzero(self._has_group)
            Gm[rows, design.group[rows]] = 1.0
            blocks.append(Gm)
        if L.n_simplex:
            Lm = np.zeros((n, L.n_simplex + 1))
            Lm[np.arange(n), design.x - 1] = 1.0
            blocks.append(Lm)
        self._A = np.ascontiguousarray(np.concatenate(blocks, axis=1))
        self._colsum = self._A.sum(axis=0)
        if spec.monotonic and (design.x.max() > spec.x_max or design.x.min() < 1):
            raise ModelError("treatment level out of range")

    @property
    def dim(self) -> int:
        return self.layout.dim

    # constrained <-> unconstrained
    def unpack(self, theta) -> Params:
        s, L = self._s, self.layout
        if L.n_simplex:
            zeta = stick_breaking(theta[s["zeta"]])[0] if L.n_simplex > 1 else np.ones(1)
            a = float(theta[s["a"]][0])
        else:
            zeta, a = np.zeros(0), 0.0
        sigma_u = float(np.exp(theta[s["log_sigma_u"]][0])) if L.n_groups else 0.0
        return Params(
            float(theta[s["alpha"]][0]),
            np.array(theta[s["coef"]]),
            a,
            zeta,
            sigma_u * np.asarray(theta[s["z"]]),
            sigma_u,
            float(np.exp(theta[s["log_shape"]][0])),
        )

    def pack(self, p: Params) -> np.ndarray:
        s, L = self._s, self.layout
        theta = np.zeros(L.dim)
        theta[s["alpha"]] = p.alpha
        theta[s["coef"]] = p.coef
        if L.n_simplex:
            theta[s["a"]] = p.a
            if L.n_simplex > 1:
                theta[s["zeta"]] = simplex_to_unconstrained(p.zeta)
        if L.n_groups:
            if not p.sigma_u > 0:
                raise ModelError("sigma_u must be positive")
            theta[s["z"]] = np.asarray(p.u) / p.sigma_u
            theta[s["log_sigma_u"]] = np.log(p.sigma_u)
        theta[s["log_shape"]] = np.log(p.shape)
        return theta

    # densities on the constrained scale
    def eta(self, p: Params, x=None) -> np.ndarray:
        d = self.design
        out = p.alpha + d.X @ p.coef
        if self.layout.n_groups:
            out = out + np.where(self._has_group, p.u[self._gidx], 0.0)
        if self.layout.n_simplex:
            out = out + p.a * mo(d.x if x is None else x, p.zeta)
        return out

    def log_likelihood(self, p: Params) -> float:
        if not p.shape > 0:
            raise ModelError("shape must be positive")
        eta = self.eta(p)
        k, y = p.shape, self.design.y
        ll = k * np.log(k) - k * eta - gammaln(k) + (k - 1) * self._logy - k * y * np.exp(-eta)
        return float(ll.sum())

    def log_prior(self, p: Params) -> float:
        sp, L = self.spec, self.layout
        lp = normal_logpdf(p.alpha, sp.intercept_sd) + normal_logpdf(p.coef, sp.coef_sd)
        if L.n_simplex:
            lp += normal_logpdf(p.a, sp.coef_sd)
            if np.any(p.zeta < 0) or abs(p.zeta.sum() - 1) > 1e-10:
                raise ModelError("zeta is not a simplex")
            if L.n_simplex > 1:
                lp += dirichlet_logpdf(p.zeta, sp.simplex_concentration)
        if L.n_groups:
            if not p.sigma_u > 0:
                raise ModelError("sigma_u must be positive")
            lp += float(half_t_logpdf(p.sigma_u, sp.sigma_u_df, sp.sigma_u_scale))
            lp += normal_logpdf(p.u, p.sigma_u)
        lp += float(half_t_logpdf(p.shape, sp.shape_df, sp.shape_scale))
        return lp

    def log_posterior(self, p: Params) -> float:
        """Unnormalized log posterior on the constrained scale (no Jacobians)."""
        out = self.log_likelihood(p) + self.log_prior(p)
        if not np.isfinite(out):
            raise ModelError("log posterior is not finite")
        return out

    # sampler target
    def logp_grad(self, theta):
        """Log density and gradient on the unconstrained scale (Jacobians included)."""
        s, L, sp, d = self._s, self.layout, self.spec, self.design
        p, G, K = L.n_coef, L.n_groups, L.n_simplex
        g = np.zeros(L.dim)
        alpha = theta[s["alpha"]][0]
        coef = theta[s["coef"]]
        log_k = theta[s["log_shape"]][0]
        k = np.exp(log_k)

        beta = [np.array([alpha]), coef]
        if G:
            z = theta[s["z"]]
            log_su = theta[s["log_sigma_u"]][0]
            su = np.exp(log_su)
            beta.append(su * z)
        if K:
            a = theta[s["a"]][0]
            if K > 1:
                yz = theta[s["zeta"]]
                zeta, logj = stick_breaking(yz)
            else:
                zeta, logj = np.ones(1), 0.0
            steps = np.concatenate([[0.0], np.cumsum(zeta)])
            beta.append(a * steps)
        beta = np.concatenate(beta)

        eta = self._A @ beta
        eta_sum = float(self._colsum @ beta)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ratio = d.y * np.exp(-eta)
            ratio_sum = ratio.sum()
            lp = d.n * (k * log_k - gammaln(k)) - k * eta_sum + (k - 1) * self._sum_logy - k * ratio_sum
        if not np.isfinite(lp):
            return -np.inf, g
        # d ll / d eta = k (y / mu - 1), pushed through A
        gb = k * (self._A.T @ ratio - self._colsum)

        lp += -0.5 * (alpha / sp.intercept_sd) ** 2
        g[s["alpha"]] = gb[0] - alpha / sp.intercept_sd ** 2
        lp += -0.5 * float(coef @ coef) / sp.coef_sd ** 2
        g[s["coef"]] = gb[1:1 + p] - coef / sp.coef_sd ** 2
        off = 1 + p

        if G:
            gu = gb[off:off + G]
            off += G
            lp += -0.5 * float(z @ z)
            g[s["z"]] = su * gu - z
            df, sc = sp.sigma_u_df, sp.sigma_u_scale
            lp += -(df + 1) / 2 * np.log1p((su / sc) ** 2 / df) + log_su
            g[s["log_sigma_u"]] = su * float(gu @ z) - (df + 1) * su ** 2 / (df * sc ** 2 + su ** 2) + 1.0

        if K:
            by_level = gb[off:off + K + 1]
            lp += -0.5 * (a / sp.coef_sd) ** 2
            g[s["a"]] = float(by_level @ steps) - a / sp.coef_sd ** 2
            if K > 1:
                conc = sp.simplex_concentration
                lp += (conc - 1) * np.sum(np.log(zeta)) + logj
                # d ll / d zeta_k = a * (sum of level gradients above k)
                tail = np.cumsum(by_level[::-1])[::-1][1:]
                g_zeta = a * tail + (conc - 1) / zeta
                g[s["zeta"]] = stick_breaking_grad(yz, g_zeta)

        df, sc = sp.shape_df, sp.shape_scale
        lp += -(df + 1) / 2 * np.log1p((k / sc) ** 2 / df) + log_k
        dk = d.n * (log_k + 1 - digamma(k)) - eta_sum + self._sum_logy - ratio_sum
        g[s["log_shape"]] = k * dk - (df + 1) * k ** 2 / (df * sc ** 2 + k ** 2) + 1.0
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            return -np.inf, g
        return float(lp), g

    def logp(self, theta) -> float:
        return self.logp_grad(theta)[0]

    def initial_point(self, rng, jitter=0.5) -> np.ndarray:
        """Random start near a sensible intercept; other coordinates jittered."""
        theta = rng.uniform(-jitter, jitter, self.dim) * 0.2
        theta[self._s["alpha"]] = np.log(np.mean(self.design.y)) + rng.uniform(-jitter, jitter) * 0.2
        theta[self._s["log_shape"]] = rng.uniform(-jitter, jitter)
        return theta
