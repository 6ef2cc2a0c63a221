"""No-U-turn sampler with multinomial trajectory sampling.

The transition follows the now-standard variant: biased progressive sampling
between doublings, uniform sampling inside each subtree, and the generalised
U-turn criterion checked on the merged tree and across the two halves.
Warmup adapts the step size by dual averaging and a diagonal (or dense)
metric over doubling windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DELTA_H = 1000.0


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    minus: _Point
    plus: _Point
    rho: np.ndarray
    log_w: float
    proposal: _Point
    valid: bool
    sum_accept: float
    n_leapfrog: int
    divergent: bool


def _uturn_ok(rho, p_sharp_minus, p_sharp_plus) -> bool:
    return float(rho @ p_sharp_minus) > 0 and float(rho @ p_sharp_plus) > 0


class Nuts:
    """One chain's transition kernel.

    Parameters
    ----------
    logp_grad : callable
        ``theta -> (log density, gradient)``.
    inv_metric : ndarray
        Inverse mass matrix, diagonal (1-d) or dense (2-d).
    """

    def __init__(self, logp_grad, dim, rng, max_depth=10, inv_metric=None, step_size=0.1):
        self.logp_grad = logp_grad
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.step_size = step_size
        self.set_metric(np.ones(dim) if inv_metric is None else inv_metric)

    def set_metric(self, inv_metric):
        """Diagonal (1-d array) or dense (2-d array) inverse mass matrix."""
        inv_metric = np.asarray(inv_metric, dtype=float)
        self.inv_metric = inv_metric
        if inv_metric.ndim == 1:
            self._chol_mass = 1.0 / np.sqrt(inv_metric)
        else:
            self._chol_mass = np.linalg.cholesky(np.linalg.inv(inv_metric))

    def _sharp(self, p):
        return self.inv_metric * p if self.inv_metric.ndim == 1 else self.inv_metric @ p

    def _momentum(self):
        z = self.rng.normal(size=self.dim)
        return self._chol_mass * z if self.inv_metric.ndim == 1 else self._chol_mass @ z

    def _kinetic(self, p):
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(p @ self._sharp(p))

    def _leapfrog(self, z: _Point, eps) -> _Point:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self._sharp(p)
        logp, grad = self.logp_grad(q)
        p = p + 0.5 * eps * grad
        return _Point(q, p, logp, grad)

    def _build(self, z: _Point, direction, depth, H0) -> _Tree:
        if depth == 0:
            new = self._leapfrog(z, direction * self.step_size)
            H = -new.logp + self._kinetic(new.p) if np.isfinite(new.logp) else np.inf
            if np.isnan(H):
                H = np.inf
            divergent = H - H0 > MAX_DELTA_H
            accept = min(1.0, np.exp(H0 - H)) if np.isfinite(H) else 0.0
            return _Tree(new, new, new.p.copy(), H0 - H, new, not divergent, accept, 1, divergent)

        first = self._build(z, direction, depth - 1, H0)
        if not first.valid:
            return first
        edge = first.plus if direction > 0 else first.minus
        second = self._build(edge, direction, depth - 1, H0)
        n_lf = first.n_leapfrog + second.n_leapfrog
        acc = first.sum_accept + second.sum_accept
        if not second.valid:
            return _Tree(first.minus, first.plus, first.rho, first.log_w, first.proposal, False, acc, n_lf,
                         second.divergent)
        log_w = np.logaddexp(first.log_w, second.log_w)
        proposal = first.proposal
        if np.log(self.rng.uniform()) < second.log_w - log_w:
            proposal = second.proposal
        left, right = (first, second) if direction > 0 else (second, first)
        rho = left.rho + right.rho
        valid = self._criterion(left, right, rho)
        return _Tree(left.minus, right.plus, rho, log_w, proposal, valid, acc, n_lf, False)

    def _criterion(self, left: _Tree, right: _Tree, rho) -> bool:
        sh = self._sharp
        ok = _uturn_ok(rho, sh(left.minus.p), sh(right.plus.p))
        ok = ok and _uturn_ok(left.rho + right.minus.p, sh(left.minus.p), sh(right.minus.p))
        ok = ok and _uturn_ok(right.rho + left.plus.p, sh(left.plus.p), sh(right.plus.p))
        return ok

    def transition(self, q, logp, grad):
        """One NUTS step from ``q``; returns the new point and step statistics."""
        p0 = self._momentum()
        z0 = _Point(q, p0, logp, grad)
        H0 = -logp + self._kinetic(p0)
        traj = _Tree(z0, z0, p0.copy(), 0.0, z0, True, 0.0, 0, False)
        sample = z0
        depth = 0
        sum_accept, n_leapfrog, divergent = 0.0, 0, False
        while depth < self.max_depth:
            direction = 1 if self.rng.uniform() > 0.5 else -1
            edge = traj.plus if direction > 0 else traj.minus
            sub = self._build(edge, direction, depth, H0)
            sum_accept += sub.sum_accept
            n_leapfrog += sub.n_leapfrog
            if not sub.valid:
                divergent = sub.divergent
                break
            depth += 1
            if sub.log_w > traj.log_w or self.rng.uniform() < np.exp(sub.log_w - traj.log_w):
                sample = sub.proposal
            left, right = (traj, sub) if direction > 0 else (sub, traj)
            rho = left.rho + right.rho
            ok = self._criterion(left, right, rho)
            traj = _Tree(left.minus, right.plus, rho, np.logaddexp(traj.log_w, sub.log_w), sample, ok,
                         0.0, 0, False)
            if not ok:
                break
        stats = {
            "accept_stat": sum_accept / max(n_leapfrog, 1),
            "n_leapfrog": n_leapfrog,
            "depth": depth,
            "divergent": divergent,
            "step_size": self.step_size,
        }
        return sample.q, sample.logp, sample.grad, stats

    def find_reasonable_step(self, q, logp, grad):
        """Double or halve the step until one leapfrog's acceptance crosses 0.8."""
        eps = self.step_size
        p = self._momentum()
        H0 = -logp + self._kinetic(p)

        def delta(e):
            z = self._leapfrog(_Point(q, p, logp, grad), e)
            H = -z.logp + self._kinetic(z.p)
            return H0 - H if np.isfinite(H) else -np.inf

        d = delta(eps)
        up = d > np.log(0.8)
        for _ in range(100):
            eps = eps * 2 if up else eps / 2
            d = delta(eps)
            if up and not d > np.log(0.8):
                eps /= 2
                break
            if not up and d > np.log(0.8):
                break
        self.step_size = eps
        return eps


class DualAveraging:
    """Step-size adaptation towards a target mean acceptance statistic."""

    def __init__(self, step_size, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.count = 0

    def update(self, accept_stat) -> float:
        self.count += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.count + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.count) / self.gamma
        w = self.count ** (-self.kappa)
        self.x_bar = w * x + (1 - w) * self.x_bar
        return float(np.exp(x))

    @property
    def final(self) -> float:
        return float(np.exp(self.x_bar))


def adaptation_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Metric-adaptation windows ``[(start, end), ...]`` inside ``warmup``."""
    if warmup < 20:
        return []
    if init_buffer + term_buffer + base_window > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base_window = warmup - init_buffer - term_buffer
    end = warmup - term_buffer
    out, start, size = [], init_buffer, base_window
    while start < end:
        if start + 3 * size > end:
            size = end - start
        out.append((start, start + size))
        start += size
        size *= 2
    return out


def _regularized_metric(samples, dense=False):
    n = len(samples)
    shrink = n / (n + 5.0)
    if dense:
        cov = np.cov(samples, rowvar=False)
        return shrink * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(samples.shape[1])
    var = np.var(samples, axis=0, ddof=1)
    return shrink * var + 1e-3 * (5.0 / (n + 5.0))


def run_chain(logp_grad, init, warmup, draws, rng, target_accept=0.8, max_depth=10, dense=False):
    """Sample one chain.

    ``dense=True`` adapts a full covariance metric instead of a diagonal one.

    Returns
    -------
    samples : ndarray, shape (draws, dim)
    logps : ndarray, shape (draws,)
    stats : dict of ndarrays
        Per-draw ``accept_stat``, ``n_leapfrog``, ``depth``, ``divergent`` and
        ``step_size`` for the sampling phase.
    """
    q = np.asarray(init, dtype=float)
    logp, grad = logp_grad(q)
    if not np.isfinite(logp):
        raise ValueError("initial point has zero density")
    kernel = Nuts(logp_grad, len(q), rng, max_depth=max_depth)
    kernel.find_reasonable_step(q, logp, grad)
    da = DualAveraging(kernel.step_size, target_accept)
    windows = adaptation_windows(warmup)
    ends = {e: s for s, e in windows}
    starts = {s for s, _ in windows}
    buf = []
    for it in range(warmup):
        q, logp, grad, st = kernel.transition(q, logp, grad)
        kernel.step_size = da.update(st["accept_stat"])
        if windows and windows[0][0] <= it < windows[-1][1]:
            if it in starts:
                buf = []
            buf.append(q.copy())
            if it + 1 in ends:
                kernel.set_metric(_regularized_metric(np.array(buf), dense))
                kernel.find_reasonable_step(q, logp, grad)
                da.restart(kernel.step_size)
    if warmup:
        kernel.step_size = da.final

    out = np.empty((draws, len(q)))
    lps = np.empty(draws)
    keys = ("accept_stat", "n_leapfrog", "depth", "divergent", "step_size")
    stats = {k: np.empty(draws) for k in keys}
    for i in range(draws):
        q, logp, grad, st = kernel.transition(q, logp, grad)
        out[i] = q
        lps[i] = logp
        for k in keys:
            stats[k][i] = st[k]
    stats["divergent"] = stats["divergent"].astype(bool)
    stats["inv_metric"] = kernel.inv_metric.copy()
    return out, lps, stats
