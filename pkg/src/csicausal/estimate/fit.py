"""Running the sampler and storing posterior draws."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..tables import read_csv, write_csv
from .design import Encoder, ModelSpec, build_design
from .diagnostics import bulk_ess, split_rhat
from .model import GammaRegression, mo
from .nuts import run_chain

HEADLINE = ("alpha", "a", "shape", "sigma_u")


@dataclass
class PosteriorDraws:
    """Constrained posterior draws, one row per retained iteration."""

    alpha: np.ndarray
    coef: np.ndarray
    a: np.ndarray
    zeta: np.ndarray
    u: np.ndarray
    sigma_u: np.ndarray
    shape: np.ndarray
    lp: np.ndarray
    chain: np.ndarray
    encoder: Encoder

    @property
    def spec(self) -> ModelSpec:
        return self.encoder.spec

    def __len__(self):
        return len(self.alpha)

    @property
    def coef_names(self) -> tuple:
        return self.encoder.columns

    def scalar_columns(self) -> dict:
        """Flat ``{name: values}`` view used for CSV output and diagnostics."""
        out = {"alpha": self.alpha}
        for j, name in enumerate(self.coef_names):
            out[f"coef[{name}]"] = self.coef[:, j]
        if self.zeta.shape[1]:
            out["a"] = self.a
            for k in range(self.zeta.shape[1]):
                out[f"zeta[{k + 1}]"] = self.zeta[:, k]
        if self.u.shape[1]:
            for g, lv in enumerate(self.encoder.group_levels):
                out[f"u[{lv}]"] = self.u[:, g]
            out["sigma_u"] = self.sigma_u
        out["shape"] = self.shape
        return out

    def to_frame(self) -> pd.DataFrame:
        cols = self.scalar_columns()
        cols["lp__"] = self.lp
        cols["chain"] = self.chain
        return pd.DataFrame(cols)

    def to_csv(self, path, extra_meta=None, stamp=None):
        path = Path(path)
        write_csv(self.to_frame(), path, stamp, float_format="%.17g")
        meta = {"spec": self.spec.to_dict(), "encoder": self.encoder.to_dict()}
        meta.update(extra_meta or {})
        meta.update(stamp or {})
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "PosteriorDraws":
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        spec = ModelSpec.from_dict(meta["spec"])
        enc = Encoder.from_dict(meta["encoder"], spec)
        df = read_csv(path)
        B = len(df)
        coef = np.column_stack([df[f"coef[{c}]"] for c in enc.columns]) if enc.columns else np.zeros((B, 0))
        K = spec.x_max - 1 if spec.monotonic else 0
        zeta = np.column_stack([df[f"zeta[{k + 1}]"] for k in range(K)]) if K else np.zeros((B, 0))
        G = len(enc.group_levels) if spec.group else 0
        u = np.column_stack([df[f"u[{lv}]"] for lv in enc.group_levels]) if G else np.zeros((B, 0))
        return cls(
            df["alpha"].to_numpy(), coef, df["a"].to_numpy() if K else np.zeros(B), zeta, u,
            df["sigma_u"].to_numpy() if G else np.zeros(B), df["shape"].to_numpy(),
            df["lp__"].to_numpy(), df["chain"].to_numpy(dtype=int), enc,
        )

    def eta_base(self, frame: pd.DataFrame) -> np.ndarray:
        """``alpha + X coef + u`` for every (draw, row); shape ``(B, n)``."""
        X = self.encoder.matrix(frame)
        gi = self.encoder.group_index(frame)
        out = self.alpha[:, None] + self.coef @ X.T
        if self.u.shape[1]:
            out = out + np.where(gi >= 0, self.u[:, np.maximum(gi, 0)], 0.0)
        return out

    def mo_term(self, x) -> np.ndarray:
        """``a_b * mo(x, zeta_b)`` per draw for a scalar level ``x``."""
        if not self.zeta.shape[1]:
            return np.zeros(len(self))
        steps = np.concatenate([np.zeros((len(self), 1)), np.cumsum(self.zeta, axis=1)], axis=1)
        mo(x, self.zeta[0])  # range check
        return self.a * steps[:, int(x) - 1]

    def linear_predictor(self, frame: pd.DataFrame, x=None) -> np.ndarray:
        """``alpha + X coef + u + a mo(x, zeta)`` per (draw, row).

        ``x`` overrides the treatment column with a single level.
        """
        base = self.eta_base(frame)
        if self.zeta.shape[1]:
            if x is None:
                xs = frame[self.spec.treatment].to_numpy().astype(int)
                steps = np.concatenate([np.zeros((len(self), 1)), np.cumsum(self.zeta, axis=1)], axis=1)
                base = base + self.a[:, None] * steps[:, xs - 1]
            else:
                base = base + self.mo_term(x)[:, None]
        return base

    def mean(self, frame: pd.DataFrame, x=None) -> np.ndarray:
        """Mean-function values ``mu = exp(linear predictor)`` per (draw, row)."""
        return np.exp(self.linear_predictor(frame, x))


@dataclass
class FitDiagnostics:
    rhat: dict
    ess_bulk: dict
    divergences: list
    accept_stat: list
    step_size: list
    max_depth_hits: list
    extra: dict = field(default_factory=dict)

    def failures(self, names=HEADLINE, threshold=1.01) -> list:
        """Parameters among ``names`` whose R-hat is at or above ``threshold``."""
        out = []
        for k in names:
            if k in self.rhat and not self.rhat[k] < threshold:
                out.append(k)
        return out

    def to_dict(self) -> dict:
        return {
            "rhat": self.rhat, "ess_bulk": self.ess_bulk, "divergences": self.divergences,
            "accept_stat": self.accept_stat, "step_size": self.step_size,
            "max_depth_hits": self.max_depth_hits, **self.extra,
        }

    def to_json(self, path=None, extra=None):
        d = self.to_dict()
        d.update(extra or {})
        text = json.dumps(d, indent=2, sort_keys=True, default=float)
        if path:
            Path(path).write_text(text)
        return text


@dataclass
class FitResult:
    draws: PosteriorDraws
    diagnostics: FitDiagnostics
    model: GammaRegression


def fit(spec: ModelSpec, frame: pd.DataFrame, seed, encoder: Encoder | None = None) -> FitResult:
    """Draw from the posterior with NUTS, one chain at a time.

    Chains get independent generators spawned from ``seed``, so results depend
    only on ``(spec, data, seed)``.
    """
    enc = encoder or Encoder.fit(frame, spec)
    design = build_design(frame, enc)
    model = GammaRegression(design, spec)
    children = np.random.SeedSequence(seed).spawn(spec.chains)
    per_chain = []
    for child in children:
        rng = np.random.default_rng(child)
        init = model.initial_point(rng)
        per_chain.append(run_chain(model.logp_grad, init, spec.warmup, spec.draws_per_chain, rng,
                                   spec.target_accept, spec.max_depth, spec.dense_metric))

    params = [[model.unpack(t) for t in samples] for samples, _, _ in per_chain]
    flat = [p for chain in params for p in chain]
    B = len(flat)
    draws = PosteriorDraws(
        np.array([p.alpha for p in flat]),
        np.array([p.coef for p in flat]).reshape(B, -1),
        np.array([p.a for p in flat]),
        np.array([p.zeta for p in flat]).reshape(B, -1),
        np.array([p.u for p in flat]).reshape(B, -1),
        np.array([p.sigma_u for p in flat]),
        np.array([p.shape for p in flat]),
        np.concatenate([lp for _, lp, _ in per_chain]),
        np.repeat(np.arange(spec.chains), spec.draws_per_chain),
        enc,
    )
    n_ch, n_dr = spec.chains, spec.draws_per_chain
    rhat, ess = {}, {}
    for name, values in draws.scalar_columns().items():
        arr = values.reshape(n_ch, n_dr)
        rhat[name] = split_rhat(arr)
        ess[name] = bulk_ess(arr)
    diag = FitDiagnostics(
        rhat,
        ess,
        [int(st["divergent"].sum()) for _, _, st in per_chain],
        [float(st["accept_stat"].mean()) for _, _, st in per_chain],
        [float(st["step_size"][0]) if len(st["step_size"]) else float("nan") for _, _, st in per_chain],
        [int((st["depth"] >= spec.max_depth).sum()) for _, _, st in per_chain],
    )
    return FitResult(draws, diag, model)
