"""Covariate encoding for the gamma regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """What to regress on what, plus priors and sampler settings.

    ``categorical`` and ``numeric`` list the covariate columns (sub-purpose
    included). ``group`` names the column whose levels receive random
    intercepts. Set ``monotonic=False`` to drop the ordinal treatment term,
    which is how the treatment model of the sensitivity analysis is fitted.
    """

    outcome: str = "Y"
    treatment: str = "X"
    categorical: tuple = ()
    numeric: tuple = ()
    group: str | None = None
    weight: str | None = "weight"
    x_max: int = 15
    monotonic: bool = True
    coef_sd: float = 0.5
    intercept_sd: float = 2.0
    sigma_u_df: float = 3.0
    sigma_u_scale: float = 1.0
    simplex_concentration: float = 2.0
    shape_df: float = 3.0
    shape_scale: float = 5.0
    chains: int = 4
    iterations: int = 2000
    warmup: int = 1000
    target_accept: float = 0.8
    max_depth: int = 10
    dense_metric: bool = False
    context: str | None = None
    context_level: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "numeric", tuple(self.numeric))
        for name in ("coef_sd", "intercept_sd", "sigma_u_scale", "simplex_concentration", "shape_scale",
                     "sigma_u_df", "shape_df"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations <= self.warmup:
            raise ValueError("iterations must exceed warmup")
        if self.chains < 1 or self.warmup < 0:
            raise ValueError("need at least one chain and non-negative warmup")
        if self.monotonic and self.x_max < 2:
            raise ValueError("x_max must be at least 2 for a monotonic effect")
        overlap = set(self.categorical) & set(self.numeric)
        if overlap:
            raise ValueError(f"columns listed as both categorical and numeric: {sorted(overlap)}")

    @property
    def draws_per_chain(self) -> int:
        return self.iterations - self.warmup

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["categorical"] = list(self.categorical)
        d["numeric"] = list(self.numeric)
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model settings: {sorted(extra)}")
        return cls(**d)


def _level_key(v):
    # stable string form so that 1, 1.0 and "1" are the same category
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


@dataclass
class Encoder:
    """One-hot coding fitted on training rows.

    The reference level of each categorical column is its most frequent level
    (ties broken by sorted order), so refits are deterministic.
    """

    spec: ModelSpec
    levels: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    group_levels: tuple = ()
    columns: tuple = ()

    @classmethod
    def fit(cls, frame: pd.DataFrame, spec: ModelSpec) -> "Encoder":
        check_frame(frame, spec)
        enc = cls(spec)
        cols = []
        for c in spec.categorical:
            keys = frame[c].map(_level_key)
            counts = keys.value_counts()
            order = sorted(counts.index, key=lambda k: (-counts[k], k))
            ref = order[0]
            enc.reference[c] = ref
            # "Other" stays last so that reference choice is stable across merges
            rest = sorted(k for k in counts.index if k != ref)
            if "Other" in rest:
                rest = [k for k in rest if k != "Other"] + ["Other"]
            enc.levels[c] = tuple(rest)
            cols.extend(f"{c}[{k}]" for k in rest)
        cols.extend(spec.numeric)
        enc.columns = tuple(cols)
        if spec.group:
            enc.group_levels = tuple(sorted(frame[spec.group].map(_level_key).unique()))
        return enc

    def matrix(self, frame: pd.DataFrame) -> np.ndarray:
        n = len(frame)
        blocks = []
        for c in self.spec.categorical:
            keys = frame[c].map(_level_key).to_numpy()
            known = set(self.levels[c]) | {self.reference[c]}
            unseen = sorted(set(keys) - known)
            if unseen:
                raise DataError(f"column {c} has levels not seen in training: {unseen}")
            blocks.append(np.stack([keys == k for k in self.levels[c]], axis=1).astype(float)
                          if self.levels[c] else np.zeros((n, 0)))
        for c in self.spec.numeric:
            blocks.append(frame[c].to_numpy(dtype=float)[:, None])
        return np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))

    def group_index(self, frame: pd.DataFrame) -> np.ndarray:
        """Index into ``group_levels``; -1 for levels unseen in training."""
        if not self.spec.group:
            return np.full(len(frame), -1)
        lookup = {k: i for i, k in enumerate(self.group_levels)}
        return np.array([lookup.get(k, -1) for k in frame[self.spec.group].map(_level_key)], dtype=int)

    def to_dict(self):
        return {"levels": {k: list(v) for k, v in self.levels.items()}, "reference": dict(self.reference),
                "group_levels": list(self.group_levels), "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d, spec):
        return cls(spec, {k: tuple(v) for k, v in d["levels"].items()}, dict(d["reference"]),
                   tuple(d["group_levels"]), tuple(d["columns"]))


def check_frame(frame: pd.DataFrame, spec: ModelSpec, require_outcome=True):
    need = list(spec.categorical) + list(spec.numeric)
    if spec.monotonic:
        need.append(spec.treatment)
    if require_outcome:
        need.append(spec.outcome)
    if spec.group:
        need.append(spec.group)
    if spec.weight:
        need.append(spec.weight)
    missing = [c for c in need if c not in frame.columns]
    if missing:
        raise DataError(f"data lacks columns {missing}")
    if len(frame) == 0:
        raise DataError("no rows")
    if frame[need].isna().any().any():
        bad = [c for c in need if frame[c].isna().any()]
        raise DataError(f"missing values in {bad}")
    if require_outcome and not (frame[spec.outcome].to_numpy(dtype=float) > 0).all():
        raise DataError(f"{spec.outcome} must be positive")
    if spec.monotonic:
        x = frame[spec.treatment].to_numpy(dtype=float)
        if not np.all(x == np.round(x)) or x.min() < 1 or x.max() > spec.x_max:
            raise DataError(f"{spec.treatment} must be an integer in 1..{spec.x_max}")
    if spec.weight and not (frame[spec.weight].to_numpy(dtype=float) > 0).all():
        raise DataError("weights must be positive")


@dataclass
class Design:
    """Numeric arrays for one dataset under a fitted :class:`Encoder`."""

    y: np.ndarray
    X: np.ndarray
    x: np.ndarray
    group: np.ndarray
    weight: np.ndarray
    n_groups: int

    @property
    def n(self) -> int:
        return len(self.y)


def build_design(frame: pd.DataFrame, enc: Encoder, require_outcome=True) -> Design:
    spec = enc.spec
    check_frame(frame, spec, require_outcome)
    n = len(frame)
    y = frame[spec.outcome].to_numpy(dtype=float) if require_outcome else np.full(n, np.nan)
    x = frame[spec.treatment].to_numpy(dtype=float).astype(int) if spec.monotonic else np.ones(n, dtype=int)
    w = frame[spec.weight].to_numpy(dtype=float) if spec.weight else np.ones(n)
    return Design(y, enc.matrix(frame), x, enc.group_index(frame), w, len(enc.group_levels))
