from .design import DataError, Design, Encoder, ModelSpec, build_design
from .diagnostics import bulk_ess, split_rhat
from .effects import EffectSummary, ace_table, counterfactual_difference, effect_draws
from .fit import FitDiagnostics, FitResult, PosteriorDraws, fit
from .model import GammaRegression, ModelError, Params, mo, stick_breaking
from .nuts import run_chain

__all__ = [
    "DataError", "Design", "EffectSummary", "Encoder", "FitDiagnostics", "FitResult", "GammaRegression",
    "ModelError", "ModelSpec", "Params", "PosteriorDraws", "ace_table", "build_design", "bulk_ess",
    "counterfactual_difference", "effect_draws", "fit", "mo", "run_chain", "split_rhat", "stick_breaking",
]
