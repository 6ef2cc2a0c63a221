"""Context-specific causal identification with labelled DAGs and Bayesian effect estimation."""

from .functional import JointTable, evaluate, simplify, to_dict, to_json, to_text
from .graph import Admg, Dag, d_separated, latent_project
from .identify import (
    IdentResult,
    IdentificationError,
    check_conditioned_counterfactual,
    combine_contexts,
    counterfactual_functional,
    id_effect,
    identify_context_effect,
)
from .ldag import Ldag, csi_separated, fixture, load_ldag, parse_ldag, project, serialize_ldag, validate
from .scm import (
    ScmSpec,
    counterfactual_replay,
    exact_joint,
    load_scm,
    oracle_counterfactual_difference,
    oracle_interventional,
    random_discrete_scm,
    simulate_observational,
)

__version__ = "0.1.0"

__all__ = [
    "Admg", "Dag", "IdentResult", "IdentificationError", "JointTable", "Ldag", "ScmSpec",
    "check_conditioned_counterfactual", "combine_contexts", "counterfactual_functional",
    "counterfactual_replay", "csi_separated", "d_separated", "evaluate", "exact_joint", "fixture",
    "id_effect", "identify_context_effect", "latent_project", "load_ldag", "load_scm",
    "oracle_counterfactual_difference", "oracle_interventional", "parse_ldag", "project",
    "random_discrete_scm", "serialize_ldag", "simplify", "simulate_observational", "to_dict",
    "to_json", "to_text", "validate",
]
