"""Certified robustness and trustworthiness analysis for small ReLU networks.

Pipeline: train (or load) a network, fold its batch norms, propagate
activation bounds, encode the exact mixed-integer model, and solve each
verification question with branch and bound over a bounded-variable
simplex. An independent enumeration oracle cross-checks results.
"""

from .bnb import BnbOptions, BnbStatus, MilpResult, solve_milp
from .bounds import (
    InputBox,
    LayerBounds,
    Stability,
    StabilityMap,
    classify_neurons,
    empirical_stability,
    lp_tighten,
    propagate_bounds,
)
from .errors import (
    DimensionMismatch,
    Divergence,
    InvalidArg,
    InvalidValue,
    NumericalBreakdown,
    ParseError,
    RelucertError,
    SolverFailure,
    TooManyUnstable,
    UnsoundBounds,
)
from .milp import (
    LinearRow,
    MilpProblem,
    default_delta_cap,
    encode_network,
    set_robustness_objective,
    set_trust_problem,
    to_lp_text,
)
from .nnmodel import (
    AffineLayer,
    BatchNormParams,
    FoldedNetwork,
    HiddenLayer,
    NetworkSpec,
    OutputLayer,
    fold_bn,
    forward,
    forward_unfolded,
    load_network,
    network_hash,
    save_network,
)
from .oracle import (
    OracleResult,
    RobustnessSpec,
    SampleBound,
    TrustSpec,
    pattern_enumerate_opt,
    sample_bound,
)
from .simplex import SimplexOptions, solve_lp
from .trainer import (
    Dataset,
    TrainConfig,
    evaluate,
    gen_synthetic,
    load_dataset,
    save_dataset,
    train,
)
from .verify import (
    BatchRobustness,
    Comparison,
    RobustnessResult,
    TrustResult,
    VerificationQuery,
    VerifyOptions,
    compare_robustness_vs_test,
    query_hash,
    robustness,
    robustness_batch,
    robustness_report,
    trust_report,
    trustworthiness,
)

__version__ = "0.1.0"

__all__ = [
    "AffineLayer",
    "BatchNormParams",
    "BatchRobustness",
    "BnbOptions",
    "BnbStatus",
    "Comparison",
    "Dataset",
    "DimensionMismatch",
    "Divergence",
    "FoldedNetwork",
    "HiddenLayer",
    "InputBox",
    "InvalidArg",
    "InvalidValue",
    "LayerBounds",
    "LinearRow",
    "MilpProblem",
    "MilpResult",
    "NetworkSpec",
    "NumericalBreakdown",
    "OracleResult",
    "OutputLayer",
    "ParseError",
    "RelucertError",
    "RobustnessResult",
    "RobustnessSpec",
    "SampleBound",
    "SimplexOptions",
    "SolverFailure",
    "Stability",
    "StabilityMap",
    "TooManyUnstable",
    "TrainConfig",
    "TrustResult",
    "TrustSpec",
    "UnsoundBounds",
    "VerificationQuery",
    "VerifyOptions",
    "classify_neurons",
    "compare_robustness_vs_test",
    "default_delta_cap",
    "empirical_stability",
    "encode_network",
    "evaluate",
    "fold_bn",
    "forward",
    "forward_unfolded",
    "gen_synthetic",
    "load_dataset",
    "load_network",
    "lp_tighten",
    "network_hash",
    "pattern_enumerate_opt",
    "propagate_bounds",
    "query_hash",
    "robustness",
    "robustness_batch",
    "robustness_report",
    "sample_bound",
    "save_dataset",
    "save_network",
    "set_robustness_objective",
    "set_trust_problem",
    "solve_lp",
    "solve_milp",
    "to_lp_text",
    "train",
    "trust_report",
    "trustworthiness",
    "__version__",
]
