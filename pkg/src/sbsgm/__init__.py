"""Stochastic block smooth graphon models: simulation and EM-type estimation."""
from importlib.metadata import PackageNotFoundError, version

from .em import FitConfig, FitResult, align_to_reference, em_fit, initialize, mise, select_k, selection_criterion
from .gibbs import DeltaSchedule, GibbsConfig, adjust_boundaries, adjust_positions, posterior_means, run_chain
from .graphon import (
    BlockGraphonSpec,
    LatentState,
    Network,
    SbsgmModel,
    allocate_knots,
    evaluate,
    from_block_spec,
    marginal_g,
    sample_network,
)
from .mstep import build_design, degrees_of_freedom, fit_gamma, select_lambda

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "BlockGraphonSpec", "DeltaSchedule", "FitConfig", "FitResult", "GibbsConfig", "LatentState", "Network",
    "SbsgmModel", "adjust_boundaries", "adjust_positions", "align_to_reference", "allocate_knots",
    "build_design", "degrees_of_freedom", "em_fit", "evaluate", "fit_gamma", "from_block_spec",
    "initialize", "marginal_g", "mise", "posterior_means", "run_chain", "sample_network", "select_k",
    "select_lambda", "selection_criterion",
]
