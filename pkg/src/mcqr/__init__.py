"""Bayesian quantile regression for multinomial choice data.

Latent relative utilities with multivariate asymmetric Laplace errors give
the observed choices; a Gibbs sampler with data augmentation (exponential
scale mixture, truncated-normal utilities) draws every parameter at a fixed
quantile level.  See the README for the model, the file formats and the
command-line workflow.
"""

__version__ = "0.1.0"

from .diagnostics import PosteriorDraws, rhat, rhat_table, summarize
from .errors import ConfigError, IngestionError, McqrError, NumericalError
from .gibbs import (
    ChainDraws,
    GibbsConfig,
    gibbs_sweep,
    init_state,
    param_names,
    run_chain,
    run_chains,
    simulate_latents,
)
from .model import (
    ChainState,
    ChoiceDataset,
    DesignConfig,
    MALParams,
    PriorSpec,
    QuantileSpec,
    build_design_matrix,
    choice_from_utilities,
    choices_from_utility_matrix,
    l_scale_from_tau,
    mal_log_density,
    xi_from_tau,
)
from .data_io import (
    SyntheticSpec,
    generate_synthetic,
    parse_config,
    read_draws,
    read_long_csv,
    synthetic_design,
    write_draws,
    write_long_csv,
)

__all__ = [
    "__version__",
    "ChainDraws",
    "ChainState",
    "ChoiceDataset",
    "ConfigError",
    "DesignConfig",
    "GibbsConfig",
    "IngestionError",
    "MALParams",
    "McqrError",
    "NumericalError",
    "PosteriorDraws",
    "PriorSpec",
    "QuantileSpec",
    "SyntheticSpec",
    "build_design_matrix",
    "choice_from_utilities",
    "choices_from_utility_matrix",
    "generate_synthetic",
    "gibbs_sweep",
    "init_state",
    "l_scale_from_tau",
    "mal_log_density",
    "param_names",
    "parse_config",
    "read_draws",
    "read_long_csv",
    "rhat",
    "rhat_table",
    "run_chain",
    "run_chains",
    "simulate_latents",
    "summarize",
    "synthetic_design",
    "write_draws",
    "write_long_csv",
    "xi_from_tau",
]
