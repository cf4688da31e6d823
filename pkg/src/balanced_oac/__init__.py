"""Digital over-the-air aggregation over balanced numerals.

Gradient values are quantized to balanced base-``beta`` numerals, each digit
is keyed onto a small block of OFDM cells by its sign/magnitude symbol, and
the access point recovers per-symbol vote counts from received energy alone.
The package provides the codec, the resource grid, multipath/sync channel
models, non-coherent detectors, closed-form and Monte Carlo error analysis,
and a small federated-averaging harness built on top of the link.
"""

from .analysis import (
    MseReport,
    monte_carlo_mse,
    mse_gradient_estimate,
    quantization_bias,
    relaxed_exact_agreement,
    var_gradient_estimate,
    var_numeral_mean,
    var_vote,
    votes_from_numerals,
)
from .channel import (
    EPA_DELAYS_NS,
    EPA_POWERS_DB,
    ChannelConfig,
    ChannelRealization,
    default_t_sync,
    draw_channel,
    draw_delays,
    epa_frequency_response,
    epa_taps,
    superpose,
    sync_phases,
)
from .codec import (
    BalancedConfig,
    average_numerals,
    decode,
    encode,
    index_of_symbol,
    step_size,
    symbol_of_index,
    symbol_table,
)
from .config import DataConfig, ExperimentConfig, config_from_dict, config_hash, load_config
from .detector import (
    AggregateEstimate,
    aggregate,
    cell_objective,
    estimate_votes,
    ml_votes_exact,
)
from .errors import CapacityError, ConfigError, DivergenceError
from .feel import (
    Dataset,
    LearnConfig,
    MlpClassifier,
    RoundReport,
    SoftmaxClassifier,
    load_mnist,
    local_gradients,
    make_model,
    partition_heterogeneous_concentric,
    partition_homogeneous,
    synthetic_dataset,
    train,
)
from .link import LinkConfig, oac_round
from .resources import GridConfig, activate, map_gradients, symbols_needed
from .rng import complex_normal, stream, unit_phases

__all__ = [
    "AggregateEstimate",
    "BalancedConfig",
    "CapacityError",
    "ChannelConfig",
    "ChannelRealization",
    "ConfigError",
    "DataConfig",
    "Dataset",
    "DivergenceError",
    "EPA_DELAYS_NS",
    "EPA_POWERS_DB",
    "ExperimentConfig",
    "GridConfig",
    "LearnConfig",
    "LinkConfig",
    "MlpClassifier",
    "MseReport",
    "RoundReport",
    "SoftmaxClassifier",
    "activate",
    "aggregate",
    "average_numerals",
    "cell_objective",
    "complex_normal",
    "config_from_dict",
    "config_hash",
    "decode",
    "default_t_sync",
    "draw_channel",
    "draw_delays",
    "encode",
    "epa_frequency_response",
    "epa_taps",
    "estimate_votes",
    "index_of_symbol",
    "load_config",
    "load_mnist",
    "local_gradients",
    "make_model",
    "map_gradients",
    "ml_votes_exact",
    "monte_carlo_mse",
    "mse_gradient_estimate",
    "oac_round",
    "partition_heterogeneous_concentric",
    "partition_homogeneous",
    "quantization_bias",
    "relaxed_exact_agreement",
    "step_size",
    "stream",
    "superpose",
    "symbol_of_index",
    "symbol_table",
    "symbols_needed",
    "sync_phases",
    "synthetic_dataset",
    "train",
    "unit_phases",
    "var_gradient_estimate",
    "var_numeral_mean",
    "var_vote",
    "votes_from_numerals",
]

__version__ = "0.1.0"
