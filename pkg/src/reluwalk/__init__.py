"""reluwalk: train small bias-free ReLU networks from scratch and exactly
analyze their piecewise-linear geometry along linear paths between input
samples (node counts, segment gradients, gradient-gap bridge statistics,
and pair margin / fluctuation metrics)."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, ReluwalkError
from .network import (
    ActivationPattern,
    Arch,
    ConvSpec,
    DenseSpec,
    LayerGraph,
    OutputVector,
    ResidualSpec,
    capture_pattern,
    forward,
    forward_fixed,
    forward_many,
    he_init,
    mlp_arch,
    normalize_output,
)
from .pathwalk import (
    LinearPath,
    PathProfile,
    dense_node_oracle,
    fd_gradient_oracle,
    gradient_gaps,
    make_path,
    node_gap_product,
    segment_gradient,
    walk_path,
)
from .stats import (
    BridgeStats,
    GapDistribution,
    PairMetrics,
    bridge_deviation_theory,
    bridge_simulate,
    deflection_midpoint,
    empirical_gap_sigma,
    gap_deviation_empirical,
    gap_variance_theory,
    margin,
    midpoint_deviation_theory_2layer,
    node_count_check,
    pair_fluctuation,
    pair_margin,
)
from .data import Dataset, PairSample, load_cifar10, load_idx, sample_pairs, synth_gaussian
from .train import TrainConfig, TrainLog, backward, softmax_cross_entropy, train

__all__ = [
    "__version__",
    "ReluwalkError", "ConfigError", "DataError", "NumericError",
    "Arch", "DenseSpec", "ConvSpec", "ResidualSpec", "mlp_arch",
    "LayerGraph", "ActivationPattern", "OutputVector",
    "he_init", "forward", "forward_many", "forward_fixed", "capture_pattern",
    "normalize_output",
    "LinearPath", "PathProfile", "make_path", "walk_path", "segment_gradient",
    "gradient_gaps", "node_gap_product", "fd_gradient_oracle", "dense_node_oracle",
    "GapDistribution", "BridgeStats", "PairMetrics",
    "bridge_deviation_theory", "bridge_simulate", "midpoint_deviation_theory_2layer",
    "gap_variance_theory", "empirical_gap_sigma", "node_count_check",
    "deflection_midpoint", "gap_deviation_empirical", "margin", "pair_margin",
    "pair_fluctuation",
    "TrainConfig", "TrainLog", "softmax_cross_entropy", "backward", "train",
    "Dataset", "PairSample", "load_idx", "load_cifar10", "synth_gaussian", "sample_pairs",
]
