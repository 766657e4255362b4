"""Genetic search over sparse Kolmogorov-Arnold network architectures."""

__version__ = "0.1.0"

from ._accel import backend  # noqa: E402
from .data import Dataset, SplitSpec, load_csv, split, toy_generate  # noqa: E402
from .evolution import GaConfig, RunReport, run  # noqa: E402
from .genome import SearchSpace, chromosome_length, decode, random_chromosome, validity  # noqa: E402
from .interpret import auto_symbolic, extract_formula, feature_scores, fix_edge  # noqa: E402
from .network import KanModel, KanSpec, forward, init_model, load_model, param_count, save_model  # noqa: E402
from .spline import SplineGrid, basis_deriv, basis_eval, edge_activation  # noqa: E402
from .trainer import TrainConfig, TrainReport, train  # noqa: E402

__all__ = [
    "Dataset", "GaConfig", "KanModel", "KanSpec", "RunReport", "SearchSpace", "SplineGrid", "SplitSpec",
    "TrainConfig", "TrainReport", "auto_symbolic", "backend", "basis_deriv", "basis_eval", "chromosome_length",
    "decode", "edge_activation", "extract_formula", "feature_scores", "fix_edge", "forward", "init_model",
    "load_csv", "load_model", "param_count", "random_chromosome", "run", "save_model", "split", "toy_generate",
    "train", "validity",
]
