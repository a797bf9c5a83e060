"""Matrix-free convolutional multigrid networks with learnable kernels."""
from ._kernels import BACKEND
from .loss import LossConfig, rho1_estimate
from .network import (K_LINEAR, ModelKind, MgNetwork, apply_error_propagation, apply_N,
                      build_model, serialize_to_depth)
from .problems import PROBLEMS, ProblemSpec, get_problem
from .report import EvalRow, TableReport, evaluate
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Checkpoint", "EvalRow", "K_LINEAR", "LossConfig", "MgNetwork",
    "ModelKind", "PROBLEMS", "ProblemSpec", "TableReport", "TrainConfig",
    "apply_N", "apply_error_propagation", "build_model", "evaluate",
    "get_problem", "load_checkpoint", "rho1_estimate", "save_checkpoint",
    "serialize_to_depth", "train",
]
