from . import autodiff
from .autodiff import NumericalError, Tensor, backward, no_grad
from .gradcheck import finite_diff_check
from .nn import gru_cell, init_gru, init_linear, init_mlp, linear, mlp
from .optim import OptimizerConfig, adamw_step, clip_grad_norm, cosine_lr
from .params import ParamStore, load_checkpoint, save_checkpoint
from .rng import restore_rng, rng_state, seeded_rng

__all__ = [
    "autodiff", "NumericalError", "Tensor", "backward", "no_grad", "finite_diff_check",
    "gru_cell", "init_gru", "init_linear", "init_mlp", "linear", "mlp",
    "OptimizerConfig", "adamw_step", "clip_grad_norm", "cosine_lr",
    "ParamStore", "load_checkpoint", "save_checkpoint", "restore_rng", "rng_state", "seeded_rng",
]
