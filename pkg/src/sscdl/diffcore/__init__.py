"""Small reverse-mode autodiff core with second-order support."""
from . import ops
from .adam import AdamState, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .meta import grad_through_update, outer_value
from .gradcheck import GradCheckReport, finite_diff_check, numeric_gradient, relative_error
from .tensor import NumericalError, Tensor, backward, checked, enable_grad, grad, grad_enabled, no_grad

__all__ = [
    "AdamState", "CheckpointError", "GradCheckReport", "NumericalError", "Tensor",
    "adam_step", "backward", "checked", "enable_grad", "finite_diff_check", "grad",
    "grad_enabled", "grad_through_update", "outer_value", "load_checkpoint", "no_grad", "numeric_gradient", "ops",
    "relative_error", "save_checkpoint",
]
