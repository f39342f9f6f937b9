from popgraph.core.gradcheck import NondeterminismError, finite_difference_check
from popgraph.core.optim import AdamState, PolynomialDecay, adam_step
from popgraph.core.params import Initializer, ParamStore, load_checkpoint, save_checkpoint
from popgraph.core.tensor import Tensor, TapeError, apply_primitive, backward, no_grad

__all__ = [
    "AdamState",
    "Initializer",
    "NondeterminismError",
    "ParamStore",
    "PolynomialDecay",
    "TapeError",
    "Tensor",
    "adam_step",
    "apply_primitive",
    "backward",
    "finite_difference_check",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]
