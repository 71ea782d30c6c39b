"""Float64 tensors, reverse-mode differentiation and the tooling built on them."""
from sati.numcore import ops
from sati.numcore.checkpoint import load_checkpoint, load_into, save_checkpoint
from sati.numcore.gradcheck import grad_check
from sati.numcore.optim import Adam
from sati.numcore.params import ParamRegistry, ParamScope
from sati.numcore.tensor import Gradients, Tape, Tensor, backward, no_grad, primitive

__all__ = [
    "ops",
    "Tensor",
    "Tape",
    "Gradients",
    "backward",
    "no_grad",
    "primitive",
    "ParamRegistry",
    "ParamScope",
    "Adam",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "load_into",
]
