from .dense import as_tensor, linear, matmul, softmax_rows
from .tape import Tape, Var, backward, grad_check
from .tensorio import TensorFormatError, load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes

__all__ = [
    "as_tensor",
    "linear",
    "matmul",
    "softmax_rows",
    "Tape",
    "Var",
    "backward",
    "grad_check",
    "TensorFormatError",
    "load_tensor",
    "save_tensor",
    "tensor_from_bytes",
    "tensor_to_bytes",
]
