"""Edge detection with a hybrid local-attention / shift-decomposed
convolution block, dense deep-supervision backbone, offline augmentation,
and the ODS/OIS/AP boundary-evaluation protocol."""

from .tensor import ComputationTape, Tensor, backward
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["Tensor", "ComputationTape", "backward", "BACKEND", "__version__"]
