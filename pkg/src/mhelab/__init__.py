"""Desk-scale lab for multi-head-embedding attention and six baseline variants."""

import os as _os

# cap BLAS threads before numpy loads; MHELAB_THREADS wins over generic settings
if _os.environ.get("MHELAB_THREADS"):
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _os.environ["MHELAB_THREADS"]

from .attention import ALL_VARIANTS, AttentionLayerParams, AttentionVariant, attention_forward, init_params
from .errors import MHELabError
from .tensor import ComputeGraph, Tensor, backward, matmul, softmax_rows, ewise

__all__ = [
    "ALL_VARIANTS", "AttentionLayerParams", "AttentionVariant", "ComputeGraph", "MHELabError",
    "Tensor", "attention_forward", "backward", "ewise", "init_params", "matmul", "softmax_rows",
]
__version__ = "0.1.0"
