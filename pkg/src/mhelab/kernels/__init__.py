"""Hot attention kernels: numpy (default) or the compiled extension.

numpy's BLAS-backed batched matmuls outrun the portable compiled loops on
the shapes measured in ``benchmarks/bench_kernels.py``, so the compiled
kernel is opt-in: ``MHELAB_KERNELS=compiled`` or ``use_backend("compiled")``.
"""

import os

from . import _attention_py

try:
    from . import _attention as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _attention_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_requested = os.environ.get("MHELAB_KERNELS", "python").lower()
_active = "compiled" if _requested == "compiled" and _compiled is not None else "python"


def backend() -> str:
    """Name of the backend currently serving the kernels."""
    return _active


def use_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _active = name


def attention_forward(q, k, v, causal):
    return BACKENDS[_active].attention_forward(q, k, v, causal)


def attention_backward(q, k, v, probs, dout, causal=False):
    return BACKENDS[_active].attention_backward(q, k, v, probs, dout, causal)
