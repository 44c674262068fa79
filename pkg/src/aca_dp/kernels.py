"""Backend selection for the gradient kernels.

The compiled extension is preferred. Set ``ACA_DP_PURE_PYTHON=1`` before
import to force the numpy implementation, or call `use_backend` at runtime.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

_BACKENDS = {"python": _kernels_py}
if _kernels_ext is not None:
    _BACKENDS["compiled"] = _kernels_ext

if os.environ.get("ACA_DP_PURE_PYTHON") or _kernels_ext is None:
    _active = "python"
else:
    _active = "compiled"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def active_backend() -> str:
    return _active


def use_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _active = name


def get_backend(name: str | None = None):
    return _BACKENDS[name or _active]


def example_grads(theta, X, y, d_in, hidden, num_classes):
    return _BACKENDS[_active].example_grads(theta, X, y, d_in, hidden, num_classes)


def clipped_grad_sum(theta, X, y, d_in, hidden, num_classes, clip):
    return _BACKENDS[_active].clipped_grad_sum(theta, X, y, d_in, hidden, num_classes, float(clip))
