"""Hot inference/gradient kernels with a compiled core and a numpy fallback.

Both backends implement the same reference semantics: float32 arithmetic with
a fixed per-output-element accumulation order (filter-major, then channel,
then kernel row/col). Outputs are bit-identical across backends, which keeps
golden test values and trained fixture weights backend-independent.

Backend selection happens at import time. Set DNNSHIELD_KERNELS=python or
DNNSHIELD_KERNELS=cython to force one; default is the compiled core when the
extension is importable.
"""

import os

from . import py_backend

_FORCED = os.environ.get("DNNSHIELD_KERNELS", "auto").lower()

if _FORCED not in ("auto", "cython", "python"):
    raise ValueError(f"DNNSHIELD_KERNELS must be auto|cython|python, got {_FORCED!r}")

_cy = None
if _FORCED in ("auto", "cython"):
    try:
        from . import _cykernels as _cy
    except ImportError:
        if _FORCED == "cython":
            raise

if _cy is not None:
    BACKEND = "cython"
    _impl = _cy
else:
    BACKEND = "python"
    _impl = py_backend

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weights = _impl.conv2d_backward_weights
fc_forward = _impl.fc_forward
fc_backward_input = _impl.fc_backward_input
fc_backward_weights = _impl.fc_backward_weights
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
avgpool_forward = _impl.avgpool_forward
avgpool_backward = _impl.avgpool_backward


def available_backends():
    """Names of importable backends ('python' is always available)."""
    names = ["python"]
    try:
        from . import _cykernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the backend module for `name` ('python' or 'cython')."""
    if name == "python":
        return py_backend
    if name == "cython":
        from . import _cykernels
        return _cykernels
    raise ValueError(f"unknown backend {name!r}")
