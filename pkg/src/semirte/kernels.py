"""Backend selection for the ray-marching kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SEMIRTE_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementation is used.
"""
import os

from . import _kernels_py

# rays stop once the optical depth exceeds this (transmission below 2e-22)
TAU_CAP = 50.0

_force_py = os.environ.get("SEMIRTE_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py
        BACKEND = "python"

segment_optical_depth = _impl.segment_optical_depth
pair_optical_depth = _impl.pair_optical_depth
sweep = _impl.sweep
scalar_flux_matrix = _impl.scalar_flux_matrix


def backend_module(name):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
