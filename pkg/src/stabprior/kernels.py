"""Backend selection for the fused elementwise kernels.

The compiled extension is used when it imports; otherwise the numpy versions
are used. Setting ``STABPRIOR_PURE_PYTHON=1`` forces the numpy versions.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("STABPRIOR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

softplus_floor = _impl.softplus_floor
stabilising_sigma = _impl.stabilising_sigma
gaussian_product = _impl.gaussian_product
kl_diag = _impl.kl_diag

SIGMA_FLOOR = _kernels_py.SIGMA_FLOOR
DENOM_CLAMP = _kernels_py.DENOM_CLAMP
RELU_MEAN_SQ = _kernels_py.RELU_MEAN_SQ
FLAG_CLAMPED = _kernels_py.FLAG_CLAMPED
FLAG_FLOORED = _kernels_py.FLAG_FLOORED
FLAG_BELOW_TARGET = _kernels_py.FLAG_BELOW_TARGET

__all__ = [
    "BACKEND",
    "softplus_floor",
    "stabilising_sigma",
    "gaussian_product",
    "kl_diag",
    "SIGMA_FLOOR",
    "DENOM_CLAMP",
    "RELU_MEAN_SQ",
    "FLAG_CLAMPED",
    "FLAG_FLOORED",
    "FLAG_BELOW_TARGET",
]
