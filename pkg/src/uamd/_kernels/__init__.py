"""Hot loops of stereo matching, compiled when available.

The Cython extension is used if it was built; otherwise the numpy versions
are used. Set ``UAMD_KERNELS=python`` to force the numpy versions.
"""

import os

from . import _sgm_py

python_kernels = _sgm_py

if os.environ.get("UAMD_KERNELS", "").lower() == "python":
    _impl = _sgm_py
else:
    try:
        from . import _sgm as _impl
    except ImportError:
        _impl = _sgm_py

BACKEND = "python" if _impl is _sgm_py else "cython"
census_transform = _impl.census_transform
census_cost = _impl.census_cost
aggregate_path = _impl.aggregate_path

__all__ = ["BACKEND", "aggregate_path", "census_cost", "census_transform", "python_kernels"]
