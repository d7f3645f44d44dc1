"""Eigensolver kernels: compiled extension with pure-numpy fallback.

The cyclic Jacobi solver for small Hermitian matrices is the hot per-frequency
kernel of the beamformer.  The Cython build is preferred; set
``BEAMLEARN_FORCE_PY_KERNELS=1`` to force the numpy implementation.
"""

import os
import warnings

from . import jacobi_py

if os.environ.get("BEAMLEARN_FORCE_PY_KERNELS"):
    _impl = jacobi_py
    compiled = False
else:
    try:
        from . import _jacobi as _impl  # type: ignore[no-redef]

        compiled = True
    except ImportError:
        warnings.warn(
            "compiled Jacobi kernel unavailable, falling back to the numpy "
            "implementation (rebuild/reinstall to compile it)"
        )
        _impl = jacobi_py
        compiled = False

eigh_batch = _impl.eigh_batch

__all__ = ["eigh_batch", "compiled", "jacobi_py"]
