"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``STARNOMA_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("STARNOMA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

back_substitute_powers = _impl.back_substitute_powers
psum_min_curve = _impl.psum_min_curve
refine_phases = _impl.refine_phases
min_congruence_eig = _impl.min_congruence_eig

__all__ = ["BACKEND", "back_substitute_powers", "psum_min_curve", "refine_phases", "min_congruence_eig"]
