"""Backend selection for the hot small-matrix kernels.

The compiled extension is used when it imports; setting the environment
variable ``L2GAME_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from l2game import _pykernels

if os.environ.get("L2GAME_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from l2game import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

expm_stack = _impl.expm_stack
gramian_stack = _impl.gramian_stack
propagate_stack = _impl.propagate_stack
exp_action_stack = _impl.exp_action_stack
cholesky_stack = _impl.cholesky_stack
cho_solve_stack = _impl.cho_solve_stack

__all__ = [
    "BACKEND",
    "expm_stack",
    "gramian_stack",
    "propagate_stack",
    "exp_action_stack",
    "cholesky_stack",
    "cho_solve_stack",
]
