"""Numeric kernel backend selection.

Two interchangeable implementations of the hot float32 kernels exist:

* ``_cyops`` — compiled Cython extension with explicit fixed-order loops.
* ``_npops`` — NumPy fallback, used when the extension is unavailable.

The active backend is picked once at import time. Set ``FEDPROMPT_KERNELS``
to ``cython`` or ``numpy`` to force a choice; forcing ``cython`` raises if
the extension was not built. Both backends are individually deterministic:
the same backend, inputs, and seed reproduce results bit-for-bit.
"""

import os

from fedprompt._kernels import _npops

_FORCED = os.environ.get("FEDPROMPT_KERNELS", "").strip().lower()

if _FORCED not in ("", "cython", "numpy"):
    raise RuntimeError(
        f"FEDPROMPT_KERNELS must be 'cython' or 'numpy', got {_FORCED!r}"
    )

if _FORCED == "numpy":
    _impl = _npops
else:
    try:
        from fedprompt._kernels import _cyops as _impl
    except ImportError:
        if _FORCED == "cython":
            raise RuntimeError(
                "FEDPROMPT_KERNELS=cython but the compiled extension is "
                "missing; build it with `python setup.py build_ext --inplace`"
            ) from None
        _impl = _npops

BACKEND = "cython" if _impl is not _npops else "numpy"

matmul = _impl.matmul
bmm = _impl.bmm
bmm_nt = _impl.bmm_nt
bmm_tn = _impl.bmm_tn
softmax_rows = _impl.softmax_rows
softmax_backward_rows = _impl.softmax_backward_rows
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
quickgelu_forward = _impl.quickgelu_forward
quickgelu_backward = _impl.quickgelu_backward
