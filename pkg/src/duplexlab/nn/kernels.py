"""Kernel backend selection.

The compiled extension (`duplexlab.nn._ck`) is preferred when present; the
numpy implementation is the fallback. Set ``DUPLEXLAB_KERNELS=numpy`` to force
the fallback (used by the parity tests and the backend benchmark).
"""

import os

from duplexlab.nn import _kernels_np


def _select():
    if os.environ.get("DUPLEXLAB_KERNELS", "").lower() == "numpy":
        return _kernels_np
    try:
        from duplexlab.nn import _ck

        return _ck
    except ImportError:
        return _kernels_np


_impl = _select()

BACKEND = _impl.BACKEND

softmax_causal = _impl.softmax_causal
softmax_causal_bwd = _impl.softmax_causal_bwd
rmsnorm = _impl.rmsnorm
rmsnorm_bwd = _impl.rmsnorm_bwd
rope_apply = _impl.rope_apply
ce_rows = _impl.ce_rows
ce_rows_bwd = _impl.ce_rows_bwd
silu = _impl.silu
silu_bwd = _impl.silu_bwd
