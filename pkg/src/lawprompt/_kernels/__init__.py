"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports cleanly; setting
``LAWPROMPT_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the
active implementation.
"""
import os

import numpy as np

from . import _gru_py

_compiled = None
if not os.environ.get("LAWPROMPT_PURE_PYTHON"):
    try:
        from . import _gru as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _gru_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gru_forward(X, wz, wr, wh, bz, br, bh, h0):
    """Run one GRU direction over ``X`` (T x d_in).

    Returns ``(H, Z, R, C)``: hidden states including ``h0`` as row 0,
    update gates, reset gates and candidates.
    """
    return _impl.gru_forward(_c(X), _c(wz), _c(wr), _c(wh), _c(bz), _c(br), _c(bh), _c(h0))


def gru_backward(X, wz, wr, wh, H, Z, R, C, dH):
    return _impl.gru_backward(_c(X), _c(wz), _c(wr), _c(wh), _c(H), _c(Z), _c(R), _c(C), _c(dH))


def available_backends():
    out = {"python": _gru_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
