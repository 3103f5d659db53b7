"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Setting ``RAINCAP_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("RAINCAP_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def im2col(xp, kh, kw, stride, impl=None):
    impl = impl or _impl
    return impl.im2col(np.ascontiguousarray(xp), kh, kw, stride)


def col2im(cols, shape, kh, kw, stride, impl=None):
    impl = impl or _impl
    return impl.col2im(np.ascontiguousarray(cols), tuple(int(s) for s in shape), kh, kw, stride)


def box_mean(img, r, impl=None):
    impl = impl or _impl
    return impl.box_mean(np.ascontiguousarray(img, dtype=np.float64), int(r))


def correlate_sparse(img, kernel, impl=None):
    impl = impl or _impl
    img = np.ascontiguousarray(img)
    return impl.correlate_sparse(img, np.ascontiguousarray(kernel, dtype=img.dtype))


def lcs_length(a, b, impl=None):
    impl = impl or _impl
    return impl.lcs_length(np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64))


def backends():
    """Return the available kernel implementations keyed by name."""
    out = {"python": _pykernels}
    if _impl is not _pykernels:
        out["cython"] = _impl
    else:
        try:
            from . import _ckernels

            out["cython"] = _ckernels
        except ImportError:
            pass
    return out
