"""
Backend selection for the geodesic kernels.

The compiled extension is used for metric families it understands unless
RELBOLTZ_PURE_PYTHON is set; everything else goes through the numpy
implementation.  Callers never see the difference.
"""
import os

import numpy as np

from . import _pykernels
from ._pykernels import gauss_legendre

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - exercised when the extension is not built
    _ckernels = None

COMPILED_CODES = (0, 1, 2)


def compiled_available():
    return _ckernels is not None


def backend_name(spec=None):
    if _use_compiled(spec):
        return "compiled"
    return "python"


def _use_compiled(spec):
    if _ckernels is None or os.environ.get("RELBOLTZ_PURE_PYTHON"):
        return False
    return spec is None or spec.code in COMPILED_CODES


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def rk4_path(spec, x0, p0, h, nsteps):
    if _use_compiled(spec):
        return _ckernels.rk4_path(spec.code, _c(spec.kparams), _c(spec.lo), _c(spec.hi),
                                  _c(x0), _c(p0), float(h), int(nsteps))
    return _pykernels.rk4_path(spec, _c(x0), _c(p0), float(h), int(nsteps))


def box_crossing(spec, X, P, blo, bhi, h, tol=1e-9, max_steps=1_000_000):
    X = np.atleast_2d(_c(X))
    P = np.atleast_2d(_c(P))
    h = np.broadcast_to(_c(h), (X.shape[0],)).copy()
    if _use_compiled(spec):
        return _ckernels.box_crossing(spec.code, _c(spec.kparams), _c(spec.lo), _c(spec.hi),
                                      X, P, _c(blo), _c(bhi), h, float(tol), int(max_steps))
    return _pykernels.box_crossing(spec, X, P, _c(blo), _c(bhi), h, tol, max_steps)


def flow_nodes(spec, X, P, s_a, s_b, h, hq, ngl=8):
    X = np.atleast_2d(_c(X))
    P = np.atleast_2d(_c(P))
    B = X.shape[0]
    s_a = np.broadcast_to(_c(s_a), (B,)).copy()
    s_b = np.broadcast_to(_c(s_b), (B,)).copy()
    h = np.broadcast_to(_c(h), (B,)).copy()
    hq = np.broadcast_to(_c(hq), (B,)).copy()
    if _use_compiled(spec):
        th, tw = gauss_legendre(ngl)
        return _ckernels.flow_nodes(spec.code, _c(spec.kparams), X, P, s_a, s_b, h, hq,
                                    _c(th), _c(tw))
    return _pykernels.flow_nodes(spec, X, P, s_a, s_b, h, hq, ngl)
