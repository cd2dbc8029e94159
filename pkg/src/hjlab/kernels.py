"""Backend selection for the hot sweeps.

The compiled extension is used when it imports; setting ``HJLAB_PURE=1``
forces the numpy fallback.  ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("HJLAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def extremal_sweep(phi, g_pos, g_neg, dx, K, kmin=1, upper=False, backend=None):
    """Per-node extremal quotient over integer shift/base pairs.

    Returns ``(values, j, k, sign)``: the optimal shift ``j`` (grid units),
    base ``k`` and direction for each node, i.e. ``lambda = j/k`` and
    ``b = sign * k * dx``.
    """
    c = np.ascontiguousarray
    return _impl(backend).extremal_sweep(
        c(phi, dtype=float), c(g_pos, dtype=float), c(g_neg, dtype=float),
        float(dx), int(K), int(kmin), bool(upper))


def levy_sweep(phi, g_pos, g_neg, shifts, weights, dx, backend=None):
    c = np.ascontiguousarray
    return _impl(backend).levy_sweep(
        c(phi, dtype=float), c(g_pos, dtype=float), c(g_neg, dtype=float),
        c(np.atleast_2d(shifts), dtype=float), c(weights, dtype=float), float(dx))
