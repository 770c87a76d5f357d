"""Optional numba acceleration.

The hot kernels in :mod:`pawnn.kernels` are written twice: once as plain
numpy/python and once as ``@njit`` loops. Which one the package uses is
decided at import time:

* ``PAWNN_NUMBA=0`` (or ``false``/``no``/``off``) forces the numpy path.
* otherwise numba is used when it can be imported.
"""

from __future__ import annotations

import os

try:  # pragma: no cover - exercised implicitly
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

_FLAG = os.environ.get("PAWNN_NUMBA", "1").strip().lower()

HAVE_NUMBA = _numba is not None
ENABLED = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)
