"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``NORMCRAFT_KERNELS=python``
to force the fallback.
"""

import os
from types import SimpleNamespace

import numpy as np

from . import _fallback

_NAMES = ("knn", "scatter_add", "max_reduce", "max_reduce_backward")


def _load_native():
    try:
        from . import _native
    except ImportError:
        return None
    return _native


_native = None if os.environ.get("NORMCRAFT_KERNELS", "").lower() == "python" else _load_native()


def get_backend(name):
    """Return the kernel namespace for ``"native"`` or ``"python"``."""
    if name == "python":
        mod = _fallback
    elif name == "native":
        mod = _native or _load_native()
        if mod is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return SimpleNamespace(name=name, **{n: getattr(mod, n) for n in _NAMES})


BACKEND = "native" if _native is not None else "python"
_active = get_backend(BACKEND)


def knn(ref, qry, k):
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    qry = np.ascontiguousarray(qry, dtype=np.float64)
    if ref.ndim != 3 or qry.ndim != 3 or ref.shape[0] != qry.shape[0] or ref.shape[2] != qry.shape[2]:
        raise ValueError(f"knn expects (B,N,D) and (B,Q,D), got {ref.shape} and {qry.shape}")
    if not 1 <= k <= ref.shape[1]:
        raise ValueError(f"k={k} outside [1, {ref.shape[1]}]")
    return _active.knn(ref, qry, int(k))


def scatter_add(grad, idx, n):
    return _active.scatter_add(
        np.ascontiguousarray(grad, dtype=np.float64), np.ascontiguousarray(idx, dtype=np.int64), int(n)
    )


def max_reduce(x):
    return _active.max_reduce(np.ascontiguousarray(x, dtype=np.float64))


def max_reduce_backward(grad, arg, k):
    return _active.max_reduce_backward(
        np.ascontiguousarray(grad, dtype=np.float64), np.ascontiguousarray(arg, dtype=np.int64), int(k)
    )
