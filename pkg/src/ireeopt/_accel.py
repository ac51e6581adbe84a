"""Backend selection for the hot kernels.

Set ``IREEOPT_BACKEND=numpy`` to force the pure-numpy path; the default is
``numba`` whenever numba imports cleanly.
"""

import os

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


ENV_VAR = "IREEOPT_BACKEND"
BACKENDS = ("numba", "numpy")


def backend(requested=None):
    """Resolve the backend name for one call."""
    name = (requested or os.environ.get(ENV_VAR) or "numba").strip().lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name
