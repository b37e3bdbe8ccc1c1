"""Backend selection for the training kernels.

Two interchangeable implementations exist: a pure-numpy reference and a
numba-compiled mirror. The FUNCVIEW_BACKEND environment variable picks one:

  auto   use numba when importable, else numpy (default)
  numba  require numba, raise if unavailable
  numpy  force the reference implementation

Selection is evaluated per call so tests can flip the variable at runtime.
Results are reproducible bit for bit within a backend; across backends the
floating-point summation order differs, so only agreement within tolerance
is promised.
"""

import os

from . import numpy_backend

VALID_BACKENDS = ("auto", "numba", "numpy")

try:
    from . import numba_backend

    HAS_NUMBA = True
except ImportError:
    numba_backend = None
    HAS_NUMBA = False


def requested_backend() -> str:
    name = os.environ.get("FUNCVIEW_BACKEND", "auto").strip().lower()
    if name not in VALID_BACKENDS:
        raise ValueError(
            f"FUNCVIEW_BACKEND must be one of {VALID_BACKENDS}, got {name!r}"
        )
    return name


def get_kernels(name: str | None = None):
    """Return the kernel module selected by `name` or the environment."""
    if name is None:
        name = requested_backend()
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("FUNCVIEW_BACKEND=numba but numba is not importable")
        return numba_backend
    return numba_backend if HAS_NUMBA else numpy_backend


def active_backend() -> str:
    """Name of the backend get_kernels() would return right now."""
    mod = get_kernels()
    return "numba" if mod is numba_backend and mod is not None else "numpy"
