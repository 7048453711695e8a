"""Selects the compiled kernel core when available, else the numpy fallback.

Set ``STEMPREDICT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

python_impl = _kernels_py
compiled_impl = None

if not os.environ.get("STEMPREDICT_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_impl
    except ImportError:  # extension not built
        compiled_impl = None

impl = compiled_impl if compiled_impl is not None else python_impl
BACKEND = "cython" if impl is compiled_impl else "python"


def get(name=None):
    """Return the kernel module for ``name`` in {None, "cython", "python"}."""
    if name is None:
        return impl
    if name == "python":
        return python_impl
    if name == "cython":
        if compiled_impl is None:
            raise ImportError("compiled kernel extension is not available")
        return compiled_impl
    raise ValueError(f"unknown backend {name!r}")
