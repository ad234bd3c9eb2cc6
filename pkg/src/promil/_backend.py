"""Kernel backend selection.

Prefers the compiled Cython extension when it imported cleanly, falling back
to the pure-numpy twin.  ``PROMIL_BACKEND=python`` forces the fallback,
``PROMIL_BACKEND=c`` demands the extension (raising if it is missing), and
the default ``auto`` takes whatever is available.
"""

import os

from . import _kernels_py

_choice = os.environ.get("PROMIL_BACKEND", "auto").lower()
if _choice not in ("auto", "c", "python"):
    raise ValueError(f"PROMIL_BACKEND must be auto, c, or python, got {_choice!r}")

_impl = None
if _choice in ("auto", "c"):
    try:
        from . import _kernels as _impl
    except ImportError:
        if _choice == "c":
            raise ImportError(
                "PROMIL_BACKEND=c but the compiled extension promil._kernels "
                "is not built; run pip install -e . with Cython available"
            )
if _impl is None:
    _impl = _kernels_py

log_weights = _impl.log_weights
quantile_value = _impl.quantile_value
quantile_value_grad = _impl.quantile_value_grad


def backend_name():
    """'c' when the compiled extension is active, else 'python'."""
    return "c" if _impl.IS_COMPILED else "python"


def get_backends():
    """All importable kernel implementations, keyed by backend name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["c"] = _kernels
    except ImportError:
        pass
    return out
