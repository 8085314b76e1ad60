"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-numpy fallback
is always available. ``ZONOSAFE_BACKEND`` overrides the choice:

* ``auto`` (default) — compiled if built, else pure
* ``ext``  — require the compiled extension, fail otherwise
* ``py``   — force the pure fallback (used by the benchmark and tests)
"""

import os

from . import _kernels_py

_requested = os.environ.get("ZONOSAFE_BACKEND", "auto").lower()
if _requested not in ("auto", "ext", "py"):
    raise RuntimeError(f"ZONOSAFE_BACKEND must be auto|ext|py, got {_requested!r}")

if _requested == "py":
    _impl = _kernels_py
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        if _requested == "ext":
            raise
        _impl = _kernels_py

BACKEND = "ext" if _impl is not _kernels_py else "py"
tanh_chord_params = _impl.tanh_chord_params
plant_rk4 = _impl.plant_rk4
