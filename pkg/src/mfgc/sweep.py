"""Backend selection for the drift sweeps.

The compiled extension is used when it imports; setting the environment
variable ``MFGC_PURE_PYTHON=1`` forces the scipy fallback.
"""

from __future__ import annotations

import os

from . import _sweep_fallback

if os.environ.get("MFGC_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _sweep_ext as _ext
    except ImportError:  # pragma: no cover - depends on the build
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"
_impl = _ext if _ext is not None else _sweep_fallback


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (``compiled``/``python``) or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _sweep_fallback
    if name == "compiled":
        if _ext is None:
            raise ImportError("compiled sweep extension is not available")
        return _ext
    raise ValueError(f"unknown backend {name!r}")


def drift_sweep(*args, **kwargs):
    return _impl.drift_sweep(*args, **kwargs)


def drift_sweep_lin(*args, **kwargs):
    return _impl.drift_sweep_lin(*args, **kwargs)
