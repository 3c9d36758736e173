"""Hot-loop backend selection.

The compiled extension is preferred; the numpy implementation is the
fallback. Set CBCONV_KERNELS=py (or =cy) to force a backend; "cy" raises if
the extension is unavailable.
"""

from __future__ import annotations

import importlib
import os

_CHOICE = os.environ.get("CBCONV_KERNELS", "auto").lower()

if _CHOICE not in ("auto", "cy", "py"):
    raise ValueError(f"CBCONV_KERNELS must be auto, cy, or py (got {_CHOICE!r})")

if _CHOICE in ("auto", "cy"):
    try:
        from . import _cyloops as _impl
    except ImportError:
        if _CHOICE == "cy":
            raise
        from . import _pyloops as _impl
else:
    from . import _pyloops as _impl

BACKEND = _impl.BACKEND
sim_block = _impl.sim_block
filt_forward = _impl.filt_forward
filt_backward = _impl.filt_backward
scan_complex = _impl.scan_complex


def load_backend(name: str):
    """Return the named backend module ('py' or 'cy'), importing on demand."""
    if name == "py":
        return importlib.import_module("cbconv._kernels._pyloops")
    if name == "cy":
        return importlib.import_module("cbconv._kernels._cyloops")
    raise ValueError(f"unknown backend {name!r}")
