"""Select the compiled kernels when available, else the numpy fallback."""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

_FUNCS = ("spfh_histograms", "fpfh_from_spfh", "feature_argmin", "marching_cells")


def _load_compiled():
    if os.environ.get("GROUNDMESH_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError as exc:
        log.debug("compiled kernels unavailable: %s", exc)
        return None
    return _kernels


_compiled = _load_compiled()
kernels = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"


def compiled_available():
    return _compiled is not None


def get(name=None):
    """Kernel module for ``name`` ("cython", "python") or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
