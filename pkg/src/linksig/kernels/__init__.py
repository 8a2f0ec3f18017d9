"""Hot-loop kernels: compiled Cython versions when built, numpy otherwise.

Set ``LINKSIG_PURE_PYTHON=1`` before import to force the numpy backend.
"""
import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("LINKSIG_PURE_PYTHON") != "1":
    BACKEND = "cython"
    _active = compiled_backend
else:
    BACKEND = "python"
    _active = python_backend

ensemble_sums = _active.ensemble_sums
cir_bank = _active.cir_bank
coverage_hits = _active.coverage_hits

__all__ = ["BACKEND", "compiled_backend", "python_backend", "ensemble_sums", "cir_bank", "coverage_hits"]
