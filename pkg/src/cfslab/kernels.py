"""Backend selection for the pair sweeps.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``CFSLAB_PURE_PYTHON`` is set to a non-empty value,
the numpy implementation is used.  Both return identical layouts.
"""
import os

from . import _kernels_py

BACKEND = "python"
chain_spectra = _kernels_py.chain_spectra
lagrangian_table = _kernels_py.lagrangian_table

if not os.environ.get("CFSLAB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "compiled"
        chain_spectra = _compiled.chain_spectra
        lagrangian_table = _compiled.lagrangian_table
