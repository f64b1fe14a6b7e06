"""Backend selection for the hot kernels.

The compiled module is used when importable; set ``FSLLOAD_PURE_PYTHON=1``
to force the numpy reference implementation.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("FSLLOAD_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

sampen_counts = _impl.sampen_counts
average_linkage = _impl.average_linkage
lstm_predict = _impl.lstm_predict
lstm_loss_grad = _impl.lstm_loss_grad

__all__ = ["BACKEND", "sampen_counts", "average_linkage", "lstm_predict", "lstm_loss_grad"]
