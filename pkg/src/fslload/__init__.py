"""Clustering-enabled few-shot load forecasting."""
from .kernels import BACKEND
from .series import FewShotSplit, Series

__version__ = "0.1.0"
__all__ = ["BACKEND", "FewShotSplit", "Series", "__version__"]
