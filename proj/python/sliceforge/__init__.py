"""Separable-CNN MRI slice classification with subject-level cross-validation."""

from ._sliceforge import *  # noqa: F401,F403
from ._sliceforge import __version__  # noqa: F401
