"""
SegDecide toolkit.

This package applies the Bayes (maximum a posteriori) and Maximum-Likelihood
decision rules to segmentation softmax outputs, estimates the class priors the
ML rule divides by, post-processes predictions into segments and compares the
two rules at pixel and segment level. A synthetic benchmark with known
posteriors exercises the whole chain.
"""

from __future__ import annotations

from .const import PACKAGE_VERSION

__version__ = PACKAGE_VERSION
