"""Confidence-adaptive random weight sparsification as an adversarial-input
detector for small CNN classifiers, plus attack generators and a
cycle-approximate simulator of the sparse accelerator tile."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
