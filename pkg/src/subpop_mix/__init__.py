"""Reweighted mixup for subpopulation shift, with executable checks of its GLM theory."""

__version__ = "0.1.0"
