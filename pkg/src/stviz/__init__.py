"""Activation maximization for two-stream (appearance + motion) convnets."""

from .tensor import SpatiotemporalTensor, channel_sum, circular_shift, finite_difference_gradient

__version__ = "0.1.0"
