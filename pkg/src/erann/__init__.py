"""Efficient residual audio neural networks: features, augmentation, model, training."""

__version__ = "0.1.0"
