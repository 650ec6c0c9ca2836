"""Stochastic multi-modal vehicle trajectory prediction.

A conditional variational autoencoder over agent motion whose scene
context comes from capsule-network encoders of rasterized map chunks,
trained with a minimum-over-samples reconstruction loss and the
stochastic Polyak step size, on a hand-rolled reverse-mode tensor
engine.
"""

__version__ = "0.1.0"
