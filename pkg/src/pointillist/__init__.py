"""Desk-scale autoregressive Gaussian-splat avatar pipeline.

Stages: synthetic rigged-cloud data, token codec, decoder-only AR
generator, Gaussian attribute decoder, CPU tile splat renderer with
analytic gradients, rig animation, and a CLI tying them together.
"""

__version__ = "0.1.0"
