"""Homogenization of periodic nonlocal convolution operators with a multiplicative weight.

The fibre-wise (Bloch) decomposition of the operator is discretized on a
midpoint cell grid, from which the package extracts the stationary density,
the effective drift and diffusion matrix, threshold spectral quantities and
the resolvent convergence rate.
"""
__version__ = "0.1.0"
