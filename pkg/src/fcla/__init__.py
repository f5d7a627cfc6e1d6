"""Secure multi-user beamforming with a flexible cylindrical antenna array.

The package jointly optimizes transmit beamformers, an artificial-noise
covariance and the positions of the array elements (rotation along each
ring and vertical sliding of the rings) to maximize the sum rate of the
legitimate receivers while capping the rate an eavesdropper can obtain.
"""

__version__ = "0.1.0"
