"""Numerical laboratory for reflected (Skorohod) SDEs: domains and normals,
discrete Skorohod maps, projected Euler simulation, and sampled checks of
uniqueness and non-explosion hypotheses."""

__version__ = "0.1.0"
