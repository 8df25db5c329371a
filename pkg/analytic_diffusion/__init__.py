"""
Analytic Diffusion Lab - training-free diffusion denoisers and their statistics.

This package provides closed-form denoisers, dataset spectral statistics and
experiment commands, exposed through a command-line driver and an MCP server.

Features:
- Optimal, Wiener, covariance-masked and patch-based denoisers
- Dataset covariance spectra, per-component SNR and binarized masks
- Deterministic DDIM sampling with trajectory capture
- Sensitivity fields (analytic and finite-difference)
- Benchmark metrics (MSE, r², nearest-neighbour distance)
"""

__version__ = "0.1.0"
