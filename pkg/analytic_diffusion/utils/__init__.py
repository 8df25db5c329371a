"""
Utility functions for the Analytic Diffusion Lab.
"""
