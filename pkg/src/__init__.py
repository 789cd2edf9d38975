"""
Killed-diffusion estimation toolkit
Simulation and maximum-likelihood estimation of diffusions killed at a threshold
"""

__version__ = "1.0.0"
__author__ = "Neuronal Modelling Team"
