"""
Simulation module for killed diffusion paths
Contains the exact and Euler steppers and the killed-trajectory generator
"""
