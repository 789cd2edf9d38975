"""
Core module for the killed-diffusion models
Contains the diffusion models, crossing probabilities, likelihoods and estimation
"""
