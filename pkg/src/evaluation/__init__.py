"""
Evaluation module for Monte Carlo experiments
Contains the bootstrap bias correction and the simulation-study harness
"""
