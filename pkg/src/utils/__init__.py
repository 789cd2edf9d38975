"""
Utilities module for common helper functions
Contains numerical building blocks and logging setup used across the application
"""
