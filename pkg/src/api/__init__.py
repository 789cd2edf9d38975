"""
API module for the command-line front end and data plumbing
Contains run configuration, trajectory input/output, recording segmentation and subcommands
"""
