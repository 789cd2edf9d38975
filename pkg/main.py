"""
Main entry point for the killed-diffusion toolkit
Runs the command-line interface: simulate, estimate, bootstrap, study, fpt, segment
"""

import sys

from src.api.commands import main

if __name__ == "__main__":
    sys.exit(main())
