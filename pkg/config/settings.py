"""
Configuration settings for the killed-diffusion toolkit
Contains numerical defaults, simulation and optimizer constants, and paths
"""

import os
from typing import Any, Dict

from dotenv import load_dotenv

load_dotenv()


class Settings:
    """Configuration settings for simulation, estimation and studies"""

    # Reproducibility
    DEFAULT_SEED = int(os.getenv("FPT_SEED", "20100611"))
    N_WORKERS = int(os.getenv("FPT_N_WORKERS", "1"))

    # Simulation
    DEFAULT_SUBSTEP_DIVISOR = int(os.getenv("FPT_SUBSTEP_DIVISOR", "10"))
    MAX_SIM_SUBSTEPS = int(os.getenv("FPT_MAX_SIM_SUBSTEPS", "10000000"))
    SIM_BLOCK_SIZE = 4096
    SR_EULER_FLOOR = 1e-12

    # Crossing probabilities
    PHI_BRANCH_TOL = 1e-8
    PSI_QUAD_ABS_TOL = 1e-10
    PSI_QUAD_MAX_DEPTH = 40
    PSI_QUAD_MIN_DEPTH = 3

    # Likelihood
    PROB_FLOOR = 1e-300
    SCORE_REL_STEP = 1e-5

    # Special functions
    NCX2_MAX_WINDOW = 20000
    NCX2_WINDOW_SDS = 9.0

    # Nelder-Mead
    FIT_MAX_EVALS = int(os.getenv("FPT_FIT_MAX_EVALS", "2000"))
    FIT_F_REL_TOL = 1e-8
    FIT_X_TOL = 1e-6
    FIT_MAX_RESTARTS = 1
    SIMPLEX_REL_STEP = 0.05
    SIMPLEX_ZERO_STEP = 0.01
    LOG_BETA_FLOOR = -30.0
    BOUNDARY_BETA = 1e-6

    # Initial estimators
    MIN_SIGMA2 = 1e-8
    FALLBACK_BETA = 0.1
    GUARD_BETA = 1e-4

    # Bootstrap and studies
    BOOTSTRAP_MAX_FAIL_FRACTION = 0.05
    DESK_REPLICATES = 2000
    DEFAULT_GROUP_SIZES = (1, 3, 10, 30, 100)

    # Mean first-passage quadrature (validation only)
    MEAN_FPT_REL_TOL = 1e-8
    DISCRETE_TAIL_TOL = 1e-10

    # Output
    CSV_FLOAT_FORMAT = "%.17g"
    OUTPUT_DIR = os.getenv("FPT_OUTPUT_DIR", "outputs")
    LOGS_DIR = os.getenv("FPT_LOGS_DIR", "logs")
    LOG_LEVEL = os.getenv("FPT_LOG_LEVEL", "INFO")

    @classmethod
    def get_all_settings(cls) -> Dict[str, Any]:
        """Get all settings as a dictionary"""
        return {
            attr: getattr(cls, attr)
            for attr in dir(cls)
            if not attr.startswith('_') and not callable(getattr(cls, attr))
        }


# Create global settings instance
settings = Settings()
