"""
Configuration parameters for the trimming estimator.
"""

import os

# Paths
ROOT_DIR = os.path.dirname(os.path.dirname(__file__))
VILLAGES_DIR = os.path.join(ROOT_DIR, "villages")
OUTPUT_DIR = os.path.join(ROOT_DIR, "output")

# Model
DEFAULT_PERIODS = 4  # Outcome periods; exchanges = periods - 1

# Grid search
DEFAULT_GRID_MIN = 0.01
DEFAULT_GRID_MAX = 0.99
DEFAULT_GRID_STEP = 0.01
DEFAULT_CONFIDENCE_LEVELS = (0.90, 0.95, 0.99)
CHI2_DEGREES_OF_FREEDOM = 2  # (p, q)

# Trimming
THRESHOLD_TIE_DEFAULT = "B"  # a PII exactly at r* is trimmed to "uninformed"
TIE_BREAK = "ascending-index"  # equal distances to r*: lower index trimmed first

# Exact evaluation is refused beyond this many branching-prefix scenarios
DEFAULT_SCENARIO_BUDGET = 2_000_000

# Parallelism
DEFAULT_WORKERS = int(os.environ.get("DIFFUSION_WORKERS", "1"))

# Monte Carlo defaults
DEFAULT_MASTER_SEED = 20240101
MC_SUBMATRIX_SIZE = 20
MC_VILLAGES = 11
MC_REPLICATIONS = 90
MC_SEED_S_START = 1
MC_SEED_D_START = 2
MC_CASES = {
    "case1": (0.5, 0.5),
    "case2": (0.1, 0.9),
    "case3": (0.9, 0.1),
}

# Output
FLOAT_FORMAT = "%.17g"
RELATIVE_TOLERANCE = 1e-10
