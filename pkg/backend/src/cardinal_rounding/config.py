import os
from dotenv import load_dotenv
from pathlib import Path

backend_root = Path(__file__).parent.parent.parent
env_local = backend_root / ".env.local"
env_main = backend_root / ".env"

# Load .env first
if env_main.exists():
    load_dotenv(dotenv_path=env_main)

# Load .env.local second with override=True to prioritize local settings
if env_local.exists():
    load_dotenv(dotenv_path=env_local, override=True)

# Numerical tolerances (single source for every module)
FEAS_TOL = 1e-7  # constraint satisfaction of LP solutions
INT_TOL = 1e-6  # integrality test in branch-and-bound
SUM_TOL = 1e-9  # integrality of cardinality-group sums, snapping to 0/1
PAIR_TOL = 1e-12  # sum conservation of a single pair step

# Experiment defaults
SEED_BASE = int(os.getenv("SEED_BASE", "20100101"))
SEEDS = int(os.getenv("SEEDS", "100"))
OUT_DIR = os.getenv("OUT_DIR", "./results")
WORKERS = int(os.getenv("WORKERS", "1"))
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Solver parameters
ILP_MODE = os.getenv("ILP_MODE", "internal")
ILP_TIME_LIMIT = float(os.getenv("ILP_TIME_LIMIT", "600"))
ILP_GAP_LIMIT = float(os.getenv("ILP_GAP_LIMIT", "0.0"))
LP_MAX_ITER = int(os.getenv("LP_MAX_ITER", "50000"))
LP_STALL_PIVOTS = int(os.getenv("LP_STALL_PIVOTS", "50"))
EXTERNAL_SOLVER_CMD = os.getenv("EXTERNAL_SOLVER_CMD", "")

# Rounding parameters
BIT_PRECISION = int(os.getenv("BIT_PRECISION", "20"))
BEST_OF_K = int(os.getenv("BEST_OF_K", "1000"))
SLACK_DELTA = float(os.getenv("SLACK_DELTA", "1.0"))
