"""
Process-wide settings for HoopNet.

Values are read from the environment (and an optional `.env` file at the repo
root) so that CLI runs, tests and notebooks share one set of defaults. Every
structured config object (CourtSpec, SynthConfig, TrainConfig, ...) takes its
defaults from here.
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / ".env")


def _env_float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


def _env_int(name: str, default: str) -> int:
    return int(os.getenv(name, default))


DEFAULT_SEED = _env_int("HOOPNET_SEED", "20780")
OUTPUT_DIR = Path(os.getenv("HOOPNET_OUTPUT_DIR", str(BASE_DIR / "runs")))
LOG_LEVEL = os.getenv("HOOPNET_LOG_LEVEL", "INFO").upper()
SHOW_PROGRESS = os.getenv("HOOPNET_PROGRESS", "True").lower() == "true"


# Court geometry (feet). Real-world NBA constants.
COURT_LENGTH_FT = _env_float("HOOPNET_COURT_LENGTH_FT", "94.0")
COURT_WIDTH_FT = _env_float("HOOPNET_COURT_WIDTH_FT", "50.0")
RIM_FROM_BASELINE_FT = _env_float("HOOPNET_RIM_FROM_BASELINE_FT", "5.25")
RIM_HEIGHT_FT = _env_float("HOOPNET_RIM_HEIGHT_FT", "10.0")
RIM_RADIUS_FT = _env_float("HOOPNET_RIM_RADIUS_FT", "0.75")
BALL_RADIUS_FT = _env_float("HOOPNET_BALL_RADIUS_FT", "0.39")
COURT_MARGIN_FT = _env_float("HOOPNET_COURT_MARGIN_FT", "10.0")

GRAVITY_FT_S2 = 32.174
FRAME_RATE_HZ = 25.0


# Sequence shape
SEQUENCE_LENGTH = _env_int("HOOPNET_SEQUENCE_LENGTH", "12")
INPUT_DIM = 4
TRAIN_FRACTION = 0.8


# Mixture head numerical safeguards
LOG_SIGMA_CLAMP = (-10.0, 10.0)
RHO_CLAMP = (-8.0, 8.0)
DEFAULT_COMPONENTS = _env_int("HOOPNET_COMPONENTS", "3")
MAX_RECOMMENDED_COMPONENTS = 8


# Optimizer / training defaults
ADAM_LR = _env_float("HOOPNET_LR", "0.001")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_EPOCHS = _env_int("HOOPNET_EPOCHS", "300")
DEFAULT_BATCH_SIZE = _env_int("HOOPNET_BATCH_SIZE", "64")
GRAD_CLIP_NORM = _env_float("HOOPNET_GRAD_CLIP_NORM", "5.0")
EARLY_STOP_WINDOW = 10
EARLY_STOP_FACTOR = 0.9
SEARCH_BUDGET = _env_int("HOOPNET_SEARCH_BUDGET", "50")


# Evaluation
DISTANCE_CUTOFFS_FT = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
MIN_SEQUENCES_PER_CUTOFF = 100


# Gradient check
GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_COORDINATES = 100
GRADCHECK_SCALE_FLOOR = 1e-4
