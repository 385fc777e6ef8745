"""
AugRL Bench - Configuration Settings
Centralized constants and environment handling for the bench
Run configuration files are validated separately in config/schema.py
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file (for local development)
load_dotenv()

# Base directories
BASE_DIR = Path(__file__).resolve().parent.parent
LOGS_DIR = Path(os.getenv("AUGRL_LOGS_DIR", str(BASE_DIR / "logs")))
RUNS_DIR = Path(os.getenv("AUGRL_RUNS_DIR", "runs"))

# Application settings
APP_NAME = "AugRL Bench"
APP_VERSION = "1.0.0"


def get_env_flag(key: str, default: bool = False) -> bool:
    """Read a boolean environment variable ("1", "true", "yes", "on")"""
    value = os.getenv(key)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


def get_env_seed() -> int | None:
    """Seed fallback from AUGRL_SEED; None when unset or not an integer"""
    value = os.getenv("AUGRL_SEED", "").strip()
    if not value:
        return None
    try:
        return int(value)
    except ValueError:
        return None


# ==================== LOGGING ====================
ENABLE_LOGGING = get_env_flag("AUGRL_LOG_TO_FILE", False)
LOG_LEVEL = os.getenv("AUGRL_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE_MAX_BYTES = 10485760  # 10MB
LOG_FILE_BACKUP_COUNT = 5

# ==================== CLI EXIT CODES ====================
EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

# ==================== AUGMENTATION DEFAULTS ====================
TRANSFORM_KINDS = ["none", "shift", "overlay", "randconv", "rotation", "blur"]
COMPLEX_TRANSFORM_KINDS = ["overlay", "randconv", "rotation"]
SHIFT_MAX_PAD = 4
OVERLAY_BETA = 0.5
RANDCONV_KERNEL_SIZE = 3
ROTATION_ANGLES = (0, 90, 180, 270)
BLUR_SIGMA_RANGE = (0.1, 2.0)
BLUR_KERNEL_SIZE = 5
TANGENT_STEPS = {"shift": 1, "blur": 0.05, "overlay": 0.05}
TEXTURE_CELL = 4

# ==================== NETWORK DEFAULTS ====================
FEATURE_DIM = 32
ENCODER_CHANNELS = 8
HIDDEN_DIM = 64
LOG_STD_BOUNDS = (-10.0, 2.0)

# ==================== TRAINING DEFAULTS ====================
DEFAULT_TRAINING = {
    "total_steps": 30000,
    "batch_size": 256,
    "actor_update_freq": 2,
    "target_update_freq": 2,
    "seed_steps": 1000,
    "updates_per_step": 1,
    "eval_interval": 2000,
    "eval_episodes": 10,
    "record_interval": 2000,
    "tau": 0.01,
    "gamma": 0.99,
    "learning_rate": 1e-3,
    "init_temperature": 0.1,
    "replay_capacity": 100000,
}

# ==================== ENVIRONMENT ====================
REACHER_SIZE = 24
REACHER_MARGIN = 2
REACHER_STEP = 0.1
REACHER_HORIZON = 50
FRAME_STACK = 3
ORACLE_GRID = 41
ORACLE_ATOMS = (-1.0, 0.0, 1.0)
NUISANCE_WIDTH = 12
AGENT_INTENSITY = 255
GOAL_INTENSITY = 128

# ==================== STATISTICS ====================
STATS_SAMPLED_PARAMS = 16
COMPLEXITY_MARGIN = 0.05
COMPLEX_UPDATES = 4
COMPLEXITY_PROBE_FRACTION = 0.2
BIAS_SUBBATCH = 16

METRICS_COLUMNS = [
    "step",
    "eval_return",
    "critic_loss",
    "actor_loss",
    "std_critic_loss",
    "std_target_q",
    "std_actor_loss",
    "kl_aug",
    "cos_sim_actor",
    "cos_sim_critic",
]

# ==================== VERIFICATION ====================
VERIFY_SUITES = [
    "lemma1",
    "prop1",
    "prop2",
    "prop3",
    "avgpolicy",
    "kl-direction",
    "linear-model",
    "drq-equivalence",
    "bias",
    "pinsker",
    "gradcheck",
]
QUADRATURE_POINTS = 4097
QUADRATURE_WIDTH = 8.0
ACTION_GRID_POINTS = 1025
BOUND_MARGIN = 1.05
MC_SLACK_SE = 3.0

# ==================== STORAGE ====================
CHECKPOINT_MAGIC = "AUGRLCKPT 1"
MANIFEST_FILE = "manifest.json"
CONFIG_SNAPSHOT_FILE = "config.toml"
METRICS_FILE = "metrics.csv"
STATS_FILE = "stats.csv"
EVAL_FILE = "eval.csv"
CHECKPOINT_DIR = "checkpoints"
