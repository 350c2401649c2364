"""
Environment configuration (OSMEE_* variables, optional .env file)
"""

import os

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

from defaults import CACHE_MB, DEFAULT_SEED, MC_SAMPLES


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def get_thread_count() -> int:
    """Worker cap from OSMEE_THREADS (default: CPU count)."""
    return max(1, _env_int("OSMEE_THREADS", os.cpu_count() or 1))


def get_mc_samples() -> int:
    return max(2, _env_int("OSMEE_MC_SAMPLES", MC_SAMPLES))


def get_default_seed() -> int:
    return _env_int("OSMEE_SEED", DEFAULT_SEED)


def get_cache_bytes() -> int:
    return max(0, _env_int("OSMEE_CACHE_MB", CACHE_MB)) * 1024 * 1024


def run_slow_tests() -> bool:
    return os.getenv("OSMEE_RUN_SLOW", "").strip().lower() in {"1", "true", "yes", "on"}
