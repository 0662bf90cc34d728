import os

from dotenv import load_dotenv

load_dotenv()


class LoggerConfig:
    """Configuration for logging."""

    LOG_FILE_PATH = os.getenv("DETPOMDP_LOG_FILE", "detpomdp.log")
    LOG_LEVEL = os.getenv("DETPOMDP_LOG_LEVEL", "INFO").upper()


class ComputeConfig:
    """Configuration for parallel work and on-disk caches."""

    # Caps thread pools used for table construction and policy evaluation.
    THREADS = int(os.getenv("DETPOMDP_THREADS", os.cpu_count() or 1))
    CACHE_DIR = os.getenv("DETPOMDP_CACHE_DIR", ".detpomdp_cache")
    # Largest element count for which all 2^n element states are enumerated.
    MAX_ENUMERATED_ELEMENTS = int(os.getenv("DETPOMDP_MAX_ELEMENTS", 22))


class GeneralConfig:
    """General application settings."""

    DEBUG_MODE = os.getenv("DEBUG_MODE", "False").lower() == "true"
    APP_VERSION = "1.0.0"


# Grouping configurations for easier access
LOGGER_SETTINGS = {
    "log_file_path": LoggerConfig.LOG_FILE_PATH,
    "log_level": LoggerConfig.LOG_LEVEL,
}

COMPUTE_SETTINGS = {
    "threads": max(1, ComputeConfig.THREADS),
    "cache_dir": ComputeConfig.CACHE_DIR,
    "max_enumerated_elements": ComputeConfig.MAX_ENUMERATED_ELEMENTS,
}

GENERAL_SETTINGS = {
    "debug_mode": GeneralConfig.DEBUG_MODE,
    "app_version": GeneralConfig.APP_VERSION,
}
