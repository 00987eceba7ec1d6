"""Jitter-robust trajectory, offloading and compression control for a single-UAV edge-computing system."""

from .config import Config, ConfigError, desk_profile, full_profile, load_config

__all__ = ["Config", "ConfigError", "desk_profile", "full_profile", "load_config"]
__version__ = "0.1.0"
