from . import models  # re-export module for convenience
from .settings import get_settings, reset_settings_cache

__all__ = [
    "models",
    "get_settings",
    "reset_settings_cache",
]
