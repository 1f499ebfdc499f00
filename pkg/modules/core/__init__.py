"""
Core Module
Configuration, logging console and the shared error hierarchy
"""

from .config import RunConfig, ScenarioConfig, load_config, dump_config, save_config
from .console import console, get_logger

__all__ = ['RunConfig', 'ScenarioConfig', 'load_config', 'dump_config', 'save_config',
           'console', 'get_logger']
