"""
Configuration utility functions
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.validation import validate_experiment_config

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_engine_config() -> Dict[str, object]:
    """Get engine configuration from environment variables (.env is loaded first)."""
    load_dotenv()
    return {
        'seed': int(os.environ.get('STRATMC_SEED', 0)),
        'out_dir': os.environ.get('STRATMC_OUT_DIR', 'out'),
        'threads': int(os.environ.get('STRATMC_THREADS', 1)),
        'log_level': os.environ.get('STRATMC_LOG_LEVEL', 'INFO'),
        'stratum_cap': int(float(os.environ.get('STRATMC_STRATUM_CAP', 1e6))),
        'min_per_stratum': int(os.environ.get('STRATMC_MIN_PER_STRATUM', 2)),
    }


def configure_logging(level: str = 'INFO') -> None:
    """Single stream handler on the root logger."""
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format=LOG_FORMAT, force=True)


def load_experiment_config(path) -> Dict[str, object]:
    """
    Read and validate an experiment configuration file.

    Raises:
        ConfigError: with every validation problem found, or if the file is not JSON
    """
    try:
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"config file is not valid JSON: {e}"])
    return parse_experiment_config(doc)


def parse_experiment_config(doc) -> Dict[str, object]:
    is_valid, errors = validate_experiment_config(doc)
    if not is_valid:
        raise ConfigError(errors)
    return doc


def config_hash(doc: Optional[dict]) -> str:
    """sha256 of the canonical JSON form."""
    canonical = json.dumps(doc or {}, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def config_from_event(event: Dict) -> Dict[str, object]:
    """The experiment config carried by a handler event, inline or by path."""
    if isinstance(event.get('config'), dict):
        return parse_experiment_config(event['config'])
    if event.get('config_path'):
        return load_experiment_config(event['config_path'])
    raise ConfigError(["an experiment config is required (--config)"])
