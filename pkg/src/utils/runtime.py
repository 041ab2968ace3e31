"""
Run context, handler responses and output writers
"""

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from utils.config import config_hash, get_engine_config

logger = logging.getLogger(__name__)

RUN_LOG_NAME = "run_log.ndjson"


def _response(exit_code: int, body: Dict) -> Dict:
    """Handler response: process exit code plus a JSON body."""
    return {
        'exitCode': exit_code,
        'body': json.dumps(json_safe(body), default=_json_default, allow_nan=False),
    }


def error_response(error: Exception, exit_code: int = 1) -> Dict:
    body = {'error': str(error), 'type': type(error).__name__}
    if getattr(error, 'errors', None):
        body['errors'] = list(error.errors)
    return _response(exit_code, body)


def _json_default(value):
    if hasattr(value, 'tolist'):
        return value.tolist()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def json_safe(value):
    """Replace non-finite floats with the strings 'inf', '-inf' and 'nan'."""
    if isinstance(value, float) and not math.isfinite(value):
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


@dataclass
class RunContext:
    """Everything a handler needs besides its own arguments."""

    seed: int
    out_dir: Path
    threads: int = 1
    stratum_cap: int = 1_000_000
    min_per_stratum: int = 2
    config: Optional[Dict] = None
    config_digest: str = field(init=False)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.config_digest = config_hash(self.config)

    @classmethod
    def from_event(cls, event: Dict, config: Optional[Dict] = None) -> "RunContext":
        """Event values override the environment; a config's own seed overrides both."""
        env = get_engine_config()
        seed = event.get('seed')
        if seed is None:
            seed = (config or {}).get('seed', env['seed'])
        return cls(
            seed=int(seed),
            out_dir=Path(event.get('out') or env['out_dir']),
            threads=int(event.get('threads') or env['threads']),
            stratum_cap=int(event.get('stratum_cap') or env['stratum_cap']),
            min_per_stratum=int((config or {}).get('min_per_stratum', env['min_per_stratum'])),
            config=config,
        )

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def log_event(self, event: str, **fields) -> None:
        """Append one line to the NDJSON run log."""
        record = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'event': event,
            'seed': self.seed,
            'config_hash': self.config_digest,
        }
        record.update(json_safe(fields))
        with open(self.path(RUN_LOG_NAME), 'a', encoding='utf-8') as fh:
            fh.write(json.dumps(record, sort_keys=True) + '\n')


def write_csv(rows: Sequence[Dict], path, columns: Optional[List[str]] = None) -> Path:
    """Comma-separated, '.' decimal, header row, LF line endings."""
    frame = pd.DataFrame(list(rows), columns=columns)
    frame.to_csv(path, index=False, lineterminator='\n')
    return Path(path)


def write_json(doc: Dict, path) -> Path:
    Path(path).write_text(json.dumps(json_safe(doc), indent=2, sort_keys=True,
                                     default=_json_default) + '\n', encoding='utf-8')
    return Path(path)
