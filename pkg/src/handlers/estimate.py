"""
Estimate Handler - One Estimate per Grid Cell

Runs every (function, scheme, allocation, R) of the config once and writes
the reports as CSV rows and JSON. When training observations exist, the
observation-based estimate is reported alongside.
"""

import logging

from estimation.pipeline import DETAIL_COLUMNS, run_experiment
from utils.config import config_from_event
from utils.errors import EngineError
from utils.runtime import RunContext, _response, error_response, write_csv, write_json

logger = logging.getLogger(__name__)


def handler(event, context):
    try:
        config = config_from_event(event)
        ctx = RunContext.from_event(event, config)
        name = config.get('name', 'estimate')
        logger.info(f"Estimating {name} with seed {ctx.seed}")

        result = run_experiment(config, ctx, repetitions=1)
        csv_path = write_csv(result.detail, ctx.path(f"{name}.csv"), DETAIL_COLUMNS)
        reports = [
            {'f': cell.function, 'scheme': cell.label, **report.to_dict()}
            for cell, _, report in result.reports
        ]
        json_path = write_json({'seed': ctx.seed, 'config_hash': ctx.config_digest,
                                'reports': reports}, ctx.path(f"{name}.json"))

        return _response(0, {'csv': str(csv_path), 'json': str(json_path), 'rows': result.detail})

    except EngineError as e:
        logger.error(f"estimate failed: {e}")
        return error_response(e)
