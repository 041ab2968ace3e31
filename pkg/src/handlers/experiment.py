"""
Experiment Handler - Repeated Trials with Aggregated Metrics

Each grid cell runs K times on its own per-repetition streams. The aggregate
CSV holds the means over repetitions; the per-repetition values go to a
sidecar CSV next to it.
"""

import logging

from estimation.pipeline import (
    AGGREGATE_COLUMNS,
    DETAIL_COLUMNS,
    SCALED_COLUMNS,
    run_experiment,
)
from utils.config import config_from_event
from utils.errors import EngineError
from utils.runtime import RunContext, _response, error_response, write_csv

logger = logging.getLogger(__name__)


def handler(event, context):
    try:
        config = config_from_event(event)
        ctx = RunContext.from_event(event, config)
        name = config.get('name', 'experiment')
        logger.info(f"Running experiment {name}: K={config.get('repetitions', 10)}, "
                    f"seed={ctx.seed}, threads={ctx.threads}")

        result = run_experiment(config, ctx)
        columns = AGGREGATE_COLUMNS + (SCALED_COLUMNS if config.get('scaled') else [])
        aggregate_path = write_csv(result.aggregate, ctx.path(f"{name}_aggregate.csv"), columns)
        detail_path = write_csv(result.detail, ctx.path(f"{name}_repetitions.csv"), DETAIL_COLUMNS)

        logger.info(f"Experiment {name} finished: {len(result.aggregate)} aggregate rows")
        return _response(0, {'aggregate': str(aggregate_path), 'repetitions': str(detail_path),
                             'rows': result.aggregate})

    except EngineError as e:
        logger.error(f"experiment failed: {e}")
        return error_response(e)
