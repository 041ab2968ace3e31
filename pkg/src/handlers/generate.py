"""
Generate Handler - Sample a Testbed to CSV

Writes n exact draws from a catalogue testbed, one column per coordinate
(x1..xd). The file is a pure function of (testbed, n, seed).
"""

import logging

from estimation.testbeds import get_testbed
from utils.errors import DomainError, EngineError
from utils.runtime import RunContext, _response, error_response, write_csv
from utils.sampling import RngStream

logger = logging.getLogger(__name__)


def handler(event, context):
    """
    Generate observations from a testbed.

    Event:
        - testbed: catalogue name
        - n: number of rows (0 gives a header-only file)
        - output: CSV path (default <out>/<testbed>.csv)
    """
    try:
        ctx = RunContext.from_event(event)
        testbed = get_testbed(event['testbed'])
        n = int(event.get('n', testbed.training_size))
        if n < 0:
            raise DomainError(f"n must be non-negative, got {n}")

        rng = RngStream(ctx.seed).spawn("generate", testbed.name)
        data = testbed.sample(n, rng)
        columns = [f"x{i + 1}" for i in range(testbed.dimension)]
        path = event.get('output') or ctx.path(f"{testbed.name}.csv")
        write_csv([dict(zip(columns, row)) for row in data.tolist()], path, columns)

        logger.info(f"Wrote {n} samples of {testbed.name} to {path}")
        return _response(0, {'path': str(path), 'rows': n, 'columns': columns})

    except KeyError as e:
        return error_response(EngineError(f"missing event field {e}"))
    except EngineError as e:
        logger.error(f"generate failed: {e}")
        return error_response(e)
