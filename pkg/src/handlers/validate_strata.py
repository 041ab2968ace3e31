"""
Validate Strata Handler - Diagnostics for a Stratification Scheme

Runs the equiprobability, round-trip and (for schemes with polar angles)
acceptance-rejection cost checks and writes them as JSON. The exit code is 2
when any check fails.
"""

import json
import logging
from pathlib import Path

from estimation.diagnostics import validate_scheme
from estimation.strata import scheme_from_dict
from utils.errors import EngineError
from utils.runtime import RunContext, _response, error_response, write_json
from utils.sampling import RngStream

logger = logging.getLogger(__name__)

FAILED_CHECK_EXIT_CODE = 2


def _scheme_doc(event):
    scheme = event['scheme']
    if isinstance(scheme, str):
        text = scheme if scheme.lstrip().startswith('{') else Path(scheme).read_text(encoding='utf-8')
        scheme = json.loads(text)
    scheme = dict(scheme)
    if event.get('d') is not None:
        scheme['d'] = int(event['d'])
    return scheme


def handler(event, context):
    """
    Validate a scheme.

    Event:
        - scheme: JSON object, JSON string or path ({"kind": "cartesian", "d": 2, "m0": 4})
        - d: dimension, overriding the scheme's own
        - n_samples: draws for the chi-squared test (default 100000)
    """
    try:
        ctx = RunContext.from_event(event)
        scheme = scheme_from_dict(_scheme_doc(event), ctx.stratum_cap)
        n_samples = int(event.get('n_samples', 100_000))
        report = validate_scheme(scheme, n_samples, RngStream(ctx.seed).spawn("validate"))
        path = write_json(report, event.get('output') or ctx.path("strata_diagnostics.json"))

        failed = [c['name'] for c in report['checks'] if not c['passed']]
        logger.info(f"Strata validation for {scheme.kind} m={scheme.m}: "
                    f"{'passed' if not failed else 'failed ' + ', '.join(failed)}")
        body = {'path': str(path), 'passed': report['passed'], 'failed_checks': failed,
                'checks': report['checks']}
        return _response(0 if report['passed'] else FAILED_CHECK_EXIT_CODE, body)

    except (KeyError, OSError, json.JSONDecodeError) as e:
        return error_response(EngineError(f"invalid scheme description: {e}"))
    except EngineError as e:
        logger.error(f"validate-strata failed: {e}")
        return error_response(e)
