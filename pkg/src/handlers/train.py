"""
Train Handler - Fit a Flow or GMM to Observations

Reads a CSV of observations, trains the requested model, and writes the model
file plus its loss trace. Training is seeded, so retraining with the same seed
reproduces the model file byte for byte.
"""

import logging

from estimation.flow import save_map, train_flow
from estimation.gmm import fit_gmm, save_gmm
from estimation.pipeline import train_config_from
from estimation.testbeds import load_csv_matrix
from utils.errors import EngineError, TrainingDivergedError
from utils.runtime import RunContext, _response, error_response, write_csv

logger = logging.getLogger(__name__)


def _write_flow_trace(trace, path):
    rows = [{'epoch': e, 'train_nll': t, 'val_nll': v} for e, t, v in trace]
    return write_csv(rows, path, ['epoch', 'train_nll', 'val_nll'])


def handler(event, context):
    """
    Train a model.

    Event:
        - data_path: CSV of observations
        - first_difference: difference the columns first (default false)
        - model: {"kind": "flow", layers, hidden, epochs, ...} or {"kind": "gmm", "k": 4}
        - output: model path (default <out>/<kind>.json)
    """
    try:
        ctx = RunContext.from_event(event)
        data = load_csv_matrix(event['data_path'],
                               apply_first_difference=bool(event.get('first_difference', False)))
        model = event.get('model') or {'kind': 'flow'}
        kind = model.get('kind', 'flow')
        model_path = event.get('output') or ctx.path(f"{kind}.json")
        trace_path = ctx.path(f"{kind}_trace.csv")
        logger.info(f"Training {kind} on {data.shape[0]} rows x {data.shape[1]} columns")

        if kind == 'flow':
            try:
                flow, trace = train_flow(data, model.get('layers'), model.get('hidden'),
                                         train_config_from(model, ctx.seed))
            except TrainingDivergedError as e:
                _write_flow_trace(e.trace, trace_path)
                raise
            save_map(flow, model_path)
            _write_flow_trace(trace, trace_path)
            best = min(v for _, _, v in trace)
            body = {'model': str(model_path), 'trace': str(trace_path), 'epochs': len(trace) - 1,
                    'best_val_nll': best, 'layers': len(flow.layers)}
        elif kind == 'gmm':
            fitted, trace = fit_gmm(data, int(model['k']), int(model.get('max_iters', 500)),
                                    ctx.seed)
            save_gmm(fitted, model_path)
            write_csv([{'iteration': i, 'mean_log_likelihood': ll} for i, ll in enumerate(trace)],
                      trace_path, ['iteration', 'mean_log_likelihood'])
            body = {'model': str(model_path), 'trace': str(trace_path), 'k': fitted.k,
                    'iterations': len(trace), 'mean_log_likelihood': trace[-1]}
        else:
            raise EngineError(f"unknown model kind {kind!r}; use flow or gmm")

        ctx.log_event("train", method=kind, rows=int(data.shape[0]), model=str(model_path))
        return _response(0, body)

    except KeyError as e:
        return error_response(EngineError(f"missing field {e}"))
    except EngineError as e:
        logger.error(f"train failed: {e}")
        return error_response(e)
