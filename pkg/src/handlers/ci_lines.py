"""
CI Lines Handler - Confidence Intervals over Many Repetitions

Writes one long-format row per repetition (E, interval, whether it covers I)
and a summary per grid cell with the coverage fraction, the count of
intervals missing I and the mean interval length.
"""

import logging
from typing import Dict, List

import numpy as np

from estimation.pipeline import run_experiment
from utils.config import config_from_event
from utils.errors import EngineError
from utils.runtime import RunContext, _response, error_response, write_csv

logger = logging.getLogger(__name__)

DEFAULT_REPETITIONS = 100
LINE_COLUMNS = ["method", "f", "scheme", "m", "R", "repetition", "E", "ci_lo", "ci_hi",
                "contains_I"]
SUMMARY_COLUMNS = ["method", "f", "scheme", "m", "R", "K", "I", "coverage", "non_covering",
                   "mean_length"]


def ci_lines(result) -> List[Dict]:
    lines = []
    for cell, rep, report in result.reports:
        lo, hi, _ = report.ci
        truth = report.true_value
        lines.append({
            'method': report.method, 'f': cell.function, 'scheme': cell.label, 'm': report.m,
            'R': report.budget, 'repetition': rep, 'E': report.estimate, 'ci_lo': lo, 'ci_hi': hi,
            'contains_I': None if truth is None else bool(lo <= truth <= hi),
        })
    return lines


def ci_summary(lines: List[Dict], truths: Dict[str, object]) -> List[Dict]:
    groups: Dict[tuple, List[Dict]] = {}
    for line in lines:
        groups.setdefault((line['method'], line['f'], line['scheme'], line['R']), []).append(line)
    summary = []
    for (method, f_name, scheme, R), rows in groups.items():
        covered = [r['contains_I'] for r in rows if r['contains_I'] is not None]
        summary.append({
            'method': method, 'f': f_name, 'scheme': scheme, 'm': rows[0]['m'], 'R': R,
            'K': len(rows), 'I': truths.get(f_name),
            'coverage': float(np.mean(covered)) if covered else None,
            'non_covering': len(covered) - int(sum(covered)) if covered else None,
            'mean_length': float(np.mean([r['ci_hi'] - r['ci_lo'] for r in rows])),
        })
    return summary


def handler(event, context):
    try:
        config = config_from_event(event)
        ctx = RunContext.from_event(event, config)
        K = int(event.get('repetitions') or config.get('repetitions') or DEFAULT_REPETITIONS)
        name = config.get('name', 'ci')
        logger.info(f"Collecting {K} confidence intervals per cell for {name}")

        result = run_experiment(dict(config, include_obs=False), ctx, repetitions=K)
        lines = ci_lines(result)
        truths = {cell.function: report.true_value for cell, _, report in result.reports}
        summary = ci_summary(lines, truths)
        lines_path = write_csv(lines, ctx.path(f"{name}_lines.csv"), LINE_COLUMNS)
        summary_path = write_csv(summary, ctx.path(f"{name}_summary.csv"), SUMMARY_COLUMNS)

        return _response(0, {'lines': str(lines_path), 'summary': str(summary_path),
                             'cells': summary})

    except EngineError as e:
        logger.error(f"ci-lines failed: {e}")
        return error_response(e)
