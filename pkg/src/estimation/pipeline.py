"""
Experiment grid: model resolution, repetitions and aggregation

A grid cell is one (function, scheme, method, R). Every repetition draws from
master.spawn("rep", rep, R), shared by all cells of that repetition and
budget, so a one-stratum scheme reproduces crude Monte Carlo exactly.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from estimation.estimators import (
    METHOD_CMC,
    METHOD_OPT,
    METHOD_PROP,
    EstimateReport,
    cmc_estimate,
    cmc_estimate_map,
    format_float,
    observation_estimate,
    proportional_estimate,
    run_optimal_pipeline,
)
from estimation.flow import IdentityMap, TrainConfig, TransportMap, load_map, train_flow
from estimation.gmm import GmmSampler, fit_gmm
from estimation.selection import DEFAULT_PILOT_PER_DIM, select_high_variance_dims, select_random_dims
from estimation.strata import StrataScheme, build_selected_dims, scheme_from_dict
from estimation.testbeds import TargetSpec, get_testbed, load_csv_matrix, parse_target
from utils.errors import DomainError
from utils.runtime import RunContext
from utils.sampling import RngStream, substream_id

logger = logging.getLogger(__name__)

DEFAULTS = {
    'first_difference': False,
    'model': {'kind': 'exact'},
    'schemes': [{'kind': 'cmc'}],
    'allocations': ['prop'],
    'pilot_fraction': 0.125,
    'repetitions': 10,
    'alpha': 0.05,
    'retrain_per_rep': False,
    'scaled': False,
    'include_obs': None,
}

DETAIL_COLUMNS = ["method", "f", "scheme", "m", "R", "R_prime", "repetition", "E", "SD", "AC",
                  "CI_lo", "CI_hi", "I", "seed"]
AGGREGATE_COLUMNS = ["method", "f", "scheme", "m", "R", "R_prime", "K", "E", "SD", "AC", "I",
                     "seed"]
SCALED_COLUMNS = ["E*", "SD*", "I*"]


def with_defaults(config: Dict) -> Dict:
    merged = dict(DEFAULTS)
    merged.update(config)
    return merged


def scheme_label(scheme: Dict) -> str:
    params = ",".join(f"{k}={scheme[k]}" for k in sorted(scheme) if k not in ('kind', 'edges'))
    return f"{scheme['kind']}({params})" if params else scheme['kind']


@dataclass(frozen=True)
class GridCell:
    index: int
    function: str
    scheme: Dict = field(hash=False, compare=False)
    method: str
    R: int

    @property
    def label(self) -> str:
        return scheme_label(self.scheme)


def expand_grid(config: Dict) -> List[GridCell]:
    cells = []
    for f_name in config['functions']:
        for scheme in config['schemes']:
            methods = ([METHOD_CMC] if scheme['kind'] == 'cmc'
                       else [METHOD_PROP if a == 'prop' else METHOD_OPT for a in config['allocations']])
            for method in methods:
                for R in config['R']:
                    cells.append(GridCell(len(cells), f_name, scheme, method, int(R)))
    return cells


# =====================================================
# DATA AND MODEL RESOLUTION
# =====================================================

@dataclass
class ResolvedModel:
    transport: TransportMap
    dimension: int
    data: Optional[np.ndarray] = None
    trace: List = field(default_factory=list)


def _testbed(config: Dict) -> Optional[TargetSpec]:
    return get_testbed(config['testbed']) if 'testbed' in config else None


def _needs_training(model: Dict) -> bool:
    return model['kind'] in ('flow', 'gmm') and 'path' not in model


def load_training_data(config: Dict, rng: RngStream) -> Optional[np.ndarray]:
    """The CSV named by data_path, else a testbed sample when one is needed."""
    model = config['model']
    if 'data_path' in config:
        return load_csv_matrix(config['data_path'], apply_first_difference=config['first_difference'])
    testbed = _testbed(config)
    if testbed is not None and (_needs_training(model) or config['include_obs']):
        return testbed.sample(int(model.get('n', testbed.training_size)), rng)
    return None


def train_config_from(model: Dict, seed: int) -> TrainConfig:
    keys = ('epochs', 'batch_size', 'learning_rate', 'optimizer', 'validation_fraction', 'patience')
    return TrainConfig(seed=seed, **{k: model[k] for k in keys if k in model})


def resolve_model(config: Dict, data: Optional[np.ndarray], seed: int) -> ResolvedModel:
    """Build the transport a config asks for, training it on `data` when needed."""
    model = config['model']
    kind = model['kind']
    testbed = _testbed(config)
    d = testbed.dimension if testbed is not None else (data.shape[1] if data is not None else None)
    if d is None:
        raise DomainError("cannot infer the dimension without a testbed or data")

    if kind == 'exact':
        return ResolvedModel(testbed.exact_map(), d, data)
    if kind == 'identity':
        return ResolvedModel(IdentityMap(d), d, data)
    if kind == 'flow':
        if 'path' in model:
            return ResolvedModel(load_map(model['path'], expected_dimension=d), d, data)
        transport, trace = train_flow(data, model.get('layers'), model.get('hidden'),
                                      train_config_from(model, seed))
        return ResolvedModel(transport, d, data, trace)
    if kind == 'gmm':
        if 'path' in model:
            transport = load_map(model['path'], expected_dimension=d)
            if not isinstance(transport, GmmSampler):
                raise DomainError(f"{model['path']} does not hold a GMM")
            return ResolvedModel(transport, d, data)
        fitted, trace = fit_gmm(data, int(model['k']), int(model.get('max_iters', 500)), seed)
        return ResolvedModel(GmmSampler(fitted), d, data, trace)
    raise DomainError(f"unknown model kind {kind!r}")


def build_scheme(entry: Dict, d: int, transport: TransportMap, f, rng: RngStream,
                 stratum_cap: Optional[int] = None) -> Optional[StrataScheme]:
    """The scheme for a grid entry; None for cmc. Coordinate selection draws from rng."""
    kind = entry['kind']
    if kind == 'cmc':
        return None
    if kind == 'selected' and 'dims' not in entry:
        eta, m0 = int(entry['eta']), int(entry['m0'])
        if entry.get('select', 'random') == 'high-variance':
            dims = select_high_variance_dims(transport, f, d, eta, m0,
                                             int(entry.get('R0', DEFAULT_PILOT_PER_DIM)), rng)
        else:
            dims = select_random_dims(d, eta, rng)
        return build_selected_dims(d, dims, m0, stratum_cap)
    doc = {k: v for k, v in entry.items() if k not in ('select', 'R0', 'eta')}
    doc['d'] = d
    return scheme_from_dict(doc, stratum_cap)


# =====================================================
# RUNNING
# =====================================================

def estimate_cell(cell: GridCell, resolved: ResolvedModel, f, rng: RngStream, ctx: RunContext,
                  config: Dict, true_value: Optional[float], threads: int = 1) -> EstimateReport:
    transport = resolved.transport
    if cell.method == METHOD_CMC:
        if isinstance(transport, GmmSampler):
            stream = rng.spawn(0)
            report = cmc_estimate(lambda n: f(transport.sample(n, stream)), cell.R)
        else:
            report = cmc_estimate_map(transport, f, cell.R, rng)
    else:
        scheme = build_scheme(cell.scheme, resolved.dimension, transport, f,
                              rng.spawn("select", cell.index), ctx.stratum_cap)
        if cell.method == METHOD_PROP:
            report = proportional_estimate(scheme, transport, f, cell.R, rng,
                                           ctx.min_per_stratum, threads)
        else:
            report = run_optimal_pipeline(scheme, transport, f, cell.R, rng,
                                          config['pilot_fraction'], ctx.min_per_stratum, threads)
    return report.with_oracle(true_value, config['alpha'])


def _detail_row(cell: GridCell, report: EstimateReport, repetition: int, true_value,
                seed: int, scheme_name: Optional[str] = None) -> Dict:
    row = report.csv_row(cell.function, seed)
    row.update({
        "scheme": scheme_name or cell.label,
        "repetition": repetition,
        "I": true_value,
    })
    return row


@dataclass
class ExperimentResult:
    detail: List[Dict]
    aggregate: List[Dict]
    reports: List[Tuple[GridCell, int, EstimateReport]]
    traces: List = field(default_factory=list)


def _true_value(config: Dict, f_name: str) -> Optional[float]:
    testbed = _testbed(config)
    return testbed.true_value(f_name) if testbed is not None else None


def run_experiment(config: Dict, ctx: RunContext, repetitions: Optional[int] = None) -> ExperimentResult:
    """
    Run every grid cell `repetitions` times (config's K by default).

    One model is resolved up front and shared by all repetitions unless
    retrain_per_rep is set, in which case repetition r draws its own training
    data and trains with its own seed.
    """
    config = with_defaults(config)
    K = int(repetitions or config['repetitions'])
    master = RngStream(ctx.seed)
    cells = expand_grid(config)
    functions = {name: parse_target(name) for name in config['functions']}
    truths = {name: _true_value(config, name) for name in config['functions']}
    if config['include_obs'] is None:
        config['include_obs'] = _needs_training(config['model']) or 'data_path' in config

    # parallel repetitions keep each estimate single-threaded
    strata_threads = 1 if (ctx.threads > 1 and K > 1) else ctx.threads
    shared = None
    if not config['retrain_per_rep']:
        data = load_training_data(config, master.spawn("data"))
        shared = resolve_model(config, data, ctx.seed)

    def repetition(rep: int):
        resolved = shared
        if resolved is None:
            data = load_training_data(config, master.spawn("data", rep))
            resolved = resolve_model(config, data, substream_id(ctx.seed, "train", rep))
        out = []
        for cell in cells:
            rng = master.spawn("rep", rep, cell.R)
            report = estimate_cell(cell, resolved, functions[cell.function], rng, ctx, config,
                                   truths[cell.function], strata_threads)
            out.append((cell, rep, report))
        obs = []
        if config['include_obs'] and resolved.data is not None and \
                (rep == 0 or config['retrain_per_rep']):
            for name, f in functions.items():
                report = observation_estimate(f, resolved.data).with_oracle(truths[name],
                                                                            config['alpha'])
                obs.append((name, rep, report))
        return out, obs, resolved.trace

    if ctx.threads > 1 and K > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            results = list(pool.map(repetition, range(K)))
    else:
        results = [repetition(rep) for rep in range(K)]

    detail, reports, traces = [], [], []
    obs_rows: Dict[str, List[Dict]] = {}
    for out, obs, trace in results:
        traces.append(trace)
        for cell, rep, report in out:
            reports.append((cell, rep, report))
            detail.append(_detail_row(cell, report, rep, truths[cell.function], ctx.seed))
            ctx.log_event("estimate", method=report.method, f=cell.function, scheme=cell.label,
                          m=report.m, R=report.budget, E=report.estimate, SD=report.sd,
                          repetition=rep)
        for name, rep, report in obs:
            row = report.csv_row(name, ctx.seed)
            row.update({"scheme": "observations", "repetition": rep, "I": truths[name]})
            obs_rows.setdefault(name, []).append(row)
            ctx.log_event("estimate", method=report.method, f=name, scheme="observations",
                          m=1, R=report.budget, E=report.estimate, SD=report.sd, repetition=rep)

    aggregate = aggregate_rows(detail, cells, K, ctx.seed, config['scaled'])
    for name in config['functions']:
        if name in obs_rows:
            detail.extend(obs_rows[name])
            aggregate.extend(_aggregate_group(obs_rows[name], ctx.seed, config['scaled']))
    return ExperimentResult(detail, aggregate, reports, traces)


# =====================================================
# AGGREGATION
# =====================================================

def _mean_accuracy(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    if not values:
        return None
    as_float = [float(v) for v in values]
    return float(np.mean(as_float))


def _aggregate_group(rows: List[Dict], seed: int, scaled: bool) -> List[Dict]:
    first = rows[0]
    mean_e = float(np.mean([r["E"] for r in rows]))
    mean_sd = float(np.mean([r["SD"] for r in rows]))
    row = {
        "method": first["method"], "f": first["f"], "scheme": first["scheme"], "m": first["m"],
        "R": first["R"], "R_prime": first["R_prime"], "K": len(rows),
        "E": mean_e, "SD": mean_sd, "AC": format_float(_mean_accuracy(r["AC"] for r in rows)),
        "I": first["I"], "seed": seed,
    }
    if scaled:
        row.update(scaled_columns(mean_e, mean_sd, first["I"]))
    return [row]


def aggregate_rows(detail: List[Dict], cells: List[GridCell], K: int, seed: int,
                   scaled: bool = False) -> List[Dict]:
    """
    Arithmetic means over repetitions of E, SD and AC per grid cell. The mean
    AC is the mean of the per-repetition ACs, not the AC of the mean estimate.
    """
    per_cell = len(cells)
    out = []
    for i in range(per_cell):
        group = [detail[rep * per_cell + i] for rep in range(K)]
        out.extend(_aggregate_group(group, seed, scaled))
    return out


def scaled_columns(E: float, SD: float, I: Optional[float]) -> Dict[str, Optional[float]]:
    """The ×100 display columns."""
    return {"E*": 100.0 * E, "SD*": 100.0 * SD, "I*": None if I is None else 100.0 * I}
