"""
Validation utility functions
"""

import math
from typing import Dict, List, Optional, Tuple

from estimation.testbeds import CATALOGUE, parse_target
from utils.errors import DomainError

TOP_LEVEL_KEYS = {
    'name', 'testbed', 'data_path', 'first_difference', 'functions', 'model', 'schemes',
    'allocations', 'pilot_fraction', 'R', 'repetitions', 'alpha', 'seed', 'retrain_per_rep',
    'scaled', 'include_obs', 'min_per_stratum',
}
MODEL_KEYS = {
    'kind', 'path', 'n', 'k', 'layers', 'hidden', 'epochs', 'batch_size', 'learning_rate',
    'optimizer', 'validation_fraction', 'patience', 'max_iters',
}
SCHEME_KEYS = {'kind', 'm0', 'm_r', 'dims', 'eta', 'select', 'R0', 'edges'}

MODEL_KINDS = ('exact', 'identity', 'flow', 'gmm')
SCHEME_KINDS = ('cmc', 'cartesian', 'spherical', 'radial', 'selected')
ALLOCATIONS = ('prop', 'opt')
SELECTIONS = ('random', 'high-variance')


def validate_positive_int(value, name: str) -> Tuple[bool, str]:
    """
    Validate a strictly positive integer (booleans are rejected).

    Returns:
        Tuple of (is_valid, error_message)
    """
    if isinstance(value, bool) or not isinstance(value, int):
        return False, f"{name} must be an integer"
    if value < 1:
        return False, f"{name} must be positive"
    return True, ""


def validate_probability(value, name: str) -> Tuple[bool, str]:
    """
    Validate a number strictly inside (0, 1).

    Returns:
        Tuple of (is_valid, error_message)
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False, f"{name} must be a number"
    if not 0 < value < 1:
        return False, f"{name} must lie strictly between 0 and 1"
    return True, ""


def validate_unknown_keys(doc: Dict, allowed, where: str) -> List[str]:
    return [f"unknown key '{key}' in {where}" for key in sorted(set(doc) - set(allowed))]


def validate_model(model: Dict, has_data: bool) -> Tuple[bool, List[str]]:
    """
    Validate the model section.

    Returns:
        Tuple of (is_valid, list_of_errors)
    """
    if not isinstance(model, dict):
        return False, ["model must be an object"]
    errors = validate_unknown_keys(model, MODEL_KEYS, 'model')
    kind = model.get('kind')
    if kind not in MODEL_KINDS:
        errors.append(f"model.kind must be one of {', '.join(MODEL_KINDS)}")
    if kind == 'gmm' and 'path' not in model:
        is_valid, error = validate_positive_int(model.get('k'), 'model.k')
        if not is_valid:
            errors.append(error)
    if kind in ('flow', 'gmm') and 'path' not in model and not has_data:
        errors.append(f"a {kind} model needs a path, a testbed or a data_path to train on")
    for key in ('n', 'layers', 'hidden', 'epochs', 'batch_size', 'patience', 'max_iters'):
        if key in model:
            is_valid, error = validate_positive_int(model[key], f"model.{key}")
            if not is_valid and not (key == 'epochs' and model[key] == 0):
                errors.append(error)
    if 'optimizer' in model and model['optimizer'] not in ('adam', 'sgd-momentum'):
        errors.append("model.optimizer must be adam or sgd-momentum")
    return len(errors) == 0, errors


def scheme_strata_count(scheme: Dict, d: int) -> Optional[int]:
    """Number of strata a scheme entry produces in dimension d (1 for cmc)."""
    kind = scheme.get('kind')
    if kind == 'cmc':
        return 1
    if kind == 'cartesian':
        m0 = scheme.get('m0', 1)
        return int(math.prod(m0)) if isinstance(m0, list) else int(m0) ** d
    if kind == 'spherical':
        return int(scheme.get('m_r', 1)) * int(scheme.get('m0', 1)) ** (d - 1)
    if kind == 'radial':
        return int(scheme.get('m_r', 1))
    if kind == 'selected':
        eta = len(scheme['dims']) if 'dims' in scheme else int(scheme.get('eta', 1))
        return int(scheme.get('m0', 1)) ** eta
    return None


def validate_scheme(scheme: Dict, d: Optional[int], model_kind: Optional[str]) -> Tuple[bool, List[str]]:
    """
    Validate one entry of the schemes list.

    Returns:
        Tuple of (is_valid, list_of_errors)
    """
    if not isinstance(scheme, dict):
        return False, ["each scheme must be an object"]
    errors = validate_unknown_keys(scheme, SCHEME_KEYS, 'scheme')
    kind = scheme.get('kind')
    if kind not in SCHEME_KINDS:
        errors.append(f"scheme.kind must be one of {', '.join(SCHEME_KINDS)}")
        return False, errors
    if kind != 'cmc' and model_kind == 'gmm':
        errors.append("a gmm model only supports the cmc scheme")
    required = {'cartesian': ('m0',), 'spherical': ('m_r', 'm0'), 'radial': ('m_r',),
                'selected': ('m0',)}.get(kind, ())
    for key in required:
        if key not in scheme:
            errors.append(f"{kind} scheme requires '{key}'")
        elif not (key == 'm0' and kind == 'cartesian' and isinstance(scheme[key], list)):
            is_valid, error = validate_positive_int(scheme[key], f"scheme.{key}")
            if not is_valid:
                errors.append(error)
    if kind == 'selected':
        if 'dims' not in scheme and 'eta' not in scheme:
            errors.append("selected scheme requires 'dims' or 'eta'")
        if 'select' in scheme and scheme['select'] not in SELECTIONS:
            errors.append(f"scheme.select must be one of {', '.join(SELECTIONS)}")
        if d is not None and 'eta' in scheme and isinstance(scheme['eta'], int) and scheme['eta'] > d:
            errors.append(f"cannot select {scheme['eta']} of {d} coordinates")
    if kind == 'spherical' and d is not None and d < 2:
        errors.append("spherical stratification needs d >= 2")
    return len(errors) == 0, errors


def validate_experiment_config(doc: Dict) -> Tuple[bool, List[str]]:
    """
    Validate a complete experiment configuration.

    Args:
        doc: Parsed JSON document

    Returns:
        Tuple of (is_valid, list_of_errors)
    """
    if not isinstance(doc, dict):
        return False, ["config must be a JSON object"]
    errors = validate_unknown_keys(doc, TOP_LEVEL_KEYS, 'config')

    # Data source
    d = None
    if 'testbed' in doc:
        if doc['testbed'] not in CATALOGUE:
            errors.append(f"unknown testbed '{doc['testbed']}'")
        else:
            d = CATALOGUE[doc['testbed']].dimension
    if 'testbed' not in doc and 'data_path' not in doc:
        errors.append("one of testbed or data_path is required")

    # Target functions
    functions = doc.get('functions')
    if not isinstance(functions, list) or not functions:
        errors.append("functions must be a non-empty list")
    else:
        for name in functions:
            try:
                parse_target(str(name))
            except DomainError as e:
                errors.append(str(e))

    # Model
    model = doc.get('model', {'kind': 'exact'})
    is_valid, model_errors = validate_model(model, 'testbed' in doc or 'data_path' in doc)
    errors.extend(model_errors)
    model_kind = model.get('kind') if isinstance(model, dict) else None
    if model_kind == 'exact' and 'testbed' not in doc:
        errors.append("an exact model needs a testbed")

    # Budgets
    budgets = doc.get('R')
    if not isinstance(budgets, list) or not budgets:
        errors.append("R must be a non-empty list of budgets")
        budgets = []
    for R in budgets:
        is_valid, error = validate_positive_int(R, 'R')
        if not is_valid:
            errors.append(error)
    budgets = [R for R in budgets if isinstance(R, int) and not isinstance(R, bool)]

    for key in ('repetitions',):
        if key in doc:
            is_valid, error = validate_positive_int(doc[key], key)
            if not is_valid:
                errors.append(error)
    for key in ('alpha', 'pilot_fraction'):
        if key in doc:
            is_valid, error = validate_probability(doc[key], key)
            if not is_valid:
                errors.append(error)
    if 'seed' in doc and (isinstance(doc['seed'], bool) or not isinstance(doc['seed'], int)
                          or doc['seed'] < 0):
        errors.append("seed must be a non-negative integer")

    allocations = doc.get('allocations', ['prop'])
    if not isinstance(allocations, list) or any(a not in ALLOCATIONS for a in allocations):
        errors.append(f"allocations must be a list drawn from {', '.join(ALLOCATIONS)}")
        allocations = []

    # Schemes and the budget they need
    schemes = doc.get('schemes', [{'kind': 'cmc'}])
    if not isinstance(schemes, list) or not schemes:
        errors.append("schemes must be a non-empty list")
        schemes = []
    min_per_stratum = doc.get('min_per_stratum', 2)
    pilot_fraction = doc.get('pilot_fraction', 0.125)
    for scheme in schemes:
        is_valid, scheme_errors = validate_scheme(scheme, d, model_kind)
        errors.extend(scheme_errors)
        if not is_valid or d is None or scheme.get('kind') == 'cmc':
            continue
        m = scheme_strata_count(scheme, d)
        for R in budgets:
            if R < m * min_per_stratum:
                errors.append(f"R={R} is below {min_per_stratum}·m for a {scheme['kind']} "
                              f"scheme with m={m}")
            elif 'opt' in allocations and isinstance(pilot_fraction, (int, float)) \
                    and math.floor(pilot_fraction * R + 0.5) < m * min_per_stratum:
                errors.append(f"pilot budget for R={R} is below {min_per_stratum}·m with m={m}")

    return len(errors) == 0, errors
