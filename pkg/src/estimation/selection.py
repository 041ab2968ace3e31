"""
Choosing which coordinates a selected-dims scheme splits
"""

import logging
from typing import List

import numpy as np

from estimation.estimators import TargetFn, proportional_estimate
from estimation.strata import build_selected_dims
from utils.errors import BudgetTooSmallError, DomainError
from utils.sampling import RngStream

logger = logging.getLogger(__name__)

DEFAULT_PILOT_PER_DIM = 2 ** 10


def select_random_dims(d: int, eta: int, rng: RngStream) -> List[int]:
    """eta distinct coordinates drawn uniformly, returned sorted."""
    if eta < 1 or eta > d:
        raise DomainError(f"cannot select {eta} of {d} coordinates")
    picked = rng.generator.choice(d, size=eta, replace=False)
    return sorted(int(i) for i in picked)


def select_high_variance_dims(transport, f: TargetFn, d: int, eta: int, m0: int,
                              R0: int = DEFAULT_PILOT_PER_DIM,
                              rng: RngStream = None) -> List[int]:
    """
    Rank coordinates by the sd of a proportional pilot that splits only that
    coordinate into m0 strata; keep the eta largest in decreasing order, ties to the lower index.

    Splitting a coordinate f depends on shrinks that pilot's sd, so for f = x₀
    coordinate 0 ranks last, not first.

    Coordinate b's pilot draws from rng.spawn("dim", b).
    """
    if eta < 1 or eta > d:
        raise DomainError(f"cannot select {eta} of {d} coordinates")
    if R0 < 2 * m0:
        raise BudgetTooSmallError(f"pilot size R0={R0} is below 2·m0={2 * m0}")
    rng = rng if rng is not None else RngStream(0)
    sds = np.empty(d)
    for b in range(d):
        scheme = build_selected_dims(d, [b], m0)
        sds[b] = proportional_estimate(scheme, transport, f, R0, rng.spawn("dim", b)).sd
    order = np.lexsort((np.arange(d), -sds))
    chosen = [int(i) for i in order[:eta]]
    logger.debug(f"pilot sds per coordinate: {sds.tolist()}; chose {chosen}")
    return chosen
