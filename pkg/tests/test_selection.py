"""
Unit tests for coordinate selection in selected-dims schemes.
"""

import numpy as np
import pytest

from estimation.flow import IdentityMap
from estimation.selection import select_high_variance_dims, select_random_dims
from utils.errors import BudgetTooSmallError, DomainError
from utils.sampling import RngStream

# ============================================================================
# Test: Random selection
# ============================================================================


@pytest.mark.unit
def test_random_dims_are_sorted_and_distinct(rng):
    dims = select_random_dims(10, 3, rng)
    assert dims == sorted(set(dims))
    assert len(dims) == 3
    assert all(0 <= i < 10 for i in dims)


@pytest.mark.unit
def test_random_dims_are_reproducible():
    assert select_random_dims(30, 3, RngStream(5)) == select_random_dims(30, 3, RngStream(5))


@pytest.mark.fast
def test_random_dims_are_uniform():
    draws = 10_000
    counts = np.zeros(30)
    root = RngStream(8)
    for i in range(draws):
        counts[select_random_dims(30, 3, root.spawn(i))] += 1
    np.testing.assert_allclose(counts / draws, 0.1, atol=0.01)


@pytest.mark.unit
@pytest.mark.parametrize("eta", [0, 5])
def test_random_dims_reject_bad_eta(eta, rng):
    with pytest.raises(DomainError):
        select_random_dims(4, eta, rng)


# ============================================================================
# Test: Pilot-based selection
# ============================================================================


@pytest.mark.unit
def test_constant_target_ties_break_to_lower_index(rng):
    chosen = select_high_variance_dims(IdentityMap(5), lambda x: np.ones(len(x)), 5, 3, 2,
                                       R0=64, rng=rng)
    assert chosen == [0, 1, 2]


@pytest.mark.fast
def test_stratifying_the_active_coordinate_gives_the_smallest_pilot_sd(rng):
    # splitting x0 removes most of the pilot variance, so x0 ranks last
    chosen = select_high_variance_dims(IdentityMap(3), lambda x: x[:, 0], 3, 3, 4, rng=rng)
    assert chosen[-1] == 0
    assert sorted(chosen[:2]) == [1, 2]


@pytest.mark.unit
def test_pilot_selection_is_reproducible():
    f = lambda x: x[:, 0] ** 2 + 2 * x[:, 3]
    first = select_high_variance_dims(IdentityMap(4), f, 4, 2, 2, R0=128, rng=RngStream(3))
    second = select_high_variance_dims(IdentityMap(4), f, 4, 2, 2, R0=128, rng=RngStream(3))
    assert first == second


@pytest.mark.unit
def test_pilot_selection_rejects_small_budget(rng):
    with pytest.raises(BudgetTooSmallError):
        select_high_variance_dims(IdentityMap(3), lambda x: x[:, 0], 3, 1, 8, R0=15, rng=rng)
    with pytest.raises(DomainError):
        select_high_variance_dims(IdentityMap(3), lambda x: x[:, 0], 3, 4, 2, rng=rng)
