import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from ocpose import kernels


def brute_edt_sq(mask):
    fg = np.argwhere(mask)
    h, w = mask.shape
    out = np.full((h, w), np.inf)
    for r in range(h):
        for c in range(w):
            if len(fg):
                out[r, c] = ((fg[:, 0] - r) ** 2 + (fg[:, 1] - c) ** 2).min()
    return out


EDT_IMPLS = [pytest.param(kernels.edt_sq_numpy, id="numpy")]
LSA_IMPLS = [pytest.param(kernels.linear_assignment_numpy, id="numpy")]
if kernels.HAVE_NUMBA:
    EDT_IMPLS.append(pytest.param(kernels.edt_sq_numba, id="numba"))
    LSA_IMPLS.append(pytest.param(kernels.linear_assignment_numba, id="numba"))


@pytest.mark.parametrize("edt", EDT_IMPLS)
@pytest.mark.parametrize("seed", range(20))
def test_edt_matches_brute_force(edt, seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 24, size=2)
    mask = rng.random((h, w)) < rng.choice([0.01, 0.05, 0.3])
    np.testing.assert_array_equal(edt(mask), brute_edt_sq(mask))


@pytest.mark.parametrize("edt", EDT_IMPLS)
def test_edt_empty_and_full(edt):
    assert np.isinf(edt(np.zeros((3, 4), bool))).all()
    np.testing.assert_array_equal(edt(np.ones((3, 4), bool)), np.zeros((3, 4)))


@pytest.mark.parametrize("edt", EDT_IMPLS)
def test_edt_single_row_and_column(edt):
    row = np.array([[0, 0, 1, 0, 0, 0, 1]], bool)
    np.testing.assert_array_equal(edt(row), brute_edt_sq(row))
    np.testing.assert_array_equal(edt(row.T), brute_edt_sq(row.T))


def brute_assignment_cost(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("lsa", LSA_IMPLS)
@pytest.mark.parametrize("seed", range(30))
def test_assignment_is_optimal(lsa, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    cost = rng.random((n, n))
    if seed % 3 == 0:
        cost = np.round(cost * 2) / 2  # plenty of ties
    cols = lsa(cost)
    assert sorted(cols.tolist()) == list(range(n))
    assert cost[np.arange(n), cols].sum() == pytest.approx(brute_assignment_cost(cost), abs=1e-12)


@pytest.mark.parametrize("lsa", LSA_IMPLS)
def test_assignment_agrees_with_scipy_on_larger_instances(lsa):
    rng = np.random.default_rng(1)
    for n in (10, 25, 60):
        cost = rng.random((n, n))
        r, c = linear_sum_assignment(cost)
        cols = lsa(cost)
        assert cost[np.arange(n), cols].sum() == pytest.approx(cost[r, c].sum(), abs=1e-9)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba missing")
def test_backends_pick_identical_assignments():
    rng = np.random.default_rng(7)
    for n in (1, 5, 17, 40):
        cost = np.round(rng.random((n, n)) * 4) / 4
        np.testing.assert_array_equal(
            kernels.linear_assignment_numba(cost), kernels.linear_assignment_numpy(cost)
        )


def test_dispatch_rejects_non_square():
    with pytest.raises(ValueError):
        kernels.linear_assignment(np.zeros((2, 3)))
    assert kernels.linear_assignment(np.zeros((0, 0))).shape == (0,)


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("OCPOSE_DISABLE_NUMBA", "1")
    assert kernels._env_disabled()
    monkeypatch.setenv("OCPOSE_DISABLE_NUMBA", "0")
    assert not kernels._env_disabled()
