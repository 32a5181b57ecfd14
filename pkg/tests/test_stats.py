import math

import numpy as np
import pytest

from sartbench.geometry import Rng
from sartbench.stats import (
    regularized_incomplete_beta,
    t_two_sided_p,
    welch_t_test,
)

# Reference values computed with scipy.stats.ttest_ind(equal_var=False).
SPEC_A = [0.9, 0.8, 0.85, 0.9, 0.88]
SPEC_B = [0.1, 0.2, 0.15, 0.12, 0.18]
SPEC_T = 27.139909960124744
SPEC_P = 3.6882349303104488e-09

# Published two-sample data (Welch's test worked example).
WORKED_A = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6,
            23.1, 19.6, 19.0, 21.7, 21.4]
WORKED_B = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2,
            21.9, 22.1, 22.9, 30.3, 23.8, 26.5]
WORKED_T = -3.041761030284205
WORKED_DF = 28.431753502520408
WORKED_P = 0.005015633020420212


def sig4(x):
    return float(f"{x:.4g}")


def test_worked_example_matches_reference_to_4_sig_figs():
    r = welch_t_test(WORKED_A, WORKED_B)
    assert sig4(r.t) == sig4(WORKED_T)
    assert sig4(r.df) == sig4(WORKED_DF)
    assert sig4(r.p_value) == sig4(WORKED_P)


def test_spec_example_smaller_than_point_001():
    r = welch_t_test(SPEC_A, SPEC_B)
    assert r.p_value < 0.001
    assert sig4(r.t) == sig4(SPEC_T)
    assert sig4(r.p_value) == sig4(SPEC_P)


def test_identical_samples_give_p_one():
    r = welch_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
    assert r.t == 0.0
    assert r.p_value == 1.0


def test_degenerate_equal_means():
    r = welch_t_test([0.4, 0.4, 0.4], [0.4, 0.4])
    assert r.p_value == 1.0


def test_degenerate_unequal_means():
    r = welch_t_test([0.4, 0.4], [0.9, 0.9, 0.9])
    assert r.p_value == 0.0
    assert math.isinf(r.t)


def test_requires_two_observations():
    with pytest.raises(ValueError):
        welch_t_test([0.5], [0.4, 0.3])


def test_p_in_unit_interval_fuzz_10k():
    rng = Rng(99)
    for _ in range(10_000):
        n1 = int(rng.integers(2, 12))
        n2 = int(rng.integers(2, 12))
        a = rng.uniform(0, 1, n1)
        b = rng.uniform(0, 1, n2)
        r = welch_t_test(a, b)
        assert 0.0 <= r.p_value <= 1.0


def test_incomplete_beta_against_scipy():
    scipy_special = pytest.importorskip("scipy.special")
    rng = Rng(7)
    for _ in range(500):
        a = rng.uniform(0.1, 20)
        b = rng.uniform(0.1, 20)
        x = rng.uniform(0, 1)
        mine = regularized_incomplete_beta(a, b, x)
        ref = float(scipy_special.betainc(a, b, x))
        assert abs(mine - ref) <= 1e-10


def test_t_tail_against_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = Rng(8)
    for _ in range(300):
        t = rng.uniform(-6, 6)
        df = rng.uniform(1, 60)
        mine = t_two_sided_p(t, df)
        ref = 2.0 * float(scipy_stats.t.sf(abs(t), df))
        assert abs(mine - ref) <= 1e-10


def test_incomplete_beta_edges():
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        regularized_incomplete_beta(-1.0, 2.0, 0.5)
