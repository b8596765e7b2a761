import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_frame
from nof1causal import diagnostics as D
from nof1causal import estimands as E
from nof1causal.frame import from_values
from nof1causal.series import Schema, SeriesError, from_arrays

SCH = Schema(("A",), "Y", ("C",))


def series_of(a):
    a = np.asarray(a, dtype=float)
    return from_arrays(SCH, a, np.zeros(len(a)), np.zeros(len(a)))


def brute_force_patterns(a, p):
    """Independent oracle: tuples of every complete window, split at missing values."""
    seen = set()
    for i in range(len(a) - p + 1):
        w = a[i:i + p]
        if not any(np.isnan(w)):
            seen.add(tuple(int(x) for x in w))
    return seen


def test_worked_example():
    rep = D.positivity_report(series_of([0, 0, 1, 0, 1]), "A", 2)
    r = rep.row(2)
    assert r.observed == 3 and r.possible == 4 and r.percentage == 75.0
    assert r.unobserved() == [(1, 1)]
    assert rep.observed_patterns(2) == {(0, 0), (0, 1), (1, 0)}


def test_p1_full_iff_both_values():
    assert D.positivity_report(series_of([0, 1, 1]), "A", 1).row(1).percentage == 100.0
    assert D.positivity_report(series_of([1, 1, 1]), "A", 1).row(1).percentage == 50.0


@given(st.lists(st.sampled_from([0.0, 1.0, np.nan]), min_size=1, max_size=80), st.integers(1, 8))
def test_matches_brute_force(a, maxp):
    rep = D.positivity_report(series_of(a), "A", maxp)
    arr = np.asarray(a)
    for p in range(1, maxp + 1):
        oracle = brute_force_patterns(arr, p)
        assert rep.row(p).observed == len(oracle)
        assert rep.observed_patterns(p) == oracle
    pct = [r.percentage for r in rep.counts]
    assert all(x >= y for x, y in zip(pct, pct[1:]))


def test_count_only_above_twelve():
    a = np.random.default_rng(0).integers(0, 2, 500).astype(float)
    rep = D.positivity_report(series_of(a), "A", 14)
    assert rep.row(13).patterns is None and rep.row(13).unobserved() is None
    assert rep.row(13).observed == len(brute_force_patterns(a, 13))
    with pytest.raises(ValueError):
        rep.observed_patterns(13)
    with pytest.raises(ValueError):
        D.positivity_report(series_of([0, 1]), "A", 21)


def test_non_binary_column_rejected():
    s = from_arrays(SCH, np.array([0, 1, 0.0]), np.array([0.1, 2.5, 3.0]), np.zeros(3))
    with pytest.raises(SeriesError, match="not binary"):
        D.positivity_report(s, "Y", 2)


def test_positivity_serialisation():
    rep = D.positivity_report(series_of([0, 0, 1, 0, 1]), "A", 3)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "p,observed,possible,percentage,unobserved"
    assert lines[2] == "2,3,4,75.0,11"
    d = rep.to_dict()
    assert d["durations"][1]["unobserved"] == ["11"]


def ar_frame(b1=-0.9, rho=0.7, n=80):
    return from_values(SCH, {"Y": {"beta1": b1, "rho": rho}}, n)


def test_impulse_pure_ar_geometric():
    imp = D.impulse_impact(ar_frame(), 10, 12)
    np.testing.assert_allclose(imp.estimate, -0.9 * 0.7 ** np.arange(13), atol=1e-10, rtol=0)


def test_impulse_q0_is_ce_and_step_q0_too():
    f = random_frame(np.random.default_rng(1), n=30)
    assert D.impulse_impact(f, 5, 4).estimate[0] == E.contemporaneous_effect(f, 5)
    assert D.step_response(f, 5, 4).estimate[0] == E.contemporaneous_effect(f, 5)


@given(st.integers(0, 10_000))
def test_step_is_cumulative_impulse_on_constant_frames(seed):
    f = random_frame(np.random.default_rng(seed), n=40, constant=True)
    imp = D.impulse_impact(f, 5, 15)
    step = D.step_response(f, 5, 15)
    np.testing.assert_allclose(step.estimate, np.cumsum(imp.estimate), atol=1e-10, rtol=0)


def test_step_pure_ar_partial_geometric_sums():
    step = D.step_response(ar_frame(), 10, 30)
    q = np.arange(31)
    np.testing.assert_allclose(step.estimate, -0.9 * (1 - 0.7 ** (q + 1)) / 0.3, atol=1e-10)
    assert np.all(np.diff(step.estimate) < 0)
    assert step.estimate[-1] == pytest.approx(-0.9 / 0.3, rel=1e-4)


def test_zero_coefficients_give_zero_series():
    f = from_values(SCH, {"Y": {"rho": 0.5, "beta_C": 0.3}, "C": {"rho_C": 0.4, "mu2": 0.3}}, 40)
    assert not D.impulse_impact(f, 5, 10).estimate.any()
    assert not D.step_response(f, 5, 10).estimate.any()
    strats = [(1, 1, 1, 0, 0, 0, 0), (0, 1, 0, 1, 0, 1, 0)]
    gens = D.general_response(f, 5, strats)
    assert all(not g.estimate.any() for g in gens) and len(gens) == len(strats)


def test_fraction_lags():
    out = D.fraction_lags(np.array([0.1, 0.5, 0.79, 0.85, 0.96, 1.0]))
    assert out == {"lag_80pct": 3, "lag_95pct": 4}
    assert D.fraction_lags(np.zeros(3)) == {"lag_80pct": None, "lag_95pct": None}
    step = D.step_response(ar_frame(), 10, 30)
    # 80% of the maximum of -0.9 (1-0.7^(q+1))/0.3 is reached at the first q with 0.7^(q+1) <= ~0.2
    target = np.abs(step.estimate).max()
    expect = int(np.argmax(np.abs(step.estimate) >= 0.8 * target))
    assert step.summary["lag_80pct"] == expect


def test_general_response_ones_equals_step():
    f = random_frame(np.random.default_rng(2), n=40)
    gen = D.general_response(f, 5, [(1,) * 6], tail=3)[0]
    step = D.step_response(f, 5, 5)
    np.testing.assert_allclose(gen.estimate[:6], step.estimate, atol=1e-12)
    assert len(gen.estimate) == 9


def test_general_response_paper_strategies():
    f = random_frame(np.random.default_rng(3), n=60, se=0.05)
    strats = [(1, 1, 1, 0, 0, 0, 0), (0, 1, 0, 1, 0, 1, 0), (1, 0, 0, 1, 0, 0, 1)]
    gens = D.general_response(f, 10, strats, K=200)
    assert [g.label for g in gens] == ["1110000", "0101010", "1001001"]
    text = D.responses_to_csv(gens)
    assert len(text.splitlines()) == 1 + 3 * 14
    for g in gens:
        assert np.all(g.lower <= g.estimate) and np.all(g.estimate <= g.upper)


def test_general_response_errors():
    f = ar_frame()
    with pytest.raises(E.EstimandError, match="same length"):
        D.general_response(f, 10, [(1, 0), (1, 0, 1)])
    with pytest.raises(E.EstimandError):
        D.impulse_impact(f, 75, 10)
