import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import random_frame
from nof1causal import closedform as cf
from nof1causal import estimands as E
from nof1causal.frame import CoefficientFrame, from_values
from nof1causal.series import Schema

SCH = Schema(("A",), "Y", ("C",))
TABLE2 = {"Y": {"beta1": -1.15, "beta2": -0.72, "beta_C": -0.01, "rho": 0.63},
          "C": {"mu1": -0.78, "mu2": -0.01}}


def frame(values, n=40, **kw):
    return from_values(SCH, values, n, **kw)


def ar_frame(b1, rho, n=200):
    return frame({"Y": {"beta1": b1, "rho": rho}}, n)


def test_ce_value_and_zero():
    assert E.contemporaneous_effect(frame(TABLE2), 10) == -1.15
    assert E.contemporaneous_effect(frame({}), 10) == 0.0


def test_lde():
    f = frame(TABLE2)
    assert E.lag_structural_direct_effect(f, 10, 1) == -0.72
    assert E.lag_structural_direct_effect(f, 10, 3) == 0.0
    assert E.lag_structural_direct_effect(frame({}), 10, 1) == 0.0
    with pytest.raises(E.EstimandError):
        E.lag_structural_direct_effect(f, 10, 0)


def test_le1_plugin_value():
    expect = -0.72 + (-0.01) * (-0.78) + 0.63 * (-1.15) + (-0.01) * (-0.01) * (-1.15)
    assert expect == pytest.approx(-1.436815, abs=1e-12)
    assert E.lag_effect(frame(TABLE2), 10, 1) == pytest.approx(expect, abs=1e-14)


@pytest.mark.parametrize("q", range(1, 8))
def test_pure_ar_lag_effect(q):
    f = ar_frame(-0.8, 0.6)
    assert E.lag_effect(f, 50, q) == pytest.approx(0.6 ** q * -0.8, abs=1e-14)


def test_pure_ar_time_varying_uses_origin_beta1():
    b1 = np.linspace(-1, 0, 100)
    f = frame({"Y": {"beta1": b1, "rho": 0.5}}, 100)
    assert E.lag_effect(f, 60, 4) == pytest.approx(0.5 ** 4 * b1[60 - 4 - 1], abs=1e-14)


@given(st.integers(0, 100_000))
def test_le2_term_by_term_on_constant_frames(seed):
    f = random_frame(np.random.default_rng(seed), constant=True)
    assert E.lag_effect(f, 8, 2) == pytest.approx(cf.le2_literal(f, 8, "A"), abs=1e-12)
    assert E.propagate_linear_system(f, 8, 2) == pytest.approx(cf.le2_literal(f, 8, "A"), abs=1e-12)


@given(st.integers(0, 100_000), st.integers(1, 3))
def test_corrected_closed_forms_match_recursion_time_varying(seed, ncov):
    f = random_frame(np.random.default_rng(seed), covariates=tuple(f"C{i}" for i in range(ncov)))
    t = 9
    assert cf.le1(f, t, "A") == pytest.approx(E.propagate_linear_system(f, t, 1), abs=1e-12)
    assert cf.le2(f, t, "A") == pytest.approx(E.propagate_linear_system(f, t, 2), abs=1e-12)
    assert cf.te1(f, t, "A") == pytest.approx(E.propagate_linear_system(f, t, 1, [1, 1]), abs=1e-12)
    assert cf.te2(f, t, "A") == pytest.approx(E.propagate_linear_system(f, t, 2, [1, 1, 1]), abs=1e-12)


def test_printed_forms_disagree_when_time_varying():
    # the literal subscripts only matter when coefficients move
    f = random_frame(np.random.default_rng(7))
    assert abs(cf.le2_literal(f, 9, "A") - E.propagate_linear_system(f, 9, 2)) > 1e-6
    assert abs(cf.te2_literal(f, 9, "A") - E.propagate_linear_system(f, 9, 2, [1, 1, 1])) > 1e-6


def test_recursion_q0_is_ce():
    f = random_frame(np.random.default_rng(1))
    assert E.propagate_linear_system(f, 5, 0) == E.contemporaneous_effect(f, 5)


@given(st.integers(0, 100_000))
def test_consistency_web(seed):
    f = random_frame(np.random.default_rng(seed), n=15)
    t = 10
    assert E.total_effect(f, t, 0) == E.contemporaneous_effect(f, t)
    for q in range(1, 5):
        assert E.general_effect(f, t, [1] * (q + 1)) == pytest.approx(E.total_effect(f, t, q), abs=1e-12)
        assert E.general_effect(f, t, [0] * (q + 1)) == 0.0
    assert E.general_effect(f, t, (1, 1)) == pytest.approx(E.total_effect(f, t, 1), abs=1e-12)
    assert E.cumulative_direct_effect(f, t) == pytest.approx(
        E.contemporaneous_effect(f, t) + E.lag_structural_direct_effect(f, t + 1, 1), abs=1e-15)


def test_te1_constant_frame_is_ce_plus_le1():
    f = random_frame(np.random.default_rng(3), constant=True)
    assert E.total_effect(f, 6, 1) == pytest.approx(E.contemporaneous_effect(f, 6) + E.lag_effect(f, 6, 1), abs=1e-15)


def test_total_effect_zero_exposure_coefficients():
    f = frame({"Y": {"rho": 0.5, "beta_C": 0.3}, "C": {"rho_C": 0.2, "mu2": 0.4}})
    for q in range(4):
        assert E.total_effect(f, 20, q) == 0.0


def test_general_effect_errors():
    f = frame(TABLE2)
    with pytest.raises(E.EstimandError):
        E.general_effect(f, 10, [1, 2])
    with pytest.raises(E.EstimandError):
        E.general_effect(f, 10, [])


def test_cumde_values():
    assert E.cumulative_direct_effect(frame(TABLE2), 10) == pytest.approx(-1.87)
    assert E.cumulative_direct_effect(frame({}), 10) == 0.0
    with pytest.raises(Exception):
        E.cumulative_direct_effect(frame(TABLE2), 40)


@pytest.mark.parametrize("h", [1, 5, 30])
def test_cumoe_geometric(h):
    b1, rho = -0.8, 0.6
    res = E.cumulative_overall_effect(ar_frame(b1, rho), 10, h, tol=0.0)
    assert res.value == pytest.approx(b1 * (1 - rho ** (h + 1)) / (1 - rho), abs=1e-13)
    assert res.truncation_lag == h


def test_cumoe_ce_only_and_truncation():
    res = E.cumulative_overall_effect(ar_frame(-0.8, 0.0), 10, 20)
    assert res.value == -0.8 and res.truncation_lag == 1
    f = random_frame(np.random.default_rng(2), n=300, constant=True, scale=0.3)
    a = E.cumulative_overall_effect(f, 10, 50).value
    b = E.cumulative_overall_effect(f, 10, 100).value
    assert a == pytest.approx(b, abs=1e-6)
    with pytest.raises(E.EstimandError):
        E.cumulative_overall_effect(f, 290, 20)


def test_lag_effects_decay_on_stable_constant_frame():
    rng = np.random.default_rng(9)
    f = random_frame(rng, n=120, constant=True, scale=0.4)
    path = np.abs(E.response_path(f, 10, [1.0], 110))
    # envelope (running max from the right) decays and the tail vanishes
    env = np.maximum.accumulate(path[::-1])[::-1]
    assert np.all(np.diff(env[10:]) <= 1e-15)
    assert env[-1] < 1e-6


def test_interval_degenerate_without_covariance():
    f = frame(TABLE2)
    assert E.estimate(f, E.Request("LE", q=1), 10) == (E.lag_effect(f, 10, 1),) * 3


def test_ce_interval_half_width_matches_gaussian_quantile():
    se = 0.2
    f = frame(TABLE2, se={"Y": {"beta1": se}})
    est, lo, hi = E.estimate(f, E.Request("CE"), 10, level=0.9, K=100_000, seed=1)
    z = stats.norm.ppf(0.95)
    assert (hi - lo) / 2 == pytest.approx(z * se, rel=0.05)
    assert lo <= est <= hi


def test_interval_contains_point_estimate():
    f = random_frame(np.random.default_rng(4), se=0.3)
    for req in [E.Request("LE", q=2), E.Request("TE", q=3), E.Request("GE", strategy=(1, 0, 1))]:
        est, lo, hi = E.estimate(f, req, 9, K=200)
        assert lo <= est <= hi


def test_batched_evaluation_matches_loop():
    f = random_frame(np.random.default_rng(5), se=0.2)
    draws = f.draw(np.random.default_rng(0), 7, 1, 12)
    batched = E.lag_effect(draws, 10, 3)
    for k in range(7):
        single = CoefficientFrame(draws.schema, draws.dag, draws.start,
                                  {r: type(m)(m.response, m.role, m.columns, m.names, m.mean[k], None, m.noise_var)
                                   for r, m in draws.models.items()})
        assert batched[k] == pytest.approx(E.lag_effect(single, 10, 3), abs=1e-14)


def test_request_validation():
    with pytest.raises(E.EstimandError):
        E.Request("XX")
    with pytest.raises(E.EstimandError):
        E.Request("LE")
    with pytest.raises(E.EstimandError):
        E.Request("GE")
    r = E.Request("GE", strategy=[0, 1, 0, 1])
    assert r.q == 3 and r.label() == "GE(0101)"
    assert E.Request("cumOE").horizon == 30


def test_estimand_series_admissible_range_and_serialisation():
    f = frame(TABLE2, n=30, se={"Y": {"beta1": 0.1}})
    s = E.estimand_series(f, E.Request("LE", q=2), K=100)
    assert s.t[0] == 3 and s.t[-1] == 30
    assert np.all(s.lower <= s.estimate) and np.all(s.estimate <= s.upper)
    lines = s.to_csv().splitlines()
    assert lines[0] == "t,name,q,estimate,lower,upper" and len(lines) == 29
    d = json.loads(json.dumps(s.to_dict()))
    assert d["label"] == "LE2"
    with pytest.raises(E.EstimandError, match="outside admissible"):
        E.estimand_series(f, E.Request("LE", q=2), times=[2])


def test_multiple_exposures_estimated_per_column():
    sch = Schema(("calls", "texts"), "Y", ("C",))
    f = from_values(sch, {"Y": {"beta11": -0.3, "beta21": -1.15, "beta22": -0.72, "rho": 0.63}}, 20)
    assert E.contemporaneous_effect(f, 5, "texts") == -1.15
    assert E.contemporaneous_effect(f, 5, "calls") == -0.3
    assert E.lag_effect(f, 5, 1, "texts") == pytest.approx(-0.72 + 0.63 * -1.15)
    with pytest.raises(E.EstimandError):
        E.contemporaneous_effect(f, 5, "nope")
