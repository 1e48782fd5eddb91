import math

import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from twophase.errors import AnchorViolation, GammaInadmissible, MalformedDrift, ModelError
from twophase.model import (
    Condition,
    Constant,
    IteratedLog,
    Mode,
    Tabulated,
    TwoPhaseModel,
    check_gamma,
    function_from_dict,
    iterated_log,
    is_reflecting,
    validate_model,
)

finite = st.floats(-5, 5, allow_nan=False)


def model(**kw):
    base = dict(bT=Constant(1.0), bR=Constant(0.0), gamma=Constant(1.0))
    base.update(kw)
    return TwoPhaseModel(**base)


# --------------------------------------------------------------------------
# drift functions

@given(st.floats(16.0, 1e12), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_iterated_log_equals_sum_of_terms(x, c1, c2, c3):
    f = IteratedLog(16.0, {1: c1, 2: c2, 3: c3})
    direct = c1 * math.log(x) + c2 * math.log(math.log(x)) + c3 * math.log(math.log(math.log(x)))
    assert f(x) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_iterated_log_constant_below_threshold_and_continuous():
    f = IteratedLog(16.0, [(2, 0.5), (3, 1.0)])
    at = 0.5 * iterated_log(16.0, 2) + iterated_log(16.0, 3)
    assert f(3.0) == f(-50.0) == pytest.approx(at, rel=1e-14)
    assert f(16.0 + 1e-9) == pytest.approx(at, rel=1e-9)


def test_iterated_log_needs_positive_logs_at_threshold():
    with pytest.raises(MalformedDrift):
        IteratedLog(math.e**math.e, {3: 1.0})  # log^(3) is exactly 0 there
    with pytest.raises(MalformedDrift):
        IteratedLog(2.0, {2: 1.0})
    with pytest.raises(MalformedDrift):
        IteratedLog(16.0, {2: 1.0}, below=5.0)


def test_tabulated_interpolation_and_constant_extrapolation():
    f = Tabulated((0.0, 1.0, 3.0), (1.0, 3.0, -1.0))
    assert f(0.5) == pytest.approx(2.0)
    assert f(2.0) == pytest.approx(1.0)
    assert f(-10.0) == 1.0 and f(10.0) == -1.0
    with pytest.raises(MalformedDrift):
        Tabulated((0.0, 0.0, 1.0), (1.0, 2.0, 3.0))
    with pytest.raises(MalformedDrift):
        Tabulated((0.0,), (1.0,))
    with pytest.raises(MalformedDrift):
        Tabulated((0.0, 1.0), (1.0, math.inf))


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=12), st.floats(-8, 8), st.floats(-8, 8))
def test_tabulated_antiderivative_matches_trapezoid(vals, s, t):
    xs = np.linspace(-4, 4, len(vals))
    f = Tabulated(tuple(xs), tuple(vals))
    lo, hi = min(s, t), max(s, t)
    grid = np.unique(np.concatenate([[lo, hi], xs[(xs > lo) & (xs < hi)]]))
    trap = trapezoid(f(grid), grid)
    assert f.antiderivative(hi) - f.antiderivative(lo) == pytest.approx(trap, abs=1e-10)


# --------------------------------------------------------------------------
# down-crossing functions

def test_gamma_checks():
    with pytest.raises(GammaInadmissible):
        check_gamma(Constant(-1.0), (0, 10))
    with pytest.raises(GammaInadmissible):
        check_gamma(Tabulated((0.0, 1.0, 2.0), (1.0, 2.5, 2.6)), (0, 2))  # slope 1.5
    with pytest.raises(GammaInadmissible):
        check_gamma(Tabulated((0.0, 1.0), (1.0, 0.0)), (0, 1))
    checks = dict(check_gamma(Tabulated((0.0, 10.0), (1.0, 5.0)), (0, 10)))
    assert "heuristic" in checks["x-gamma->inf"]


@given(st.floats(0.05, 3), st.floats(0, 3), st.lists(st.floats(16, 1e9), min_size=2, max_size=50, unique=True))
def test_x_minus_gamma_increasing_for_admissible_iterated_log(c2, c3, pts):
    g = IteratedLog(16.0, {2: c2, 3: c3})
    check_gamma(g, (16, 1e9))
    x = np.sort(np.asarray(pts))
    assert np.all(np.diff(x - g(x)) > 0)


# --------------------------------------------------------------------------
# models and validation

def test_default_anchor():
    m = model(gamma=Constant(2.0), x0=3.0)
    assert m.z0 == 3.0 - 2.0 - 1.0


def test_transient_and_recurrent_conditions_for_constants():
    rep = validate_model(model())
    assert rep.transient_condition == Condition.PASS
    assert rep.recurrent_condition == Condition.PASS
    assert rep.ok
    rep = validate_model(model(bT=Constant(-1.0), bR=Constant(0.5)))
    assert rep.transient_condition == Condition.FAIL
    assert rep.recurrent_condition == Condition.FAIL


def test_tabulated_drift_conditions_undetermined():
    f = Tabulated(tuple(np.linspace(0, 10, 11)), tuple(np.linspace(0, 1, 11)))
    rep = validate_model(model(bR=f))
    assert rep.recurrent_condition == Condition.UNDETERMINED


def test_iterated_log_conditions_exact():
    rep = validate_model(model(bT=IteratedLog(16.0, {2: 0.5, 3: 1.0}), x0=20.0))
    assert rep.transient_condition == Condition.PASS


def test_validation_is_pure():
    m = model(bT=IteratedLog(16.0, {2: 0.5, 3: 1.0}), x0=20.0)
    assert validate_model(m) == validate_model(m)
    assert validate_model(m).to_dict() == validate_model(m).to_dict()


def test_validation_errors():
    with pytest.raises(AnchorViolation):
        validate_model(model(z0=-1.0))
    with pytest.raises(MalformedDrift):
        validate_model(model(bT=Constant(math.nan)))
    with pytest.raises(ModelError):
        validate_model(model(a=0.0))
    with pytest.raises(GammaInadmissible):
        validate_model(model(gamma=Constant(0.0), z0=-5.0))


def test_reflecting_sentinel():
    m = model(bR=Constant(math.inf))
    assert is_reflecting(m.bR)
    rep = validate_model(m)
    assert rep.reflecting and rep.recurrent_condition == Condition.FAIL


def test_mode_follows_two_phase_rule():
    m = model()
    assert m.mode(0.0, 0.0) == Mode.TRANSIENT_PHASE
    assert m.mode(-1.0, 0.0) == Mode.RECURRENT_PHASE
    assert m.mode(-0.999, 0.0) == Mode.TRANSIENT_PHASE
    assert m.drift(-2.0, 0.0) == 0.0 and m.drift(0.5, 1.0) == 1.0


@st.composite
def functions(draw):
    kind = draw(st.sampled_from(["constant", "iterated_log", "tabulated"]))
    if kind == "constant":
        return Constant(draw(finite))
    if kind == "iterated_log":
        depths = draw(st.lists(st.integers(1, 3), min_size=1, max_size=3, unique=True))
        return IteratedLog(draw(st.floats(16, 100)), {d: draw(finite) for d in depths})
    n = draw(st.integers(2, 8))
    return Tabulated(tuple(np.cumsum(draw(st.lists(st.floats(0.1, 2), min_size=n, max_size=n)))),
                     tuple(draw(st.lists(finite, min_size=n, max_size=n))))


@given(functions(), functions(), st.floats(0.1, 4), st.floats(-10, 10))
def test_model_round_trip(bT, bR, a, x0):
    m = TwoPhaseModel(bT, bR, Constant(1.0), a=a, x0=x0)
    again = TwoPhaseModel.from_dict(m.to_dict())
    assert again == m
    assert again.to_dict() == m.to_dict()


def test_function_from_dict_errors():
    with pytest.raises(MalformedDrift):
        function_from_dict({"kind": "spline"})
    with pytest.raises(MalformedDrift):
        function_from_dict({"kind": "constant"})
    assert function_from_dict({"kind": "iterated_log", "threshold": 16, "terms": {"2": 0.5}}) == \
        IteratedLog(16.0, {2: 0.5})
