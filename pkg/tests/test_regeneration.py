import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from twophase.acceptance import p2_model, theorem11_model, theorem13_model, theorem14_model
from twophase.adversarial import BumpScale, theorem2_generator
from twophase.analytic import onset_hazard, onset_tail
from twophase.model import Constant, IteratedLog, Tabulated, TwoPhaseModel
from twophase.regeneration import (
    Result,
    Source,
    Suggestion,
    classify,
    classify_with_diagnostic,
    divergence_diagnostic,
    make_rng,
    sample_onset,
    sample_onsets,
    simulate_chain,
    simulate_chains,
)


def const(b=1.0, c=0.5, g=1.0):
    return TwoPhaseModel(Constant(b), Constant(c), Constant(g))


# --------------------------------------------------------------------------
# onset sampling

def test_constant_onset_is_exponential():
    m = const()
    d = 1.0 / float(onset_hazard(m, 0.0))
    rng = make_rng(11)
    y = np.array([sample_onset(m, 2.0, rng) for _ in range(20_000)]) - 2.0
    assert np.all(y > 0)
    se = d / math.sqrt(y.size)
    assert abs(y.mean() - d) < 3 * se
    p = math.exp(-1.0)
    assert abs(np.mean(y > d) - p) < 3 * math.sqrt(p * (1 - p) / y.size)


def test_sampler_inverts_the_cumulative_hazard():
    m = theorem13_model(2.0)
    x = m.x0
    y = sample_onsets(m, x, 100_000, make_rng(12)) - x
    for q in (0.1, 0.3, 0.5, 0.7, 0.9):
        probe = float(np.quantile(y, q))
        tail = onset_tail(m, x, probe)
        se = math.sqrt(tail * (1 - tail) / y.size)
        assert abs(np.mean(y > probe) - tail) < 3.5 * se


def test_scalar_and_vector_samplers_agree():
    m = theorem13_model(2.0)
    a = [sample_onset(m, m.x0, make_rng(13)) for _ in range(1)]
    b = sample_onsets(m, m.x0, 1, make_rng(13))
    assert a[0] == pytest.approx(b[0], abs=1e-8)


# --------------------------------------------------------------------------
# onset chain

def test_chain_reproducible_and_increasing():
    m = theorem13_model(2.0)
    c1 = simulate_chain(m, 1000, seed=3)
    c2 = simulate_chain(m, 1000, seed=3)
    assert c1.points.tobytes() == c2.points.tobytes()
    assert np.all(np.diff(c1.points) > 0)
    assert c1.points[0] == m.x0 and c1.n == 1000
    np.testing.assert_allclose(c1.K, c1.points - 1.0)
    assert simulate_chain(m, 1, seed=3).n == 1
    with pytest.raises(ValueError):
        simulate_chain(m, 0)


def test_independent_chains_differ():
    chains = simulate_chains(const(), 10, seed=5, count=3)
    assert len({c.points.tobytes() for c in chains}) == 3


def test_constant_chain_law_of_large_numbers():
    m = const()
    d = 1.0 / float(onset_hazard(m, 0.0))
    var = {}
    for n in (100, 10_000):
        r = np.array([c.points[-1] / n for c in simulate_chains(m, n, seed=6, count=200)])
        assert abs(r.mean() - d) < 4 * r.std(ddof=1) / math.sqrt(r.size)
        var[n] = r.var(ddof=1)
    # Var(L_n / n) = d^2 / n
    assert var[10_000] / var[100] == pytest.approx(0.01, rel=0.3)


def test_chain_growth_band():
    # frozen reference: L_n / (n log n loglog n) along the seed-1 chain
    m = theorem13_model(2.0)
    ch = simulate_chain(m, 1_000_000, seed=1)
    for n in (10_000, 100_000, 1_000_000):
        r = (ch.points[n] - m.x0) / (n * math.log(n) * math.log(math.log(n)))
        assert 0.65 <= r <= 0.75


def test_chain_csv(tmp_path):
    ch = simulate_chain(const(), 5, seed=1)
    p = tmp_path / "c.csv"
    ch.to_csv(p, H=np.ones(6), header_lines=["seed=1"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# seed=1" and lines[1] == "n,L_n,K_n,H,S_n"
    assert lines[-1].split(",")[-1] == "6.0"


# --------------------------------------------------------------------------
# classifier

@pytest.mark.parametrize("model,result,source", [
    (theorem11_model(), Result.RECURRENT, Source.THEOREM1_1),
    (theorem13_model(1.0), Result.RECURRENT, Source.THEOREM1_3I),
    (theorem13_model(0.5), Result.RECURRENT, Source.THEOREM1_3I),
    (theorem13_model(2.0), Result.TRANSIENT, Source.THEOREM1_3II),
    (theorem14_model(1.0), Result.RECURRENT, Source.THEOREM1_4I),
    (theorem14_model(3.0), Result.TRANSIENT, Source.THEOREM1_4II),
    (p2_model(2.0), Result.TRANSIENT, Source.THEOREMP2II),
    (p2_model(2.0, bR=Constant(0.0)), Result.TRANSIENT, Source.THEOREMP2II),
])
def test_classifier_truth_table(model, result, source):
    v = classify(model)
    assert (v.result, v.source) == (result, source)
    assert v.suggestion is None


def test_classifier_near_misses_are_unknown():
    # differs from the boundary family only at depth 4
    bT = IteratedLog(4e6, {2: 0.5, 3: 0.5, 4: 1.0})
    assert classify(TwoPhaseModel(bT, Constant(0.0), Constant(1.0), x0=5e6)).result == Result.UNKNOWN
    # non-unit diffusion coefficient
    m = theorem13_model(2.0).replace(a=2.0)
    assert classify(m).result == Result.UNKNOWN
    # tabulated bR outside the constant-gamma rule with zero bR
    grid = np.linspace(0, 10, 11)
    m = theorem13_model(2.0).replace(bR=Tabulated(grid, np.zeros(11) - 1.0))
    assert classify(m).result == Result.UNKNOWN
    # constant model whose drift after a down-crossing is transient
    assert classify(const(c=0.5)).result == Result.UNKNOWN


def test_verdict_serialization():
    d = classify(theorem11_model()).to_dict()
    assert d["result"] == "Recurrent" and d["source"] == "Theorem1_1"
    assert "suggestion" not in d
    json.dumps(d)


# --------------------------------------------------------------------------
# divergence diagnostic

def test_diagnostic_short_chain_is_inconclusive():
    m = theorem13_model(1.0)
    rep = divergence_diagnostic(m, simulate_chain(m, 1, seed=1))
    assert rep.suggestion == Suggestion.INCONCLUSIVE and rep.heuristic


def test_diagnostic_partial_sums():
    m = theorem13_model(1.0)
    ch = simulate_chain(m, 5000, seed=2)
    r1 = divergence_diagnostic(m, ch)
    r2 = divergence_diagnostic(m, simulate_chain(m, 5000, seed=2))
    assert np.all(np.diff(r1.partial_sums) >= 0)
    assert r1.to_dict() == r2.to_dict()
    assert r1.to_dict()["heuristic"] is True


def test_diagnostic_fallback_is_labelled():
    bT = IteratedLog(4e6, {2: 0.5, 3: 0.5, 4: 1.0})
    v = classify_with_diagnostic(TwoPhaseModel(bT, Constant(0.0), Constant(1.0), x0=5e6), 200, seed=1)
    d = v.to_dict()
    assert d["result"] == "Unknown" and d["heuristic"] is True
    assert d["suggestion"] in {s.value for s in Suggestion}


# --------------------------------------------------------------------------
# bump scale

def test_bump_scale_dominates_square():
    s = BumpScale(1.0, 1.0, 0.0, upper=200.0)
    x = np.linspace(2.0, 200.0, 5001)
    assert np.all(s.U(x) >= x**2)
    for (l, r) in s.intervals[:50]:
        assert s.U(r) >= r**2


@given(st.floats(-5, 150), st.floats(0.001, 3))
def test_bump_scale_derivatives(x, w):
    s = BumpScale(1.0, 1.0, 0.0, upper=200.0)
    pts = [v for v in s.breakpoints() if x < v < x + w]
    area = quad(s.dU, x, x + w, points=pts or None, limit=200, epsabs=0, epsrel=1e-12)[0]
    # t = (x - s_j) j^2 resolves x only to ~eps * x * j^2 on the narrow far bumps
    assert s.U(x + w) - s.U(x) == pytest.approx(area, rel=1e-8)
    assert s.dU(x) >= s.bound * (1 - 1e-12)
    if not s.in_intervals(x):
        assert s.dU(x) == pytest.approx(s.bound, rel=1e-12)
        assert s.drift(x) == pytest.approx(0.0, abs=1e-9)


def test_bump_scale_serialization():
    s = BumpScale(1.0, 2.0, 3.0, upper=50.0)
    d = s.to_dict()
    assert d == {"kind": "bump_profile", "b": 1.0, "gamma": 2.0, "x0": 3.0, "upper": 50.0}
    assert BumpScale(**{k: v for k, v in d.items() if k != "kind"}) == s
    f = theorem2_generator(1.0, 2.0, 3.0, 50.0)
    assert f.to_dict()["scale"] == d
    with pytest.raises(ValueError):
        BumpScale(-1.0, 1.0, 0.0)
