"""Acceptance suite shared by the test-suite and ``twophase verify``.

Each ``criterion_*`` function runs one check at its stated budget and
returns a :class:`CriterionResult`; Monte Carlo criteria also return the raw
numbers they produced so that re-runs can be compared bit for bit.  ``budget``
scales every sample size (1.0 is the acceptance budget; smaller values are
only for smoke runs and are not meaningful as acceptance).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .adversarial import theorem2_generator
from .analytic import closed_forms, damping, exit_time_limit, exit_time_vN, hitting_prob
from .model import Constant, IteratedLog, Tabulated, TwoPhaseModel
from .regeneration import (
    Result,
    Source,
    Suggestion,
    classify,
    divergence_diagnostic,
    make_rng,
    sample_onset,
    simulate_chain,
)
from .simulate import PathConfig, estimate_speed, hitting_monte_carlo, sample_cycles, sample_onsets_pathwise

DEFAULT_SEED = 20240917
CHAIN_THRESHOLD = 16.0  # every iterated logarithm up to depth 3 is positive here
CHAIN_X0 = 20.0


@dataclass
class CriterionResult:
    key: str
    title: str
    passed: bool
    measured: dict
    target: str
    numbers: dict = field(default_factory=dict, repr=False)
    seconds: float = 0.0

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.key} {self.title}: {shown} (target {self.target})"

    def to_dict(self) -> dict:
        return {"criterion": self.key, "title": self.title, "passed": bool(self.passed),
                "measured": {k: _plain(v) for k, v in self.measured.items()},
                "target": self.target, "seconds": self.seconds}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _scaled(n: int, budget: float, floor: int = 10) -> int:
    return max(floor, int(round(n * budget)))


# --------------------------------------------------------------------------
# reference models

def constant_model(b=1.0, c=0.5, gamma=1.0, a=1.0, x0=0.0) -> TwoPhaseModel:
    return TwoPhaseModel(Constant(b), Constant(c), Constant(gamma), a=a, x0=x0)


def theorem11_model() -> TwoPhaseModel:
    return TwoPhaseModel(Constant(1.0), Constant(0.0), Constant(1.0), x0=0.0)


def theorem13_model(k: float, gamma: float = 1.0) -> TwoPhaseModel:
    bT = IteratedLog(CHAIN_THRESHOLD, {2: 1 / (2 * gamma), 3: k / (2 * gamma)})
    return TwoPhaseModel(bT, Constant(0.0), Constant(gamma), x0=CHAIN_X0)


def theorem14_model(k: float, b: float = 1.0) -> TwoPhaseModel:
    g = IteratedLog(CHAIN_THRESHOLD, {2: 1 / (2 * b), 3: k / (2 * b)})
    return TwoPhaseModel(Constant(b), Constant(0.0), g, x0=CHAIN_X0)


def p2_model(k: float = 2.0, gamma: float = 1.0, bR=None) -> TwoPhaseModel:
    bT = IteratedLog(CHAIN_THRESHOLD, {1: 1 / (2 * gamma), 2: k / gamma})
    return TwoPhaseModel(bT, bR if bR is not None else Constant(-3.0), Constant(gamma), x0=CHAIN_X0)


def hitting_model() -> TwoPhaseModel:
    """``bT = 1`` and ``bR(x) = 1 / (2 (1 + |x|))`` tabulated finely, ``z0 = 0``."""
    grid = np.linspace(-2.0, 8.0, 4001)
    return TwoPhaseModel(Constant(1.0), Tabulated(grid, 0.5 / (1.0 + np.abs(grid))), Constant(1.0),
                         x0=7.0, z0=0.0)


def generator_model(b=1.0, gamma=1.0, x0=0.0) -> TwoPhaseModel:
    return TwoPhaseModel(Constant(b), theorem2_generator(b, gamma, x0), Constant(gamma), x0=x0)


# --------------------------------------------------------------------------
# criteria

def criterion_1(**_) -> CriterionResult:
    worst = 0.0
    grid = np.geomspace(0.25, 4.0, 5)
    for b in grid:
        for c in grid:
            for g in grid:
                for a in (0.5, 1.0, 2.0):
                    cf = closed_forms(b, c, g, a)
                    lhs = cf.damping * b * (cf.expected_sigma + cf.expected_return)
                    worst = max(worst, abs(lhs - cf.expected_L_increment) / cf.expected_L_increment)
    return CriterionResult("1", "closed-form identity grid", worst <= 1e-12,
                           {"max_rel_error": worst, "cases": 375}, "max_rel_error <= 1e-12")


def criterion_2(seed=DEFAULT_SEED, parallel=1, budget=1.0, **_) -> CriterionResult:
    m = constant_model()
    cfg = PathConfig(dt=1e-3, horizon=2000.0, seed=seed + 2, bridge_correction=True)
    est = estimate_speed(m, cfg, _scaled(100, budget, 2), parallel=parallel)
    err = abs(est.terminal - 0.88080)
    return CriterionResult("2", "speed reproduction", err <= 0.02,
                           {"estimate": est.terminal, "ci_halfwidth": est.terminal_halfwidth,
                            "closed_form": est.closed_form, "abs_error": err},
                           "|estimate - 0.88080| <= 0.02",
                           {"per_replicate": est.per_replicate.tolist(), "regenerative": est.regenerative})


def criterion_3a(seed=DEFAULT_SEED, budget=1.0, **_) -> CriterionResult:
    m = constant_model()
    d = closed_forms(1.0, 0.5, 1.0).expected_L_increment
    rng = make_rng(seed + 3)
    n = _scaled(100_000, budget, 100)
    draws = np.array([sample_onset(m, m.x0, rng) for _ in range(n)]) - m.x0
    res = stats.kstest(draws, stats.expon(scale=d).cdf)
    return CriterionResult("3a", "onset law, analytic sampler KS", res.pvalue > 0.01,
                           {"draws": n, "ks_statistic": float(res.statistic), "p_value": float(res.pvalue),
                            "mean": float(draws.mean())},
                           "KS p-value > 0.01 against exponential(mean 3.19453)",
                           {"sum": float(draws.sum()), "statistic": float(res.statistic)})


def criterion_3b(seed=DEFAULT_SEED, parallel=1, budget=1.0, **_) -> CriterionResult:
    m = constant_model()
    cfg = PathConfig(dt=1e-3, horizon=1000.0, seed=seed + 31, bridge_correction=True)
    L, _sigma = sample_onsets_pathwise(m, cfg, _scaled(10_000, budget), parallel=parallel)
    censored = int(np.isnan(L).sum())
    mean = float(np.nanmean(L - m.x0))
    rel = abs(mean - 3.19453) / 3.19453
    return CriterionResult("3b", "onset law, pathwise mean", rel <= 0.05 and censored == 0,
                           {"mean": mean, "rel_error": rel, "censored": censored},
                           "mean within 5% of 3.19453",
                           {"L": L.tolist()})


def criterion_4(seed=DEFAULT_SEED, parallel=1, budget=1.0, **_) -> CriterionResult:
    m = constant_model()
    cfg = PathConfig(dt=1e-3, horizon=10_000.0, seed=seed + 4, bridge_correction=True)
    reps = _scaled(100, budget, 2)
    tab = sample_cycles(m, cfg, 100, replicates=reps, parallel=parallel).complete()
    ms, mt = float(tab.sigma.mean()), float(tab.tau_hat.mean())
    es, et = abs(ms - 2.19453) / 2.19453, abs(mt - 1.43233) / 1.43233
    return CriterionResult("4", "cycle expectations", es <= 0.03 and et <= 0.03 and len(tab.sigma) >= reps * 100,
                           {"cycles": len(tab.sigma), "mean_sigma": ms, "mean_tau_hat": mt,
                            "rel_err_sigma": es, "rel_err_tau_hat": et},
                           "both within 3% (targets 2.19453, 1.43233)",
                           {"sigma": tab.sigma.tolist(), "tau_hat": tab.tau_hat.tolist()})


def criterion_5a(**_) -> CriterionResult:
    worst = 0.0
    for z0, z, c in ((0.0, 5.0, 1.0), (-1.0, 0.5, 3.0), (2.0, 2.25, 0.1), (0.0, 100.0, 7.5)):
        m = TwoPhaseModel(Constant(0.0), Constant(0.0), Constant(1.0), x0=max(z, z0 + 3), z0=z0)
        exact = c / ((z - z0) + c)
        worst = max(worst, abs(float(hitting_prob(m, z, c)) - exact))
    return CriterionResult("5a", "driftless hitting probability", worst <= 1e-9,
                           {"max_abs_error": worst}, "abs error <= 1e-9")


def criterion_5b(seed=DEFAULT_SEED, parallel=1, budget=1.0, **_) -> CriterionResult:
    m = hitting_model()
    est = hitting_monte_carlo(m, 5.0, 1.0, _scaled(100_000, budget, 100), dt=1e-4, seed=seed + 5,
                              bridge_correction=True, parallel=parallel)
    gap = abs(est.analytic - est.probability)
    return CriterionResult("5b", "hitting probability vs Monte Carlo",
                           gap <= 2 * est.standard_error and est.censored == 0,
                           {"quadrature": est.analytic, "monte_carlo": est.probability,
                            "standard_error": est.standard_error, "gap_in_se": gap / est.standard_error,
                            "censored": est.censored},
                           "|quadrature - MC| <= 2 SE",
                           {"probability": est.probability, "se": est.standard_error})


def criterion_6(**_) -> CriterionResult:
    tab_gamma = Tabulated(np.linspace(0.0, 100.0, 11), np.full(11, 1.0))
    cases = [
        ("constant bT, bR = 0", theorem11_model(), Result.RECURRENT, Source.THEOREM1_1),
        ("iterated-log bT, k=1", theorem13_model(1.0), Result.RECURRENT, Source.THEOREM1_3I),
        ("iterated-log bT, k=2", theorem13_model(2.0), Result.TRANSIENT, Source.THEOREM1_3II),
        ("iterated-log gamma, k=1", theorem14_model(1.0), Result.RECURRENT, Source.THEOREM1_4I),
        ("iterated-log gamma, k=2", theorem14_model(2.0), Result.TRANSIENT, Source.THEOREM1_4II),
        ("log bT above the stopping family, bR=-3", p2_model(bR=Constant(-3.0)), Result.TRANSIENT, Source.THEOREMP2II),
        ("log bT above the stopping family, bR=0", p2_model(bR=Constant(0.0)), Result.TRANSIENT, Source.THEOREMP2II),
        ("non-matching", TwoPhaseModel(Constant(1.0), Constant(0.0), tab_gamma, x0=10.0), Result.UNKNOWN, None),
    ]
    wrong = []
    for name, m, res, src in cases:
        v = classify(m)
        if v.result != res or v.source != src:
            wrong.append(f"{name}: got {v.result.value}/{v.source}")
    return CriterionResult("6", "classifier truth table", not wrong,
                           {"cases": len(cases), "mismatches": "; ".join(wrong) or "none"}, "all rows match")


def criterion_7a(seed=DEFAULT_SEED, budget=1.0, **_) -> CriterionResult:
    m = theorem11_model()
    n = _scaled(1_000_000, budget, 1000)
    rep = divergence_diagnostic(m, simulate_chain(m, n, seed=seed + 7))
    ok = rep.log_fit_r2 > 0.99 and rep.log_fit_slope > 0
    return CriterionResult("7a", "recurrent chain, S_N vs log N", ok,
                           {"r2": rep.log_fit_r2, "slope": rep.log_fit_slope, "fit_range": str(rep.fit_range),
                            "suggestion": rep.suggestion.value},
                           "R^2 > 0.99 over N in [1e3, 1e6]",
                           {"S": rep.partial_sums.tolist()})


def criterion_7b(seed=DEFAULT_SEED, budget=1.0, **_) -> CriterionResult:
    m = theorem13_model(2.0)
    n = _scaled(1_000_000, budget, 1000)
    rep = divergence_diagnostic(m, simulate_chain(m, n, seed=seed + 71))
    ok = rep.tail_estimate < 1e-3 and rep.suggestion == Suggestion.TRANSIENT
    return CriterionResult("7b", "transient iterated-log chain, tail sum", ok,
                           {"tail_estimate": rep.tail_estimate, "tail_exponent": rep.tail_exponent,
                            "suggestion": rep.suggestion.value},
                           "tail sum beyond N=1e6 < 1e-3 and SuggestsTransient",
                           {"S": rep.partial_sums.tolist()})


def criterion_8(seed=DEFAULT_SEED, budget=1.0, **_) -> CriterionResult:
    m = generator_model()
    scale = m.bR.scale
    x = np.linspace(2.0, 1000.0, 2_000_001)
    margin = float(np.min(scale.U(x) - x * x))
    off = ~scale.in_intervals(x)
    du_excess = float(np.max(scale.dU(x[off])) - scale.bound)
    rep = divergence_diagnostic(m, simulate_chain(m, _scaled(100_000, budget, 1000), seed=seed + 8))
    ok = margin >= 0 and du_excess <= 1e-12 * scale.bound and rep.suggestion == Suggestion.TRANSIENT
    return CriterionResult("8", "adversarial bump generator", ok,
                           {"min_u_minus_x2": margin, "max_du_off_intervals_minus_bound": du_excess,
                            "suggestion": rep.suggestion.value, "tail_estimate": rep.tail_estimate},
                           "u >= x^2 on [2,1e3], u' <= bound off the intervals, SuggestsTransient",
                           {"S": rep.partial_sums.tolist()})


def criterion_9(**_) -> CriterionResult:
    a, b, c, g = 1.0, 1.0, 0.5, 1.0
    lim = exit_time_limit(a, b, c, g)
    gaps = {N: abs(float(exit_time_vN(a, b, c, g, N, 0.0)) - lim) for N in (5, 10, 20)}
    ok = gaps[20] <= 1e-8 and gaps[5] > gaps[10] > gaps[20]
    return CriterionResult("9", "exit-time solver", ok,
                           {"limit": lim, "gap_5": gaps[5], "gap_10": gaps[10], "gap_20": gaps[20]},
                           "gap at N=20 <= 1e-8 and gaps decreasing")


def criterion_10(**_) -> CriterionResult:
    worst = 0.0
    for b in (0.1, 1.0, 3.0):
        for g in (0.5, 1.0, 2.0):
            for a in (0.5, 1.0, 2.0):
                x = 2 * b * g / a
                formula = (math.exp(x) - 1) / (math.exp(x) + math.exp(-x) - 2)
                worst = max(worst, abs(damping(b, math.inf, g, a) - formula) / formula)
    sentinel = damping(1.0, math.inf, 1.0, 1.0)
    rel_c = abs(damping(1.0, 1e6, 1.0, 1.0) - sentinel) / sentinel
    b = 1e-3
    small = abs(damping(b, math.inf, 1.0, 1.0) * b - (1.0 / 2.0 + b / 2))
    ok = worst <= 1e-12 and rel_c <= 1e-4 and small <= 1e-4
    return CriterionResult("10", "reflecting limit", ok,
                           {"sentinel_vs_formula": worst, "c1e6_rel": rel_c, "small_b_error": small,
                            "damping_inf": sentinel},
                           "formula match, c=1e6 within 1e-4 relative, expansion within 1e-4")


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3a": criterion_3a, "3b": criterion_3b, "4": criterion_4,
    "5a": criterion_5a, "5b": criterion_5b, "6": criterion_6, "7a": criterion_7a, "7b": criterion_7b,
    "8": criterion_8, "9": criterion_9, "10": criterion_10,
}
MONTE_CARLO = ("2", "3a", "3b", "4", "5b", "7a", "7b", "8")
PARALLEL = ("2", "3b", "4", "5b")


class Suite:
    """Lazily evaluated criteria with cached results."""

    def __init__(self, seed: int = DEFAULT_SEED, parallel: int = 4, budget: float = 1.0):
        self.seed, self.parallel, self.budget = seed, parallel, budget
        self.results: dict[str, CriterionResult] = {}

    def run(self, key: str, parallel: int | None = None) -> CriterionResult:
        t = time.perf_counter()
        res = CRITERIA[key](seed=self.seed, budget=self.budget,
                            parallel=self.parallel if parallel is None else parallel)
        res.seconds = time.perf_counter() - t
        return res

    def get(self, key: str) -> CriterionResult:
        if key not in self.results:
            self.results[key] = self.run(key)
        return self.results[key]

    def determinism(self) -> CriterionResult:
        """Re-run every Monte Carlo criterion; parallel ones are re-run serially."""
        t = time.perf_counter()
        differ = []
        for key in MONTE_CARLO:
            first = self.get(key)
            again = self.run(key, parallel=1 if key in PARALLEL else None)
            if again.numbers != first.numbers or again.measured != first.measured:
                differ.append(key)
        res = CriterionResult("11", "determinism", not differ,
                              {"rerun": ",".join(MONTE_CARLO), "parallel_vs_serial": ",".join(PARALLEL),
                               "workers": self.parallel, "differing": ",".join(differ) or "none"},
                              "identical numbers on re-run; parallel equals serial")
        res.seconds = time.perf_counter() - t
        self.results["11"] = res
        return res

    def run_all(self, echo=print) -> list[CriterionResult]:
        out = []
        for key in CRITERIA:
            r = self.get(key)
            echo(r.line())
            out.append(r)
        r = self.determinism()
        echo(r.line())
        out.append(r)
        return out
