"""Regeneration chain of onset locations, classifier and divergence diagnostic.

Given the onset location ``x`` of one cycle, the next onset location has
tail ``exp(-int_x^{x+y} hazard)``.  Chains are sampled exactly by inverting
the cumulative hazard: with ``Gamma_n`` the partial sums of standard
exponentials, ``L_n = Lambda^{-1}(Lambda(x0) + Gamma_n)``, which is the same
as iterating :func:`sample_onset` on the same exponential stream.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .analytic import HazardTable, constant_case, criterion_H, onset_hazard
from .errors import AnchorViolation, HazardUnderflow, ModelError, TwoPhaseError
from .model import Constant, IteratedLog, TwoPhaseModel, _tails, is_reflecting, validate_model


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# --------------------------------------------------------------------------
# sampling

def sample_onset(m: TwoPhaseModel, x: float, rng: np.random.Generator,
                 table: HazardTable | None = None, ceiling: float = 1e15) -> float:
    """Next onset location after ``x``: solves ``int_x^{x+Y} hazard = E``, ``E ~ Exp(1)``.

    The root is bracketed by doubling from ``E / hazard(x)`` and refined with
    Brent's method to ``1e-10`` in ``Y``.  Constant drift and down-crossing
    size use the closed-form inverse.
    """
    e = rng.standard_exponential()
    if constant_case(m):
        return x + e / float(onset_hazard(m, x))
    if table is None or table.start != x:
        table = HazardTable(m, x)
    lam0 = table.first_hazard
    hi = e / lam0 if lam0 > 0 else 1.0
    if not math.isfinite(hi):
        raise HazardUnderflow(f"hazard underflows at {x}")
    f = lambda y: table.cumulative(x + y) - e
    while f(hi) < 0:
        hi *= 2.0
        if hi > ceiling:
            raise HazardUnderflow(f"cumulative hazard stays below {e} up to {x + ceiling}")
    return x + brentq(f, 0.0, hi, xtol=1e-10, rtol=4 * np.finfo(float).eps)


def sample_onsets(m: TwoPhaseModel, x: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent next-onset locations after ``x`` (vectorized inverse transform)."""
    e = rng.standard_exponential(n)
    if constant_case(m):
        return x + e / float(onset_hazard(m, x))
    return np.asarray(HazardTable(m, x).invert(e))


@dataclass
class ChainTrajectory:
    """Onset locations ``L_0 = x0 < L_1 < ... < L_n`` and ``K_n = L_n - gamma(L_n)``."""

    x0: float
    points: np.ndarray
    seed: object
    K: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return len(self.points) - 1

    def to_csv(self, path, H: np.ndarray | None = None, header_lines=()) -> None:
        H = np.full(len(self.points), np.nan) if H is None else np.asarray(H)
        S = np.cumsum(H)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "L_n", "K_n", "H", "S_n"])
            for i, (l, k, h, s) in enumerate(zip(self.points, self.K, H, S)):
                w.writerow([i, repr(float(l)), repr(float(k)), repr(float(h)), repr(float(s))])


def simulate_chain(m: TwoPhaseModel, n: int, seed=0, rng: np.random.Generator | None = None) -> ChainTrajectory:
    """``n`` steps of the onset chain from ``x0``; deterministic given ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed) if rng is None else rng
    gam = np.cumsum(rng.standard_exponential(n))
    if constant_case(m):
        d = 1.0 / float(onset_hazard(m, m.x0))
        pts = m.x0 + d * gam
    else:
        table = HazardTable(m, m.x0)
        try:
            pts = np.asarray(table.invert(gam))
        except HazardUnderflow as exc:
            bad = int(np.searchsorted(gam, table.cum[-1]))
            raise HazardUnderflow(f"chain step {bad + 1}: {exc}") from None
    points = np.concatenate([[m.x0], pts])
    return ChainTrajectory(m.x0, points, seed, points - np.asarray(m.gamma(points)))


def simulate_chains(m: TwoPhaseModel, n: int, seed: int, count: int) -> list[ChainTrajectory]:
    """Independent chains on disjoint streams spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [simulate_chain(m, n, seed=(seed, i), rng=np.random.Generator(np.random.PCG64(s)))
            for i, s in enumerate(children)]


# --------------------------------------------------------------------------
# classifier

class Result(str, enum.Enum):
    RECURRENT = "Recurrent"
    TRANSIENT = "Transient"
    UNKNOWN = "Unknown"


class Source(str, enum.Enum):
    THEOREM1_1 = "Theorem1_1"
    THEOREM1_3I = "Theorem1_3i"
    THEOREM1_3II = "Theorem1_3ii"
    THEOREM1_4I = "Theorem1_4i"
    THEOREM1_4II = "Theorem1_4ii"
    THEOREMP2II = "TheoremP2ii"
    DIAGNOSTIC = "Diagnostic"


class Suggestion(str, enum.Enum):
    RECURRENT = "SuggestsRecurrent"
    TRANSIENT = "SuggestsTransient"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Verdict:
    result: Result
    source: Source | None
    detail: str
    suggestion: Suggestion | None = None

    def to_dict(self) -> dict:
        out = {
            "result": self.result.value,
            "source": self.source.value if self.source else None,
            "detail": self.detail,
        }
        if self.suggestion is not None:
            out["suggestion"] = self.suggestion.value
            out["heuristic"] = True
        return out


# Relative tolerance for treating two coefficients as equal.
COEF_RTOL = 1e-12


def _leading_difference(coefs: dict[int, float], reference: dict[int, float]):
    """Depth and sign of the first differing iterated-log coefficient, or (None, 0)."""
    for j in sorted(set(coefs) | set(reference)):
        c, r = coefs.get(j, 0.0), reference.get(j, 0.0)
        if abs(c - r) > COEF_RTOL * max(abs(c), abs(r), 1e-300):
            return j, (1 if c > r else -1)
    return None, 0


def _threshold_rule(coefs, reference, transient_depths):
    """Compare ``f = sum c_j log^(j)`` with the boundary family.

    The boundary ``reference`` sits at ``k = 1``; transience needs ``k > 1``
    in the coefficient at depth ``max(transient_depths)``.  Returns
    ``"below"`` (f <= boundary for large x), ``"above"`` (f >= the family
    for some k > 1) or ``None``.
    """
    depth, sign = _leading_difference(coefs, reference)
    if depth is None or sign < 0:
        return "below"
    if depth in transient_depths:
        return "above"
    return None


def _is_zero(fn) -> bool:
    return isinstance(fn, Constant) and fn.value == 0.0


def classify(m: TwoPhaseModel) -> Verdict:
    """Match the model against the recurrence/transience theorems.

    Only exact hypothesis matches produce a definitive verdict; everything
    else is ``Unknown``.  Iterated-log families are compared through their
    coefficients in order of increasing depth (the first differing
    coefficient decides the sign of the difference for large ``x``).
    """
    try:
        report = validate_model(m)
    except TwoPhaseError as exc:
        return Verdict(Result.UNKNOWN, None, f"model does not validate: {exc}")
    if report.transient_condition.value == "Fail":
        return Verdict(Result.UNKNOWN, None, "bT fails the transient integral conditions")

    gamma_const = isinstance(m.gamma, Constant)
    a = m.a
    if a != 1.0:
        return Verdict(Result.UNKNOWN, None, "theorem families are stated for unit diffusion coefficient")

    # constant transient drift, constant gamma, bR v 0 recurrent
    if gamma_const and isinstance(m.bT, Constant) and m.bT.value > 0 and not is_reflecting(m.bR):
        left, right = _tails(m.bR, a, positive_part=True)
        if left.divergent is True and right.divergent is True:
            return Verdict(Result.RECURRENT, Source.THEOREM1_1,
                           "constant gamma, constant positive bT, positive part of bR recurrent")

    # checked first: it holds for every bR, so it is the stronger statement
    if gamma_const and isinstance(m.bT, IteratedLog):
        g = m.gamma.value
        ref = {1: 1 / (2 * g), 2: 1 / g}
        depth, sign = _leading_difference(m.bT.coefficients(), ref)
        if sign > 0 and depth in (1, 2):
            return Verdict(Result.TRANSIENT, Source.THEOREMP2II,
                           "bT >= (1/2g) log x + (k/g) log2 x, k > 1: down-crossings stop, any bR")

    if gamma_const and _is_zero(m.bR) and isinstance(m.bT, IteratedLog):
        g = m.gamma.value
        ref = {2: 1 / (2 * g), 3: 1 / (2 * g)}
        rule = _threshold_rule(m.bT.coefficients(), ref, {1, 2, 3})
        if rule == "below":
            return Verdict(Result.RECURRENT, Source.THEOREM1_3I,
                           "bT <= (1/2g) log2 x + (1/2g) log3 x for large x")
        if rule == "above":
            return Verdict(Result.TRANSIENT, Source.THEOREM1_3II,
                           "bT >= (1/2g) log2 x + (k/2g) log3 x, k > 1, for large x")

    if isinstance(m.bT, Constant) and m.bT.value > 0 and _is_zero(m.bR) and isinstance(m.gamma, IteratedLog):
        b = m.bT.value
        ref = {2: 1 / (2 * b), 3: 1 / (2 * b)}
        rule = _threshold_rule(m.gamma.coefficients(), ref, {1, 2, 3})
        if rule == "below":
            return Verdict(Result.RECURRENT, Source.THEOREM1_4I,
                           "gamma <= (1/2b) log2 x + (1/2b) log3 x for large x")
        if rule == "above":
            return Verdict(Result.TRANSIENT, Source.THEOREM1_4II,
                           "gamma >= (1/2b) log2 x + (k/2b) log3 x, k > 1, for large x")

    return Verdict(Result.UNKNOWN, None, "no theorem hypothesis matches")


# --------------------------------------------------------------------------
# divergence diagnostic

@dataclass(frozen=True)
class DiagnosticConfig:
    """Thresholds of the heuristic; none of them come with a guarantee."""

    min_points: int = 100
    r2_threshold: float = 0.99
    fit_span: float = 1000.0
    tail_threshold: float = 1e-3
    recurrent_max_exponent: float = 1.05
    checkpoints: int = 60
    tail_bins: int = 20


@dataclass
class DivergenceReport:
    checkpoints: np.ndarray
    partial_sums: np.ndarray
    H: np.ndarray
    log_fit_slope: float
    log_fit_intercept: float
    log_fit_r2: float
    fit_range: tuple
    growth_exponent: float
    tail_exponent: float
    tail_estimate: float
    suggestion: Suggestion
    heuristic: bool = True

    def to_dict(self) -> dict:
        return {
            "heuristic": True,
            "suggestion": self.suggestion.value,
            "checkpoints": [int(v) for v in self.checkpoints],
            "partial_sums": [float(v) for v in self.partial_sums],
            "log_fit": {"slope": self.log_fit_slope, "intercept": self.log_fit_intercept,
                        "r2": self.log_fit_r2, "range": list(self.fit_range)},
            "growth_exponent": self.growth_exponent,
            "tail_exponent": self.tail_exponent,
            "tail_estimate": self.tail_estimate,
        }


def _linfit(x, y):
    if len(x) < 3:
        return math.nan, math.nan, math.nan
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else math.nan
    return float(slope), float(intercept), float(r2)


def divergence_diagnostic(m: TwoPhaseModel, chain: ChainTrajectory,
                          cfg: DiagnosticConfig = DiagnosticConfig()) -> DivergenceReport:
    """Heuristic look at ``S_N = sum_{n <= N} H(L_n)`` along a sampled chain.

    * ``SuggestsTransient`` when the extrapolated tail ``sum_{n > N} H(L_n)``
      (power law fitted to the last decade) is below ``tail_threshold``;
    * ``SuggestsRecurrent`` when ``S_N`` is linear in ``log N`` over
      ``[N / fit_span, N]`` with ``R^2 > r2_threshold``, positive slope and
      a tail exponent not clearly above 1;
    * ``Inconclusive`` otherwise, and always for fewer than ``min_points``.
    """
    K = chain.points - np.asarray(m.gamma(chain.points))
    if np.any(K <= m.z0):
        raise AnchorViolation("every L_n - gamma(L_n) must exceed z0")
    H = np.asarray(criterion_H(m, chain.points), dtype=float)
    S = np.cumsum(H)
    n_pts = len(H)
    N = np.arange(1, n_pts + 1)
    cps = np.unique(np.round(np.logspace(0, math.log10(n_pts), cfg.checkpoints)).astype(int))
    nan = math.nan
    if n_pts < cfg.min_points:
        return DivergenceReport(cps, S[cps - 1], H, nan, nan, nan, (1, n_pts), nan, nan, nan,
                                Suggestion.INCONCLUSIVE)
    lo = max(1, int(n_pts / cfg.fit_span))
    sel = cps[cps >= lo]
    slope, intercept, r2 = _linfit(np.log(sel), S[sel - 1])
    # growth of L_n over the last two decades
    gsel = cps[cps >= max(2, n_pts // 100)]
    growth = _linfit(np.log(gsel), np.log(np.maximum(chain.points[gsel - 1] - chain.x0, 1e-300)))[0]
    # tail exponent from binned medians of H over the last decade
    start = max(1, n_pts // 10)
    edges = np.unique(np.round(np.logspace(math.log10(start), math.log10(n_pts), cfg.tail_bins + 1)).astype(int))
    xs, ys = [], []
    for l, r in zip(edges[:-1], edges[1:]):
        block = H[l - 1:r - 1]
        med = np.median(block) if block.size else 0.0
        if med > 0:
            xs.append(math.log(0.5 * (l + r)))
            ys.append(math.log(med))
    if len(xs) >= 3:
        p = -_linfit(np.array(xs), np.array(ys))[0]
        level = math.exp(np.polyval(np.polyfit(xs, ys, 1), math.log(n_pts)))
        tail = level * n_pts / (p - 1.0) if p > 1.0 else math.inf
    else:
        p, tail = nan, nan
    if tail < cfg.tail_threshold:
        sug = Suggestion.TRANSIENT
    elif r2 > cfg.r2_threshold and slope > 0 and p <= cfg.recurrent_max_exponent:
        sug = Suggestion.RECURRENT
    else:
        sug = Suggestion.INCONCLUSIVE
    return DivergenceReport(cps, S[cps - 1], H, slope, intercept, r2, (lo, n_pts), growth, p, tail, sug)


def classify_with_diagnostic(m: TwoPhaseModel, chain_length: int, seed=0,
                             cfg: DiagnosticConfig = DiagnosticConfig()) -> Verdict:
    """Theorem verdict, falling back to the chain heuristic when no theorem applies."""
    v = classify(m)
    if v.result != Result.UNKNOWN:
        return v
    chain = simulate_chain(m, chain_length, seed)
    rep = divergence_diagnostic(m, chain, cfg)
    return Verdict(Result.UNKNOWN, Source.DIAGNOSTIC,
                   f"no theorem applies; heuristic over {chain_length} chain steps", rep.suggestion)
