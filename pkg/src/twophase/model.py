"""Domain types: drift phases, down-crossing functions and model instances.

A drift phase and a down-crossing function are both real functions of
position, so they share the same three parametric shapes:

* :class:`Constant`
* :class:`IteratedLog` -- ``sum_j c_j log^(j)(x)`` above a threshold,
  constant below it
* :class:`Tabulated` -- piecewise linear, constant beyond the grid

Drifts may additionally be given through their scale function
(:class:`FromScale`).  All instances are immutable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import AnchorViolation, GammaInadmissible, MalformedDrift, ModelError


def iterated_log(x, depth: int):
    """``log`` applied ``depth`` times (``depth >= 1``)."""
    y = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        for _ in range(depth):
            y = np.log(y)
    return y if y.ndim else float(y)


def iterated_log_derivative(x, depth: int):
    """d/dx log^(depth)(x) = 1 / (x * log x * ... * log^(depth-1) x)."""
    x = np.asarray(x, dtype=float)
    denom = x.copy()
    y = x
    for _ in range(depth - 1):
        y = np.log(y)
        denom = denom * y
    out = 1.0 / denom
    return out if out.ndim else float(out)


def _as_output(values, x):
    return values if np.ndim(x) else float(values)


@dataclass(frozen=True)
class Constant:
    value: float

    kind = "constant"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return _as_output(np.full(x.shape, float(self.value)), x)

    def breakpoints(self) -> np.ndarray:
        return np.empty(0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": float(self.value)}


@dataclass(frozen=True)
class IteratedLog:
    """``sum(c * log^(j)(x))`` for ``x >= threshold``, constant below.

    ``terms`` is a sequence of ``(depth, coefficient)`` pairs or a mapping
    ``{depth: coefficient}``.  The constant
    used below the threshold defaults to the value at the threshold, which is
    the only choice that keeps the function continuous.
    """

    threshold: float
    terms: tuple
    below: float | None = None

    kind = "iterated_log"

    def __post_init__(self):
        raw = self.terms.items() if isinstance(self.terms, dict) else self.terms
        terms = tuple((int(j), float(c)) for j, c in raw)
        if not terms:
            raise MalformedDrift("IteratedLog needs at least one term")
        for j, c in terms:
            if j < 1:
                raise MalformedDrift(f"log depth must be >= 1, got {j}")
            if not math.isfinite(c):
                raise MalformedDrift(f"non-finite coefficient {c}")
        thr = float(self.threshold)
        depth = max(j for j, _ in terms)
        y = thr
        for j in range(1, depth + 1):
            if not y > 0:
                raise MalformedDrift(f"log^({j}) undefined at threshold {thr}")
            y = math.log(y)
            if not y > 0:
                raise MalformedDrift(
                    f"log^({j}) must be positive at the threshold {thr}"
                )
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "threshold", thr)
        at_thr = self._above(np.array([thr]))[0]
        if self.below is None:
            object.__setattr__(self, "below", float(at_thr))
        elif abs(float(self.below) - at_thr) > 1e-12 * max(1.0, abs(at_thr)):
            raise MalformedDrift(
                f"value below threshold ({self.below}) must equal the value at "
                f"the threshold ({at_thr}) for continuity"
            )
        else:
            object.__setattr__(self, "below", float(self.below))

    def coefficients(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for j, c in self.terms:
            out[j] = out.get(j, 0.0) + c
        return out

    def _above(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros_like(x)
        for j, c in self.terms:
            total += c * iterated_log(x, j)
        return total

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        out = np.full(xa.shape, self.below)
        hi = xa >= self.threshold
        if np.any(hi):
            out[hi] = self._above(xa[hi])
        return _as_output(out, x)

    def derivative(self, x):
        xa = np.asarray(x, dtype=float)
        out = np.zeros(xa.shape)
        hi = xa >= self.threshold
        for j, c in self.terms:
            out[hi] += c * iterated_log_derivative(xa[hi], j)
        return _as_output(out, x)

    def breakpoints(self) -> np.ndarray:
        return np.array([self.threshold])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "terms": [[j, c] for j, c in self.terms],
        }


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear interpolation, constant extrapolation beyond the grid."""

    grid: tuple
    values: tuple

    kind = "tabulated"

    def __post_init__(self):
        grid = tuple(float(v) for v in self.grid)
        values = tuple(float(v) for v in self.values)
        if len(grid) < 2 or len(grid) != len(values):
            raise MalformedDrift("Tabulated needs >= 2 grid points and matching values")
        g = np.array(grid)
        if not np.all(np.isfinite(g)) or not np.all(np.diff(g) > 0):
            raise MalformedDrift("Tabulated grid must be finite and strictly increasing")
        if not np.all(np.isfinite(values)):
            raise MalformedDrift("Tabulated values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def xs(self) -> np.ndarray:
        return np.asarray(self.grid)

    @property
    def ys(self) -> np.ndarray:
        return np.asarray(self.values)

    def __call__(self, x):
        return _as_output(np.interp(np.asarray(x, dtype=float), self.xs, self.ys), x)

    def antiderivative(self, x):
        """Exact integral of the interpolant from ``grid[0]`` to ``x``."""
        xs, ys = self.xs, self.ys
        xa = np.asarray(x, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])
        k = np.clip(np.searchsorted(xs, xa, side="right") - 1, 0, len(xs) - 2)
        inside = np.clip(xa, xs[0], xs[-1])
        dx = inside - xs[k]
        slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        out = cum[k] + ys[k] * dx + 0.5 * slope * dx * dx
        out = out + ys[0] * np.minimum(xa - xs[0], 0.0) + ys[-1] * np.maximum(xa - xs[-1], 0.0)
        return _as_output(out, x)

    def breakpoints(self) -> np.ndarray:
        return self.xs

    def to_dict(self) -> dict:
        return {"kind": self.kind, "grid": list(self.grid), "values": list(self.values)}


class Provenance(enum.Enum):
    CLOSED_FORM = "ClosedForm"
    QUADRATURE = "Quadrature"


class ScaleData:
    """Scale function ``u`` of a drift, anchored so that ``u(z0) = 0``.

    ``u'`` is positive and ``u`` strictly increasing.  Scale functions are
    only defined up to a positive factor; scales built from a drift use
    ``u'(z0) = 1``.  Subclasses provide ``log_du`` (``log u'``) and ``ratio``
    (``u / u'``); every other quantity is derived from these two, which keeps
    evaluation finite when ``u'`` itself would overflow.
    """

    z0: float
    domain: tuple[float, float]
    provenance: Provenance
    a: float = 1.0
    #: Divergence of the scale at -inf / +inf if known analytically.
    left_divergent: bool | None = None
    right_divergent: bool | None = None

    def log_du(self, x):
        raise NotImplementedError

    def ratio(self, x):
        raise NotImplementedError

    def drift(self, x):
        """Drift recovered from the scale: ``-(a/2) (log u')'``."""
        raise NotImplementedError

    def du(self, x):
        from .errors import DomainTooLarge

        ld = np.asarray(self.log_du(x))
        if np.any(np.abs(ld) > 700):
            raise DomainTooLarge("u' leaves the double range; use shifted increments")
        return np.exp(ld) if ld.ndim else float(np.exp(ld))

    def u(self, x):
        r = np.asarray(self.ratio(x)) * np.asarray(self.du(x))
        return r if r.ndim else float(r)

    def breakpoints(self) -> np.ndarray:
        return np.empty(0)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FromScale:
    """A drift specified through its scale function."""

    scale: ScaleData

    kind = "from_scale"

    def __call__(self, x):
        return self.scale.drift(x)

    def breakpoints(self) -> np.ndarray:
        return self.scale.breakpoints()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale.to_dict()}


DriftFunction = Union[Constant, IteratedLog, Tabulated, FromScale]
DownCrossing = Union[Constant, IteratedLog, Tabulated]


class Mode(enum.IntEnum):
    RECURRENT_PHASE = 0
    TRANSIENT_PHASE = 1


@dataclass(frozen=True)
class TwoPhaseModel:
    """Transient drift ``bT``, recurrent drift ``bR``, down-crossing ``gamma``.

    ``z0`` is the scale anchor and recurrence test point; it defaults to
    ``x0 - gamma(x0) - 1``.
    """

    bT: DriftFunction
    bR: DriftFunction
    gamma: DownCrossing
    a: float = 1.0
    x0: float = 0.0
    z0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "x0", float(self.x0))
        if self.z0 is None:
            object.__setattr__(self, "z0", self.x0 - float(self.gamma(self.x0)) - 1.0)
        else:
            object.__setattr__(self, "z0", float(self.z0))

    def mode(self, x, xmax):
        """Phase selected by the two-phase rule at position ``x`` with running max ``xmax``."""
        xmax = np.asarray(xmax, dtype=float)
        level = xmax - np.asarray(self.gamma(xmax))
        out = np.where(np.asarray(x) > level, Mode.TRANSIENT_PHASE, Mode.RECURRENT_PHASE)
        return out if out.ndim else Mode(int(out))

    def drift(self, x, xmax):
        x = np.asarray(x, dtype=float)
        transient = np.asarray(self.mode(x, xmax)) == Mode.TRANSIENT_PHASE
        out = np.where(transient, self.bT(x), self.bR(x))
        return out if out.ndim else float(out)

    def replace(self, **changes) -> "TwoPhaseModel":
        fields = {k: getattr(self, k) for k in ("bT", "bR", "gamma", "a", "x0", "z0")}
        fields.update(changes)
        return TwoPhaseModel(**fields)

    def to_dict(self) -> dict:
        return {
            "bT": self.bT.to_dict(),
            "bR": self.bR.to_dict(),
            "gamma": self.gamma.to_dict(),
            "a": self.a,
            "x0": self.x0,
            "z0": self.z0,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TwoPhaseModel":
        try:
            return cls(
                bT=function_from_dict(doc["bT"]),
                bR=function_from_dict(doc["bR"]),
                gamma=function_from_dict(doc["gamma"]),
                a=doc.get("a", 1.0),
                x0=doc.get("x0", 0.0),
                z0=doc.get("z0"),
            )
        except KeyError as exc:
            raise ModelError(f"model block is missing {exc}") from None


def function_from_dict(doc: dict):
    """Inverse of ``to_dict`` for the function variants (``terms`` may be a mapping)."""
    if not isinstance(doc, dict):
        raise MalformedDrift(f"function block must be a mapping, got {doc!r}")
    kind = doc.get("kind")
    try:
        if kind == "constant":
            return Constant(float(doc["value"]))
        if kind == "iterated_log":
            terms = doc["terms"]
            terms = dict(terms) if isinstance(terms, dict) else tuple(tuple(t) for t in terms)
            return IteratedLog(threshold=doc["threshold"], terms=terms, below=doc.get("below"))
        if kind == "tabulated":
            return Tabulated(tuple(doc["grid"]), tuple(doc["values"]))
        if kind == "from_scale":
            return FromScale(scale_from_dict(doc["scale"]))
    except KeyError as exc:
        raise MalformedDrift(f"{kind} block is missing {exc}") from None
    raise MalformedDrift(f"unknown function kind {kind!r}")


def scale_from_dict(doc: dict) -> ScaleData:
    kind = doc.get("kind")
    if kind == "bump_profile":
        from .adversarial import BumpScale

        return BumpScale(b=doc["b"], gamma=doc["gamma"], x0=doc["x0"], upper=doc.get("upper"))
    raise MalformedDrift(f"unknown scale kind {kind!r}")


# --------------------------------------------------------------------------
# validation

class Condition(str, enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class TailReport:
    """Divergence of ``int exp(-int_0^x 2b/a)`` at one end; ``None`` = undetermined."""

    divergent: bool | None
    reason: str
    truncated_estimate: float | None = None


@dataclass(frozen=True)
class ValidationReport:
    transient_condition: Condition
    recurrent_condition: Condition
    bT_tails: tuple[TailReport, TailReport]
    bR_tails: tuple[TailReport, TailReport]
    checks: tuple[tuple[str, str], ...] = field(default_factory=tuple)
    reflecting: bool = False

    @property
    def ok(self) -> bool:
        return Condition.FAIL not in (self.transient_condition, self.recurrent_condition)

    def to_dict(self) -> dict:
        def tails(pair):
            return [
                {"divergent": t.divergent, "reason": t.reason, "truncated_estimate": t.truncated_estimate}
                for t in pair
            ]

        return {
            "transient_condition": self.transient_condition.value,
            "recurrent_condition": self.recurrent_condition.value,
            "bT_tails": tails(self.bT_tails),
            "bR_tails": tails(self.bR_tails),
            "checks": [list(c) for c in self.checks],
            "reflecting": self.reflecting,
            "ok": self.ok,
        }


def _tails(drift, a: float, positive_part: bool = False) -> tuple[TailReport, TailReport]:
    """Divergence at -inf and +inf of the scale integral of ``drift``.

    With ``positive_part`` the drift is replaced by ``max(drift, 0)``.
    """
    if isinstance(drift, Constant):
        v = max(drift.value, 0.0) if positive_part else drift.value
        return (
            TailReport(v >= 0, f"constant drift {v:g} at -inf"),
            TailReport(v <= 0, f"constant drift {v:g} at +inf"),
        )
    if isinstance(drift, IteratedLog):
        below = max(drift.below, 0.0) if positive_part else drift.below
        coefs = drift.coefficients()
        lead = next((coefs[j] for j in sorted(coefs) if coefs[j] != 0.0), 0.0)
        if positive_part:
            lead = max(lead, 0.0)
        left = TailReport(below >= 0, f"constant {below:g} below threshold")
        if lead > 0:
            right = TailReport(False, "leading iterated-log coefficient positive: drift -> +inf")
        elif lead < 0:
            right = TailReport(True, "leading iterated-log coefficient negative: drift -> -inf")
        else:
            right = TailReport(True, "drift vanishes for large x")
        return left, right
    if isinstance(drift, Tabulated):
        from .analytic import window_scale

        xs, ys = drift.xs, drift.ys
        if positive_part:
            if np.all(ys <= 0):
                return (TailReport(None, "tabulated: behavior beyond grid unknown"),
                        TailReport(None, "tabulated: behavior beyond grid unknown"))
            drift = Tabulated(drift.grid, tuple(np.maximum(ys, 0.0)))
        est = float(window_scale(drift, xs[0], xs[-1], a))
        msg = "tabulated: divergence undecidable from finite data"
        return TailReport(None, msg, est), TailReport(None, msg, est)
    if isinstance(drift, FromScale):
        s = drift.scale
        if positive_part:
            return (TailReport(None, "positive part of a scale-defined drift"),
                    TailReport(None, "positive part of a scale-defined drift"))
        return (TailReport(s.left_divergent, "scale-defined drift"),
                TailReport(s.right_divergent, "scale-defined drift"))
    raise MalformedDrift(f"unsupported drift {drift!r}")


def _combine(parts: list[bool | None]) -> Condition:
    if any(p is False for p in parts):
        return Condition.FAIL
    if any(p is None for p in parts):
        return Condition.UNDETERMINED
    return Condition.PASS


def transient_condition(tails) -> Condition:
    left, right = tails
    return _combine([left.divergent, None if right.divergent is None else not right.divergent])


def recurrent_condition(tails) -> Condition:
    left, right = tails
    return _combine([left.divergent, right.divergent])


def is_reflecting(drift) -> bool:
    """``Constant(+inf)`` is the reflecting-barrier sentinel for the recurrent phase."""
    return isinstance(drift, Constant) and drift.value == math.inf


def _check_finite(drift, name: str, probe: np.ndarray) -> None:
    if isinstance(drift, Constant):
        if not math.isfinite(drift.value):
            raise MalformedDrift(f"{name}: non-finite constant {drift.value}")
        return
    vals = np.asarray(drift(probe))
    if not np.all(np.isfinite(vals)):
        raise MalformedDrift(f"{name}: non-finite values")


def check_gamma(gamma, domain: tuple[float, float]) -> list[tuple[str, str]]:
    """Admissibility of a down-crossing function; raises :class:`GammaInadmissible`."""
    checks: list[tuple[str, str]] = []
    if isinstance(gamma, Constant):
        if not (math.isfinite(gamma.value) and gamma.value > 0):
            raise GammaInadmissible(f"gamma must be positive, got {gamma.value}")
        checks.append(("gamma>0", "exact"))
        checks.append(("gamma'<1", "exact"))
        checks.append(("x-gamma->inf", "exact"))
        return checks
    if isinstance(gamma, IteratedLog):
        coefs = gamma.coefficients()
        thr = gamma.threshold
        if not gamma.below > 0:
            raise GammaInadmissible("gamma must be positive below the threshold")
        if all(c >= 0 for c in coefs.values()):
            checks.append(("gamma>0", "exact"))
        else:
            lead = next((coefs[j] for j in sorted(coefs) if coefs[j] != 0.0), 0.0)
            grid = thr * np.logspace(0, 12, 4001)
            if lead <= 0 or np.any(gamma(grid) <= 0):
                raise GammaInadmissible("gamma is not positive for large x")
            checks.append(("gamma>0", "heuristic: leading term positive, grid check"))
        bound = sum(abs(c) * iterated_log_derivative(thr, j) for j, c in coefs.items())
        if bound < 1:
            checks.append(("gamma'<1", "exact: |gamma'| <= %.3g on [threshold, inf)" % bound))
        else:
            grid = thr * np.logspace(0, 12, 20001)
            if np.max(gamma.derivative(grid)) >= 1:
                raise GammaInadmissible("gamma' >= 1 detected")
            checks.append(("gamma'<1", "heuristic: dense grid check"))
        checks.append(("x-gamma->inf", "exact: gamma grows like an iterated log"))
        return checks
    if isinstance(gamma, Tabulated):
        if np.any(gamma.ys <= 0):
            raise GammaInadmissible("tabulated gamma must be positive")
        lo, hi = gamma.xs[0], gamma.xs[-1]
        lo, hi = min(lo, domain[0]), max(hi, domain[1])
        grid = np.linspace(lo, hi, 10_000)
        h = 1e-6 * max(1.0, hi - lo)
        slope = (np.asarray(gamma(grid + h)) - np.asarray(gamma(grid - h))) / (2 * h)
        if np.max(slope) > 1 - 1e-6:
            raise GammaInadmissible("gamma' >= 1 detected by centered differences")
        checks.append(("gamma>0", "exact on grid; constant extrapolation"))
        checks.append(("gamma'<1", "centered differences on 1e4 points"))
        xg = gamma.xs - gamma.ys
        if not np.all(np.diff(xg) > 0):
            raise GammaInadmissible("x - gamma(x) not increasing on the grid")
        checks.append(("x-gamma->inf", "heuristic: increasing on grid, constant extrapolation"))
        return checks
    raise GammaInadmissible(f"unsupported down-crossing function {gamma!r}")


def validate_model(m: TwoPhaseModel) -> ValidationReport:
    """Check the standing assumptions on a model instance.

    Raises :class:`MalformedDrift`, :class:`GammaInadmissible` or
    :class:`AnchorViolation`; the integral conditions on the two drifts are
    reported as three-valued verdicts.
    """
    if not (math.isfinite(m.a) and m.a > 0):
        raise ModelError(f"diffusion coefficient must be positive, got {m.a}")
    if not math.isfinite(m.x0):
        raise ModelError("x0 must be finite")
    probe = m.x0 + np.concatenate([-np.logspace(-2, 4, 50)[::-1], [0.0], np.logspace(-2, 8, 80)])
    _check_finite(m.bT, "bT", probe)
    reflecting = is_reflecting(m.bR)
    if not reflecting:
        _check_finite(m.bR, "bR", probe)
    checks = check_gamma(m.gamma, (m.x0, m.x0 + 100.0))
    g0 = float(m.gamma(m.x0))
    if not m.z0 < m.x0 - g0:
        raise AnchorViolation(f"z0={m.z0} must be below x0 - gamma(x0) = {m.x0 - g0}")
    checks.append(("z0 < x0 - gamma(x0)", "exact"))
    t_tails = _tails(m.bT, m.a)
    if reflecting:
        r_tails = (TailReport(False, "reflecting sentinel"), TailReport(False, "reflecting sentinel"))
        rec = Condition.FAIL
    else:
        r_tails = _tails(m.bR, m.a)
        rec = recurrent_condition(r_tails)
    return ValidationReport(
        transient_condition=transient_condition(t_tails),
        recurrent_condition=rec,
        bT_tails=t_tails,
        bR_tails=r_tails,
        checks=tuple(checks),
        reflecting=reflecting,
    )
