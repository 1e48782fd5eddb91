"""Scale functions, onset hazards, hitting probabilities and closed forms.

All scale-function quantities are evaluated in shifted-base form: the scale
derivative is measured from a base point next to the window being
integrated, so only exponent differences appear.  The heavy lifting happens
in :mod:`twophase._core`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.optimize import brentq

from . import _core
from .errors import DegenerateGamma, DomainTooLarge, HazardUnderflow, ModelError
from .model import (
    Constant,
    FromScale,
    IteratedLog,
    Provenance,
    ScaleData,
    Tabulated,
    TwoPhaseModel,
    is_reflecting,
)

EXPONENT_GUARD = 700.0
_EMPTY = np.empty(0)


def pack(fn):
    """Flat ``(kind, p, xs, ys)`` representation of a drift or down-crossing function."""
    p = np.zeros(8)
    if isinstance(fn, Constant):
        if fn.value == math.inf:
            return _core.REFLECT, p, _EMPTY, _EMPTY
        p[0] = fn.value
        return _core.CONST, p, _EMPTY, _EMPTY
    if isinstance(fn, IteratedLog):
        p[0], p[1] = fn.threshold, fn.below
        xs = np.array([float(j) for j, _ in fn.terms])
        ys = np.array([c for _, c in fn.terms])
        return _core.ITERLOG, p, xs, ys
    if isinstance(fn, Tabulated):
        xs = fn.xs.copy()
        h = np.diff(xs)
        if np.all(np.abs(h - h.mean()) <= 1e-12 * h.mean()):
            p[0], p[1] = 1.0, h.mean()
        return _core.TABULATED, p, xs, fn.ys.copy()
    if isinstance(fn, FromScale):
        if not hasattr(fn.scale, "packed"):
            raise ModelError("scale-defined drift has no compiled representation")
        return fn.scale.packed()
    raise ModelError(f"cannot pack {fn!r}")


def _arr(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def _out(values, like):
    return values if np.ndim(like) else float(values[0])


def drift_values(drift, x, a: float = 1.0):
    k, p, xs, ys = pack(drift)
    return _out(_core.drift_many(k, p, xs, ys, float(a), _arr(x)), x)


def exponent_integral(drift, s, t, a: float = 1.0):
    """``int_s^t 2 b(r)/a dr`` (vectorized over ``s`` and ``t``)."""
    k, p, xs, ys = pack(drift)
    s_, t_ = np.broadcast_arrays(_arr(s), _arr(t))
    out = _core.exponent_many(k, p, xs, ys, float(a), s_.copy(), t_.copy())
    scalar = not (np.ndim(s) or np.ndim(t))
    return float(out[0]) if scalar else out


def log_window_scale(drift, base, start, stop, a: float = 1.0):
    """``log int_start^stop exp(-int_base^y 2b/a) dy``; ``-inf`` on empty windows."""
    k, p, xs, ys = pack(drift)
    b_, s_, t_ = (v.astype(float).copy() for v in np.broadcast_arrays(_arr(base), _arr(start), _arr(stop)))
    out = _core.log_window_many(k, p, xs, ys, float(a), b_, s_, t_)
    scalar = not (np.ndim(base) or np.ndim(start) or np.ndim(stop))
    return float(out[0]) if scalar else out


def window_scale(drift, start, stop, a: float = 1.0, base=None):
    """``int_start^stop exp(-int_base^y 2b/a) dy`` with ``base`` defaulting to ``start``."""
    base = start if base is None else base
    return np.exp(log_window_scale(drift, base, start, stop, a))


def scale_increment(drift, base, start, stop, a: float = 1.0):
    """Scale increment ``u(stop) - u(start)`` measured with ``u'(base) = 1``.

    Equals ``(u(stop) - u(start)) * exp(int_{z0}^{base} 2b/a)`` for a scale
    anchored anywhere; finite whenever the result is representable.
    """
    if np.any(np.asarray(stop) < np.asarray(start)):
        raise ValueError("scale_increment needs start <= stop")
    if not np.all(np.isfinite([np.max(base), np.max(start), np.max(stop)])):
        raise ValueError("non-finite input")
    return window_scale(drift, start, stop, a, base=base)


# --------------------------------------------------------------------------
# scale functions

class ConstantScale(ScaleData):
    """Closed-form scale of a constant drift, ``u'(z0) = 1``."""

    provenance = Provenance.CLOSED_FORM

    def __init__(self, value: float, z0: float, domain=(-math.inf, math.inf), a: float = 1.0):
        self.value, self.z0, self.domain, self.a = float(value), float(z0), tuple(domain), float(a)
        self.k = 2.0 * self.value / self.a
        self.left_divergent = self.value >= 0
        self.right_divergent = self.value <= 0

    def log_du(self, x):
        return -self.k * (np.asarray(x, dtype=float) - self.z0)

    def u(self, x):
        d = np.asarray(x, dtype=float) - self.z0
        if self.k == 0:
            r = d
        else:
            r = -np.expm1(-self.k * d) / self.k
        return r if np.ndim(x) else float(r)

    def ratio(self, x):
        d = np.asarray(x, dtype=float) - self.z0
        if self.k == 0:
            r = d
        else:
            r = np.expm1(self.k * d) / self.k
        return r if np.ndim(x) else float(r)

    def drift(self, x):
        return np.full(np.shape(x), self.value) if np.ndim(x) else self.value

    def to_dict(self):
        return {"kind": "constant", "value": self.value, "z0": self.z0, "a": self.a}


class QuadratureScale(ScaleData):
    """Scale of a general drift, evaluated by shifted-base quadrature."""

    provenance = Provenance.QUADRATURE

    def __init__(self, drift, z0: float, domain, a: float = 1.0):
        self.fn = drift
        self.z0, self.domain, self.a = float(z0), tuple(domain), float(a)
        self._packed = pack(drift)

    def log_du(self, x):
        k, p, xs, ys = self._packed
        xa = _arr(x)
        out = -_core.exponent_many(k, p, xs, ys, self.a, np.full(xa.shape, self.z0), xa)
        return _out(out, x)

    def ratio(self, x):
        k, p, xs, ys = self._packed
        xa = _arr(x)
        lo = np.minimum(xa, self.z0)
        hi = np.maximum(xa, self.z0)
        out = np.exp(_core.log_window_many(k, p, xs, ys, self.a, xa.copy(), lo, hi))
        out = np.where(xa < self.z0, -out, out)
        return _out(out, x)

    def drift(self, x):
        return drift_values(self.fn, x, self.a)

    def breakpoints(self):
        return self.fn.breakpoints()


class AnchoredScale(ScaleData):
    """A user-supplied scale re-anchored at ``z0`` with ``u'(z0) = 1``."""

    def __init__(self, scale: ScaleData, z0: float, domain):
        self.base_scale = scale
        self.z0, self.domain, self.a = float(z0), tuple(domain), scale.a
        self.provenance = scale.provenance
        self._shift = float(scale.log_du(self.z0))
        self._u0 = float(scale.u(self.z0))
        self.left_divergent = scale.left_divergent
        self.right_divergent = scale.right_divergent

    def log_du(self, x):
        return np.asarray(self.base_scale.log_du(x)) - self._shift if np.ndim(x) else (
            float(self.base_scale.log_du(x)) - self._shift
        )

    def ratio(self, x):
        s = self.base_scale
        num = np.asarray(s.u(x)) - self._u0
        return num / np.exp(np.asarray(s.log_du(x))) if np.ndim(x) else float(num / math.exp(s.log_du(x)))

    def drift(self, x):
        return self.base_scale.drift(x)


def build_scale(drift, z0: float, domain=None, a: float = 1.0) -> ScaleData:
    """Scale function of ``drift`` anchored at ``z0`` (``u(z0) = 0``, ``u'(z0) = 1``).

    Raises :class:`DomainTooLarge` when ``|int_{z0}^x 2b/a|`` exceeds the
    overflow guard somewhere on ``domain``; use :func:`scale_increment` there.
    """
    if domain is None:
        domain = (z0 - 10.0, z0 + 10.0)
    lo, hi = float(domain[0]), float(domain[1])
    if not lo <= z0 <= hi:
        raise ValueError("z0 must lie in the domain")
    if isinstance(drift, Constant):
        scale = ConstantScale(drift.value, z0, (lo, hi), a)
    elif isinstance(drift, FromScale):
        scale = AnchoredScale(drift.scale, z0, (lo, hi))
    else:
        scale = QuadratureScale(drift, z0, (lo, hi), a)
    probes = [lo, hi]
    bp = np.asarray(drift.breakpoints(), dtype=float)
    if bp.size and not isinstance(drift, FromScale):
        probes += list(bp[(bp > lo) & (bp < hi)])
    expo = np.abs(np.asarray(scale.log_du(np.array(probes)), dtype=float))
    if np.any(~np.isfinite(expo)) or np.max(expo) > EXPONENT_GUARD:
        raise DomainTooLarge(
            f"scale exponent reaches {np.max(expo):.4g} on [{lo}, {hi}]; use scale_increment"
        )
    return scale


# --------------------------------------------------------------------------
# onset hazard

def _model_packs(m: TwoPhaseModel):
    return pack(m.bT), pack(m.bR), pack(m.gamma)


def _check_gamma(m, z):
    g = np.asarray(m.gamma(z))
    if np.any(~(g > 0)):
        raise DegenerateGamma(f"gamma must be positive, got {g.min()}")
    return g


def onset_hazard(m: TwoPhaseModel, z):
    """Hazard of the onset location, ``u_T'(z) / (u_T(z) - u_T(z - gamma(z)))``."""
    _check_gamma(m, z)
    (tk, tp, txs, tys), _, (gk, gp, gxs, gys) = _model_packs(m)
    out = _core.hazard_many(tk, tp, txs, tys, gk, gp, gxs, gys, m.a, _arr(z))
    return _out(out, z)


def constant_case(m: TwoPhaseModel) -> bool:
    return isinstance(m.bT, Constant) and isinstance(m.gamma, Constant)


def _solve_offset(m: TwoPhaseModel, target: float, lo: float, hi: float):
    """z with z - gamma(z) = target, or None if outside [lo, hi]."""
    f = lambda z: z - float(m.gamma(z)) - target
    if f(lo) > 0:
        return None
    width = max(1.0, float(m.gamma(target)))
    top = target + width
    while f(top) < 0:
        top = target + 2 * (top - target)
        if top > hi + 1e18:
            return None
    z = brentq(f, max(lo, target), top, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return z if lo < z < hi else None


def hazard_kinks(m: TwoPhaseModel, lo: float, hi: float) -> np.ndarray:
    """Points in (lo, hi) where the hazard may fail to be smooth."""
    pts = set()
    drift_bp = np.asarray(m.bT.breakpoints(), dtype=float)
    gamma_bp = np.asarray(m.gamma.breakpoints(), dtype=float)
    for v in np.concatenate([drift_bp, gamma_bp]):
        if lo < v < hi:
            pts.add(float(v))
    for v in drift_bp:
        z = _solve_offset(m, float(v), lo, hi)
        if z is not None:
            pts.add(z)
    return np.array(sorted(pts))


class HazardTable:
    """Piecewise-polynomial cumulative hazard starting at ``start``.

    The hazard is sampled at Gauss-Legendre nodes on panels refined until
    the panel integral matches the sum over its two halves; each panel
    stores the Legendre coefficients of the hazard and of its antiderivative,
    so the cumulative hazard and its inverse are available to round-off.
    """

    def __init__(self, m: TwoPhaseModel, start: float | None = None, rtol: float = 1e-13):
        self.m = m
        self.start = m.x0 if start is None else float(start)
        self.rtol = rtol
        self._packs = _model_packs(m)
        self.edges = [self.start]
        self.cum = [0.0]
        self.coef: list[np.ndarray] = []
        self.anti: list[np.ndarray] = []
        self.first_hazard = float(self._hazard(np.array([self.start]))[0])
        if not self.first_hazard > 0:
            raise HazardUnderflow(f"hazard vanishes at {self.start}")

    def _hazard(self, z):
        (tk, tp, txs, tys), _, (gk, gp, gxs, gys) = self._packs
        return _core.hazard_many(tk, tp, txs, tys, gk, gp, gxs, gys, self.m.a, z)

    @property
    def end(self) -> float:
        return self.edges[-1]

    def _panel(self, l, r):
        half, mid = 0.5 * (r - l), 0.5 * (r + l)
        vals = self._hazard(mid + half * _core.GL_X)
        return half * float(vals @ _core.GL_W), vals

    def _add_panel(self, l, r, depth=0, whole=None):
        if whole is None:
            whole = self._panel(l, r)
        m = 0.5 * (l + r)
        left, right = self._panel(l, m), self._panel(m, r)
        total = left[0] + right[0]
        if abs(whole[0] - total) <= self.rtol * abs(total) + 1e-300 or depth > 40:
            self._store(l, m, left)
            self._store(m, r, right)
        else:
            self._add_panel(l, m, depth + 1, left)
            self._add_panel(m, r, depth + 1, right)

    def _store(self, l, r, panel):
        integral, vals = panel
        coef = npleg.legfit(_core.GL_X, vals, _core.GL_ORDER - 1)
        anti = npleg.legint(coef, lbnd=-1) * (0.5 * (r - l))
        self.edges.append(r)
        self.cum.append(self.cum[-1] + float(npleg.legval(1.0, anti)))
        self.coef.append(coef)
        self.anti.append(anti)

    def extend(self, hi: float) -> None:
        """Cover ``[start, hi]``."""
        if hi <= self.end:
            return
        lo = self.end
        cuts = [lo, *hazard_kinks(self.m, lo, hi), hi]
        for l, r in zip(cuts[:-1], cuts[1:]):
            # panels no wider than their distance from the origin of growth
            while l < r:
                width = max(1.0, abs(l) * 0.5, r - l if r - l < 1.0 else 0.0)
                nxt = min(r, l + width)
                self._add_panel(l, nxt)
                l = nxt

    def cumulative(self, x):
        """``int_start^x hazard``."""
        xa = _arr(x)
        self.extend(float(xa.max()))
        edges = np.asarray(self.edges)
        idx = np.clip(np.searchsorted(edges, xa, side="right") - 1, 0, len(self.anti) - 1)
        out = np.empty(xa.shape)
        for k in np.unique(idx):
            sel = idx == k
            l, r = edges[k], edges[k + 1]
            t = (2 * xa[sel] - l - r) / (r - l)
            out[sel] = self.cum[k] + npleg.legval(t, self.anti[k])
        return _out(out, x)

    def invert(self, targets, ceiling: float = 1e300):
        """Positions ``x`` with ``cumulative(x) = target`` (targets >= 0)."""
        tg = _arr(targets)
        if tg.size == 0:
            return tg.copy()
        span = max(1.0, float(tg.max()) / self.first_hazard)
        while self.cum[-1] < tg.max():
            before = self.cum[-1]
            self.extend(self.end + span)
            span *= 2.0
            if self.end - self.start > ceiling or (span > 1e250 and self.cum[-1] == before):
                raise HazardUnderflow("cumulative hazard does not reach the target")
        cum = np.asarray(self.cum)
        edges = np.asarray(self.edges)
        idx = np.clip(np.searchsorted(cum, tg, side="right") - 1, 0, len(self.anti) - 1)
        out = np.empty(tg.shape)
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self._invert_panel(k, tg[sel] - cum[k], edges[k], edges[k + 1])
        return _out(out, targets)

    def _invert_panel(self, k, rem, l, r):
        anti, coef = self.anti[k], self.coef[k]
        scale = 0.5 * (r - l)
        total = self.cum[k + 1] - self.cum[k]
        lo = np.full(rem.shape, -1.0)
        hi = np.full(rem.shape, 1.0)
        t = np.clip(2.0 * rem / total - 1.0, -1.0, 1.0) if total > 0 else np.zeros(rem.shape)
        for _ in range(100):
            f = npleg.legval(t, anti) - rem
            lo = np.where(f < 0, t, lo)
            hi = np.where(f >= 0, t, hi)
            d = npleg.legval(t, coef) * scale
            step = np.where(d > 0, f / np.where(d > 0, d, 1.0), 0.0)
            nt = t - step
            bad = (nt <= lo) | (nt >= hi) | ~np.isfinite(nt)
            nt = np.where(bad, 0.5 * (lo + hi), nt)
            if np.all(np.abs(nt - t) <= 1e-15 * (1 + np.abs(t))):
                t = nt
                break
            t = nt
        return 0.5 * (l + r) + scale * t


def cumulative_hazard(m: TwoPhaseModel, x: float, y: float) -> float:
    """``int_x^{x+y}`` of the onset hazard."""
    if y < 0:
        raise ValueError("y must be non-negative")
    if y == 0:
        return 0.0
    if constant_case(m):
        return y * float(onset_hazard(m, x))
    return float(HazardTable(m, x).cumulative(x + y))


def onset_tail(m: TwoPhaseModel, x: float, y: float) -> float:
    """``P_x(L > x + y) = exp(-int_x^{x+y} hazard)``."""
    return math.exp(-cumulative_hazard(m, x, y))


# --------------------------------------------------------------------------
# hitting probabilities and the criterion function

def hitting_prob(m: TwoPhaseModel, z, c):
    """Probability that the composite diffusion from ``z`` hits ``z0`` before ``z + c``.

    The composite diffusion uses ``bR`` below ``z`` and ``bT`` above.
    """
    z_, c_ = np.broadcast_arrays(_arr(z), _arr(c))
    if np.any(z_ <= m.z0):
        raise ModelError("hitting_prob needs z > z0")
    if np.any(c_ < 0):
        raise ValueError("c must be non-negative")
    (tk, tp, txs, tys), (rk, rp, rxs, rys), _ = _model_packs(m)
    out = _core.hitting_many(tk, tp, txs, tys, rk, rp, rxs, rys, m.a, m.z0, z_.copy(), c_.copy())
    scalar = not (np.ndim(z) or np.ndim(c))
    return float(out[0]) if scalar else out


def criterion_H(m: TwoPhaseModel, s):
    """Criterion function: hitting probability from ``s - gamma(s)`` with ``c = gamma(s)``."""
    from .errors import AnchorViolation

    sa = _arr(s)
    (tk, tp, txs, tys), (rk, rp, rxs, rys), (gk, gp, gxs, gys) = _model_packs(m)
    out = _core.criterion_many(
        tk, tp, txs, tys, rk, rp, rxs, rys, gk, gp, gxs, gys, m.a, m.z0, sa
    )
    if np.any(np.isnan(out)):
        raise AnchorViolation("criterion_H needs s - gamma(s) > z0")
    return _out(out, s)


# --------------------------------------------------------------------------
# closed forms for constant phases

@dataclass(frozen=True)
class ClosedFormBundle:
    c_b_gamma: float
    d_b_gamma: float
    damping: float
    expected_sigma: float
    expected_return: float
    expected_L_increment: float
    speed: float

    def to_dict(self) -> dict:
        return asdict(self)


def _expm1_minus(x: float) -> float:
    """``e^x - 1 - x`` without cancellation for small x."""
    if abs(x) > 0.5:
        return math.expm1(x) - x
    term, total, n = x * x / 2.0, 0.0, 2
    while abs(term) > 1e-18 * abs(total) or total == 0.0:
        total += term
        n += 1
        term *= x / n
        if n > 60:
            break
    return total


def damping(b: float, c: float, gamma: float, a: float = 1.0) -> float:
    """Speed reduction factor: speed = damping * b.  ``c = inf`` is the reflecting case."""
    x = 2.0 * b * gamma / a
    em = math.expm1(x)
    ep = -math.expm1(-x)
    if c == math.inf:
        return em / (em - ep)
    return c * em / (c * em + (b - c) * ep)


def closed_forms(b: float, c: float, gamma: float, a: float = 1.0, x0: float = 0.0) -> ClosedFormBundle:
    """Closed-form constants for constant drifts ``bT = b`` and ``bR = c``."""
    for name, v in (("b", b), ("gamma", gamma), ("a", a)):
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite")
    if not c > 0:
        raise ValueError("c must be positive or +inf")
    x = 2.0 * b * gamma / a
    em = math.expm1(x)
    ep = -math.expm1(-x)
    c_bg = a * ep / (2.0 * b)
    d_bg = a * em / (2.0 * b)
    damp = damping(b, c, gamma, a)
    e_sigma = a * _expm1_minus(x) / (2.0 * b * b)
    if c == math.inf:
        e_return = (gamma / b) * (x - ep) / x
    else:
        e_return = gamma / b + a * (b - c) * ep / (2.0 * b * b * c)
    return ClosedFormBundle(
        c_b_gamma=c_bg,
        d_b_gamma=d_bg,
        damping=damp,
        expected_sigma=e_sigma,
        expected_return=e_return,
        expected_L_increment=d_bg,
        speed=damp * b,
    )


def exit_time_vN(a: float, b: float, c: float, gamma: float, N: float, y):
    """Expected exit time of ``(-N, gamma)`` for drift ``c`` below 0 and ``b`` above.

    Written so that no exponential of a positive argument appears, so large
    ``N`` is safe and the ``N -> inf`` limit is reached smoothly.
    """
    ya = _arr(y)
    if np.any(ya < -N - 1e-12) or np.any(ya > gamma + 1e-12):
        raise ValueError("y must lie in [-N, gamma]")
    r = (a / (2 * b)) * -math.expm1(-2 * b * gamma / a)
    num = gamma / b + N / c + a * (b - c) * -math.expm1(-2 * b * gamma / a) / (2 * b * b * c)
    en = math.exp(-2 * c * N / a)
    den = (a / (2 * c)) * -math.expm1(-2 * c * N / a) + r * en
    A_scaled = num * en / den  # A_N with its exp(2cN/a) factor removed
    out = np.empty(ya.shape)
    left = ya <= 0
    yl = ya[left]
    out[left] = num * (a / (2 * c)) * -np.expm1(-2 * c * (yl + N) / a) / den - (yl + N) / c
    yr = ya[~left]
    D = A_scaled + 1.0 / b - 1.0 / c
    out[~left] = (a * D / (2 * b)) * (np.exp(-2 * b * gamma / a) - np.exp(-2 * b * yr / a)) + (gamma - yr) / b
    return _out(out, y)


def exit_time_limit(a: float, b: float, c: float, gamma: float) -> float:
    """``lim_{N -> inf} v_N(0)``."""
    return gamma / b + a * (b - c) * -math.expm1(-2 * b * gamma / a) / (2 * b * b * c)
