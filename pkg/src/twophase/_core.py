"""Compiled kernels for drift evaluation and scale-function integrals.

Every drift (and every down-crossing function) is packed into a flat
representation ``(kind, p, xs, ys)`` so that numba kernels can evaluate it:

====  ============  ==========================================================
kind  variant       parameters
====  ============  ==========================================================
0     constant      ``p[0]`` value
1     iterated log  ``p[0]`` threshold, ``p[1]`` value below; ``xs`` depths,
                    ``ys`` coefficients
2     tabulated     ``xs`` grid, ``ys`` values; ``p[0] = 1`` marks a uniform
                    grid with spacing ``p[1]``
3     bump scale    ``p[0]`` baseline slope B, ``p[1]`` anchor, ``p[2]`` offset
                    of the interval starts, ``p[3]`` last interval index;
                    ``xs`` bump areas, ``ys`` scale at interval starts
4     reflecting    no parameters (drift is +inf)
====  ============  ==========================================================

The central quantity is the log of a window integral of the scale
derivative measured from a movable base point,

    log W(base; s, t) = log int_s^t exp(-int_base^y 2 b(r)/a dr) dy,

which never overflows because only exponent differences appear and the
panel sums are accumulated in log space.
"""

import math

import numpy as np
from numba import njit

CONST, ITERLOG, TABULATED, BUMP, REFLECT = 0, 1, 2, 3, 4

GL_ORDER = 20
GL_X, GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


def _spectral_matrix(x, w):
    """S[i, j] = int_{-1}^{x_i} l_j(t) dt for the Lagrange basis on the nodes."""
    m = len(x)
    vander = np.polynomial.legendre.legvander(x, m - 1)
    coef = ((2 * np.arange(m) + 1) / 2)[:, None] * vander.T * w[None, :]
    S = np.empty((m, m))
    for j in range(m):
        anti = np.polynomial.legendre.legint(coef[:, j], lbnd=-1)
        S[:, j] = np.polynomial.legendre.legval(x, anti)
    return S


GL_S = _spectral_matrix(GL_X, GL_W)

# Exponent change allowed across one quadrature panel.
PANEL_EXPONENT = 4.0


# --------------------------------------------------------------------------
# point evaluation

@njit(cache=True)
def interp(x, xs, ys):
    """Piecewise-linear interpolation with constant extrapolation."""
    n = xs.shape[0]
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


@njit(cache=True)
def _interp_uniform(x, xs, ys, h):
    n = xs.shape[0]
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    k = int((x - xs[0]) / h)
    if k > n - 2:
        k = n - 2
    w = (x - xs[k]) / (xs[k + 1] - xs[k])
    return ys[k] + w * (ys[k + 1] - ys[k])


@njit(cache=True)
def _iterlog_value(p, xs, ys, x):
    if x < p[0]:
        return p[1]
    depth = 0
    for k in range(xs.shape[0]):
        if xs[k] > depth:
            depth = int(xs[k])
    logs = np.empty(depth + 1)
    y = x
    for d in range(1, depth + 1):
        y = math.log(y)
        logs[d] = y
    tot = 0.0
    for k in range(xs.shape[0]):
        tot += ys[k] * logs[int(xs[k])]
    return tot


@njit(cache=True)
def _bump_index(p, x):
    """Interval index j with x in [s_j, e_j], or -1."""
    j = int(math.floor(x - p[2]))
    if j < 2 or j > int(p[3]):
        return -1, 0.0
    t = (x - (p[2] + j)) * j * j
    if t > 1.0:
        return -1, 0.0
    return j, t


@njit(cache=True)
def bump_du(p, xs, x):
    j, t = _bump_index(p, x)
    if j < 0:
        return p[0]
    return p[0] + xs[j - 2] * j * j * 30.0 * t * t * (1.0 - t) * (1.0 - t)


@njit(cache=True)
def bump_d2u(p, xs, x):
    j, t = _bump_index(p, x)
    if j < 0:
        return 0.0
    return xs[j - 2] * j ** 4 * (60.0 * t - 180.0 * t * t + 120.0 * t * t * t)


@njit(cache=True)
def bump_u(p, xs, ys, x):
    """Scale value, zero at the anchor ``p[1]``."""
    B = p[0]
    o = p[2]
    J = int(p[3])
    if x < o + 2.0:
        return B * (x - p[1])
    j = int(math.floor(x - o))
    if j > J:
        j = J
    sj = o + j
    t = (x - sj) * j * j
    area = xs[j - 2]
    if t >= 1.0:
        return ys[j - 2] + B * (x - sj) + area
    return ys[j - 2] + B * (x - sj) + area * t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


@njit(cache=True)
def drift_value(kind, p, xs, ys, a, x):
    if kind == CONST:
        return p[0]
    if kind == ITERLOG:
        return _iterlog_value(p, xs, ys, x)
    if kind == TABULATED:
        if p[0] > 0.0:
            return _interp_uniform(x, xs, ys, p[1])
        return interp(x, xs, ys)
    if kind == BUMP:
        return -0.5 * a * bump_d2u(p, xs, x) / bump_du(p, xs, x)
    return np.inf


@njit(cache=True)
def drift_many(kind, p, xs, ys, a, x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = drift_value(kind, p, xs, ys, a, x[i])
    return out


# --------------------------------------------------------------------------
# exponent integrals  E(s, t) = int_s^t 2 b / a

@njit(cache=True)
def _tab_integral(xs, ys, s, t):
    """int_s^t of the piecewise-linear interpolant, s <= t, constant outside."""
    n = xs.shape[0]
    tot = 0.0
    if s < xs[0]:
        tot += ys[0] * (min(t, xs[0]) - s)
    if t > xs[n - 1]:
        tot += ys[n - 1] * (t - max(s, xs[n - 1]))
    lo = max(s, xs[0])
    hi = min(t, xs[n - 1])
    if lo >= hi:
        return tot
    k = np.searchsorted(xs, lo, side="right") - 1
    if k > n - 2:
        k = n - 2
    while k < n - 1 and xs[k] < hi:
        l = max(lo, xs[k])
        r = min(hi, xs[k + 1])
        if r > l:
            slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
            vl = ys[k] + slope * (l - xs[k])
            vr = ys[k] + slope * (r - xs[k])
            tot += 0.5 * (vl + vr) * (r - l)
        k += 1
    return tot


@njit(cache=True)
def _iterlog_integral(p, xs, ys, s, t):
    """int_s^t of an iterated-log function, s <= t."""
    thr = p[0]
    tot = 0.0
    if s < thr:
        tot += p[1] * (min(t, thr) - s)
    lo = max(s, thr)
    while lo < t:
        hi = min(t, 2.0 * lo)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        acc = 0.0
        for i in range(GL_ORDER):
            acc += GL_W[i] * _iterlog_value(p, xs, ys, mid + half * GL_X[i])
        tot += half * acc
        lo = hi
    return tot


@njit(cache=True)
def exponent(kind, p, xs, ys, a, s, t):
    """int_s^t 2 b(r) / a dr (either orientation)."""
    if s == t:
        return 0.0
    if t < s:
        return -exponent(kind, p, xs, ys, a, t, s)
    if kind == CONST:
        return 2.0 * p[0] * (t - s) / a
    if kind == ITERLOG:
        return 2.0 * _iterlog_integral(p, xs, ys, s, t) / a
    if kind == TABULATED:
        return 2.0 * _tab_integral(xs, ys, s, t) / a
    if kind == BUMP:
        return -(math.log(bump_du(p, xs, t)) - math.log(bump_du(p, xs, s)))
    return np.inf


# --------------------------------------------------------------------------
# log-space window integrals

@njit(cache=True)
def _logaddexp(u, v):
    if u == -np.inf:
        return v
    if v == -np.inf:
        return u
    if u > v:
        return u + math.log1p(math.exp(v - u))
    return v + math.log1p(math.exp(u - v))


@njit(cache=True)
def _log_exp_integral(k, length):
    """log int_0^length exp(-k y) dy for length > 0."""
    if k == 0.0:
        return math.log(length)
    kl = k * length
    if kl > 0.0:
        return math.log(-math.expm1(-kl)) - math.log(k)
    return -kl + math.log(-math.expm1(kl)) - math.log(-k)


@njit(cache=True)
def _panel_log_sum(e0, epanel, half):
    """log(half * sum_i w_i exp(-(e0 + epanel_i)))."""
    m = -np.inf
    for i in range(GL_ORDER):
        v = -(e0 + epanel[i])
        if v > m:
            m = v
    acc = 0.0
    for i in range(GL_ORDER):
        acc += GL_W[i] * math.exp(-(e0 + epanel[i]) - m)
    return m + math.log(acc * half)


@njit(cache=True)
def _log_window_iterlog(p, xs, ys, a, e_bs, s, t):
    thr = p[0]
    acc = -np.inf
    lo = s
    if lo < thr:
        hi = min(t, thr)
        acc = -e_bs + _log_exp_integral(2.0 * p[1] / a, hi - lo)
        e_bs += 2.0 * p[1] * (hi - lo) / a
        lo = hi
    f = np.empty(GL_ORDER)
    epanel = np.empty(GL_ORDER)
    while lo < t:
        h = min(t - lo, lo)
        bmax = max(abs(_iterlog_value(p, xs, ys, lo)), abs(_iterlog_value(p, xs, ys, lo + h)))
        if 2.0 * bmax * h / a > PANEL_EXPONENT:
            h = PANEL_EXPONENT * a / (2.0 * bmax)
        hi = lo + h if lo + h < t else t
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        total = 0.0
        for j in range(GL_ORDER):
            f[j] = 2.0 * _iterlog_value(p, xs, ys, mid + half * GL_X[j]) / a
            total += GL_W[j] * f[j]
        for i in range(GL_ORDER):
            v = 0.0
            for j in range(GL_ORDER):
                v += GL_S[i, j] * f[j]
            epanel[i] = half * v
        acc = _logaddexp(acc, _panel_log_sum(e_bs, epanel, half))
        e_bs += half * total
        lo = hi
    return acc


@njit(cache=True)
def _log_window_tab(xs, ys, a, e_bs, s, t):
    n = xs.shape[0]
    acc = -np.inf
    lo = s
    if lo < xs[0]:
        hi = min(t, xs[0])
        acc = -e_bs + _log_exp_integral(2.0 * ys[0] / a, hi - lo)
        e_bs += 2.0 * ys[0] * (hi - lo) / a
        lo = hi
    epanel = np.empty(GL_ORDER)
    while lo < t and lo < xs[n - 1]:
        k = np.searchsorted(xs, lo, side="right") - 1
        seg_end = min(t, xs[k + 1])
        bmax = max(abs(interp(lo, xs, ys)), abs(interp(seg_end, xs, ys)))
        h = seg_end - lo
        if 2.0 * bmax * h / a > PANEL_EXPONENT:
            h = PANEL_EXPONENT * a / (2.0 * bmax)
        hi = lo + h if lo + h < seg_end else seg_end
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        for i in range(GL_ORDER):
            epanel[i] = 2.0 * _tab_integral(xs, ys, lo, mid + half * GL_X[i]) / a
        acc = _logaddexp(acc, _panel_log_sum(e_bs, epanel, half))
        e_bs += 2.0 * _tab_integral(xs, ys, lo, hi) / a
        lo = hi
    if lo < t:
        acc = _logaddexp(acc, -e_bs + _log_exp_integral(2.0 * ys[n - 1] / a, t - lo))
    return acc


@njit(cache=True)
def log_window(kind, p, xs, ys, a, base, s, t):
    """log int_s^t exp(-int_base^y 2b/a) dy for s < t; -inf if s >= t."""
    if not t > s:
        return -np.inf
    if kind == REFLECT:
        return np.inf
    if kind == BUMP:
        return math.log(bump_u(p, xs, ys, t) - bump_u(p, xs, ys, s)) - math.log(bump_du(p, xs, base))
    e_bs = exponent(kind, p, xs, ys, a, base, s)
    if kind == CONST:
        return -e_bs + _log_exp_integral(2.0 * p[0] / a, t - s)
    if kind == ITERLOG:
        return _log_window_iterlog(p, xs, ys, a, e_bs, s, t)
    return _log_window_tab(xs, ys, a, e_bs, s, t)


@njit(cache=True)
def log_window_many(kind, p, xs, ys, a, base, s, t):
    out = np.empty(base.shape[0])
    for i in range(base.shape[0]):
        out[i] = log_window(kind, p, xs, ys, a, base[i], s[i], t[i])
    return out


@njit(cache=True)
def exponent_many(kind, p, xs, ys, a, s, t):
    out = np.empty(s.shape[0])
    for i in range(s.shape[0]):
        out[i] = exponent(kind, p, xs, ys, a, s[i], t[i])
    return out


# --------------------------------------------------------------------------
# hazard and criterion function

@njit(cache=True)
def hazard_many(tk, tp, txs, tys, gk, gp, gxs, gys, a, z):
    """Onset hazard 1 / int_{z-g}^z exp(int_y^z 2 bT / a) dy."""
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        g = drift_value(gk, gp, gxs, gys, a, z[i])
        if tk == CONST:
            # window length taken from g itself; z - (z - g) loses digits for large z
            k = 2.0 * tp[0] / a
            out[i] = math.exp(-(k * g + _log_exp_integral(k, g)))
        else:
            out[i] = math.exp(-log_window(tk, tp, txs, tys, a, z[i], z[i] - g, z[i]))
    return out


@njit(cache=True)
def _hit(tk, tp, txs, tys, rk, rp, rxs, rys, a, z0, z, c):
    if rk == REFLECT:
        return 0.0
    if not c > 0.0:
        return 0.0
    log_j = log_window(tk, tp, txs, tys, a, z, z, z + c)
    log_r = log_window(rk, rp, rxs, rys, a, z, z0, z)
    d = log_r - log_j
    if d > 0:
        e = math.exp(-d)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(d))


@njit(cache=True)
def hitting_many(tk, tp, txs, tys, rk, rp, rxs, rys, a, z0, z, c):
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        out[i] = _hit(tk, tp, txs, tys, rk, rp, rxs, rys, a, z0, z[i], c[i])
    return out


@njit(cache=True)
def criterion_many(tk, tp, txs, tys, rk, rp, rxs, rys, gk, gp, gxs, gys, a, z0, s):
    out = np.empty(s.shape[0])
    for i in range(s.shape[0]):
        g = drift_value(gk, gp, gxs, gys, a, s[i])
        k = s[i] - g
        if not k > z0:
            out[i] = np.nan
        else:
            out[i] = _hit(tk, tp, txs, tys, rk, rp, rxs, rys, a, z0, k, g)
    return out
