"""Compiled Euler-Maruyama kernels for the two-phase diffusion.

A path alternates between two segments.  In the Y segment the path stays
within ``gamma(xmax)`` of its running maximum and moves with ``bT``; it ends
at the first down-crossing (time ``sigma``, onset location ``L = xmax``).
In the Z segment the drift is ``bR`` below ``K = L - gamma(L)`` and ``bT``
above, and it ends when the path regains ``L`` (after ``tau_hat``).  Both
follow from the single two-phase rule; the kernel only tracks the segment
to collect cycle statistics.

With ``bridge`` set, the within-step maximum is drawn from the Brownian
bridge law and a within-step dip below the down-crossing level is detected
with the bridge crossing probability, which removes the first-order bias
of grid-only monitoring.  The two bridge events use the two uniforms of one
counter block; they are drawn independently, which is harmless because the
maximum and the down-crossing level are ``gamma`` apart.
"""

import math

import numpy as np
from numba import njit

from ._core import REFLECT, drift_value
from .rng import STREAM_BRIDGE, block, normal_pair

# stats layout
X_FINAL, T_FINAL, STEPS, N_CYCLES = 0, 1, 2, 3
SUM_DL, SUM_T, SUM_DL2, SUM_T2, SUM_DLT = 4, 5, 6, 7, 8
SUM_SIGMA, SUM_TAU, PARTIAL, XMAX_FINAL, SUM_SIGMA2, SUM_TAU2 = 9, 10, 11, 12, 13, 14
N_STATS = 16

# cycle record layout
C_SIGMA, C_TAU, C_L, C_CENSORED, C_DL = 0, 1, 2, 3, 4
N_CYCLE_FIELDS = 5

STOP_HORIZON, STOP_ONSET, STOP_CYCLES = 0, 1, 2

# Bridge crossing probabilities below exp(-BRIDGE_CUTOFF) are treated as 0,
# which skips the uniform draw for steps far from any barrier.
BRIDGE_CUTOFF = 50.0


@njit(cache=True, nogil=True)
def run_path(
    tk, tp, txs, tys, rk, rp, rxs, rys, gk, gp, gxs, gys,
    a, x0, dt, k0, k1, rep, n_steps, stop_mode, max_cycles, bridge,
    rec_x, rec_xmax, rec_mode, cyc, stats,
):
    sq = math.sqrt(a * dt)
    reflect = rk == REFLECT
    record = rec_x.shape[0] > 0
    x = x0
    xmax = x0
    level = xmax - drift_value(gk, gp, gxs, gys, a, xmax)
    in_z = False
    t = 0.0
    cycle_start = 0.0
    t_sigma = 0.0
    L = x0
    L_prev = x0
    sigma = 0.0
    n_done = 0
    g_odd = 0.0
    if record:
        rec_x[0] = x
        rec_xmax[0] = xmax
        rec_mode[0] = 1
    k = 0
    while k < n_steps:
        if (k & 1) == 0:
            g, g_odd = normal_pair(k0, k1, rep, k >> 1)
        else:
            g = g_odd
        if reflect or x > level:
            b = drift_value(tk, tp, txs, tys, a, x)
        else:
            b = drift_value(rk, rp, rxs, rys, a, x)
        xn = x + b * dt + sq * g
        top = xn if xn > x else x
        u_dip = 1.0
        have_u = False
        if bridge and 2.0 * (xmax - x) * (xmax - xn) / (a * dt) < BRIDGE_CUTOFF:
            u_max, u_dip = block(k0, k1, rep, STREAM_BRIDGE, k)
            have_u = True
            d = xn - x
            top = 0.5 * (x + xn + math.sqrt(d * d - 2.0 * a * dt * math.log(u_max)))
        t_next = (k + 1) * dt
        if not in_z:
            start_level = level
            crossed = False
            if bridge and x > start_level and xn > start_level:
                e = 2.0 * (x - start_level) * (xn - start_level) / (a * dt)
                if e < BRIDGE_CUTOFF:
                    if not have_u:
                        u_max, u_dip = block(k0, k1, rep, STREAM_BRIDGE, k)
                    if u_dip < math.exp(-e):
                        crossed = True
            if top > xmax:
                xmax = top
                level = xmax - drift_value(gk, gp, gxs, gys, a, xmax)
            if xn <= level:
                crossed = True
            if crossed:
                sigma = t_next - cycle_start
                t_sigma = t_next
                L = xmax
                in_z = True
                if reflect and xn < level:
                    xn = 2.0 * level - xn
                if stop_mode == STOP_ONSET:
                    x = xn
                    t = t_next
                    k += 1
                    if record:
                        rec_x[k] = x
                        rec_xmax[k] = xmax
                        rec_mode[k] = 1 if x > level else 0
                    break
        else:
            if top >= L:
                tau = t_next - t_sigma
                dl = L - L_prev
                T = sigma + tau
                if n_done < cyc.shape[0]:
                    cyc[n_done, C_SIGMA] = sigma
                    cyc[n_done, C_TAU] = tau
                    cyc[n_done, C_L] = L
                    cyc[n_done, C_CENSORED] = 0.0
                    cyc[n_done, C_DL] = dl
                stats[SUM_DL] += dl
                stats[SUM_T] += T
                stats[SUM_DL2] += dl * dl
                stats[SUM_T2] += T * T
                stats[SUM_DLT] += dl * T
                stats[SUM_SIGMA] += sigma
                stats[SUM_TAU] += tau
                stats[SUM_SIGMA2] += sigma * sigma
                stats[SUM_TAU2] += tau * tau
                n_done += 1
                L_prev = L
                in_z = False
                cycle_start = t_next
                if top > xmax:
                    xmax = top
                level = xmax - drift_value(gk, gp, gxs, gys, a, xmax)
            elif reflect and xn < level:
                xn = 2.0 * level - xn
        x = xn
        t = t_next
        k += 1
        if record:
            rec_x[k] = x
            rec_xmax[k] = xmax
            rec_mode[k] = 1 if x > level else 0
        if stop_mode == STOP_CYCLES and n_done >= max_cycles:
            break
    # an unfinished cycle is reported as censored
    partial = 0.0
    if stop_mode == STOP_CYCLES and n_done < max_cycles:
        partial = 1.0
    elif stop_mode == STOP_ONSET and not in_z:
        partial = 1.0
    elif stop_mode == STOP_HORIZON:
        partial = 1.0
    if partial > 0 and stop_mode != STOP_ONSET and n_done < cyc.shape[0]:
        cyc[n_done, C_SIGMA] = sigma if in_z else np.nan
        cyc[n_done, C_TAU] = np.nan
        cyc[n_done, C_L] = L if in_z else np.nan
        cyc[n_done, C_CENSORED] = 1.0
        cyc[n_done, C_DL] = np.nan
    if stop_mode == STOP_ONSET and in_z and cyc.shape[0] > 0:
        cyc[0, C_SIGMA] = sigma
        cyc[0, C_TAU] = np.nan
        cyc[0, C_L] = L
        cyc[0, C_CENSORED] = 0.0
        cyc[0, C_DL] = L - x0
    stats[X_FINAL] = x
    stats[T_FINAL] = t
    stats[STEPS] = k
    stats[N_CYCLES] = n_done
    stats[PARTIAL] = partial
    stats[XMAX_FINAL] = xmax
    return k


@njit(cache=True, nogil=True)
def run_block(
    tk, tp, txs, tys, rk, rp, rxs, rys, gk, gp, gxs, gys,
    a, x0, dt, k0, k1, rep_start, n_steps, stop_mode, max_cycles, bridge,
    cyc, stats,
):
    """Independent replicates ``rep_start .. rep_start + len(stats) - 1``."""
    empty = np.empty(0)
    empty_i = np.empty(0, dtype=np.int8)
    for i in range(stats.shape[0]):
        run_path(
            tk, tp, txs, tys, rk, rp, rxs, rys, gk, gp, gxs, gys,
            a, x0, dt, k0, k1, rep_start + i, n_steps, stop_mode, max_cycles, bridge,
            empty, empty, empty_i, cyc[i], stats[i],
        )


@njit(cache=True, nogil=True)
def hit_block(
    tk, tp, txs, tys, rk, rp, rxs, rys,
    a, z0, z, c, dt, k0, k1, rep_start, max_steps, bridge, out, steps,
):
    """Composite diffusion from ``z``: 1 if it reaches ``z0`` first, 0 if ``z + c``, -1 if capped.

    The drift is ``bR`` at or below ``z`` and ``bT`` above.
    """
    sq = math.sqrt(a * dt)
    top_level = z + c
    for i in range(out.shape[0]):
        rep = rep_start + i
        x = z
        res = -1.0
        g_odd = 0.0
        k = 0
        while k < max_steps:
            if (k & 1) == 0:
                g, g_odd = normal_pair(k0, k1, rep, k >> 1)
            else:
                g = g_odd
            if x <= z:
                b = drift_value(rk, rp, rxs, rys, a, x)
            else:
                b = drift_value(tk, tp, txs, tys, a, x)
            xn = x + b * dt + sq * g
            k += 1
            if xn >= top_level:
                res = 0.0
                break
            if xn <= z0:
                res = 1.0
                break
            if bridge:
                v = 2.0 / (a * dt)
                e_top = v * (top_level - x) * (top_level - xn)
                e_bot = v * (x - z0) * (xn - z0)
                if e_top < BRIDGE_CUTOFF or e_bot < BRIDGE_CUTOFF:
                    u0, u1 = block(k0, k1, rep, STREAM_BRIDGE, k - 1)
                    if u0 < math.exp(-e_top):
                        res = 0.0
                        break
                    if u1 < math.exp(-e_bot):
                        res = 1.0
                        break
            x = xn
        out[i] = res
        steps[i] = k
