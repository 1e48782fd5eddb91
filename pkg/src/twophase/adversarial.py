"""A recurrent drift that makes a ballistic two-phase diffusion transient.

The recurrent drift is specified through its scale function ``U``.  Off the
intervals ``I_j = [s_j, s_j + 1/j^2]`` (``s_j = x0 - gamma + j``, ``j >= 2``)
the scale grows linearly with slope ``B``; inside ``I_j`` its derivative
carries a smooth bump of area ``A_j`` chosen so that ``U(x) >= x^2`` for
``x >= 2``.  The bump shape is the derivative of the quintic smootherstep
``10 t^3 - 15 t^4 + 6 t^5``, which vanishes to second order at both ends,
so ``U`` is C^2 and the drift ``-(a/2) U''/U'`` is continuous.

Because ``U' = B`` away from the bumps while ``U`` grows quadratically, the
hitting probabilities ``H(s)`` decay like ``1/s^2`` along the regeneration
chain and their sum converges.
"""

from __future__ import annotations

import math

import numpy as np

from . import _core
from .model import FromScale, Provenance, ScaleData

# Extra area per bump on top of what the quadratic lower bound requires.
AREA_MARGIN = 1.0
# Default extent of the bump sequence beyond x0.
DEFAULT_SPAN = 1.0e6


class BumpScale(ScaleData):
    """Scale function with smooth derivative spikes on ``I_j``.

    Parameters
    ----------
    b, gamma, x0 : float
        Transient drift, down-crossing size and start of the two-phase model
        the construction targets; ``x0 - gamma + 2 >= 0`` is required.
    upper : float, optional
        Bumps are placed on every ``I_j`` with ``s_j <= upper``; beyond that the
        scale is linear.  Defaults to ``x0 + 1e6``.
    """

    provenance = Provenance.CLOSED_FORM
    left_divergent = True
    right_divergent = True

    def __init__(self, b: float, gamma: float, x0: float, upper: float | None = None):
        b, gamma, x0 = float(b), float(gamma), float(x0)
        if not (b > 0 and gamma > 0):
            raise ValueError("b and gamma must be positive")
        if x0 - gamma + 2 < 0:
            raise ValueError("the construction needs x0 - gamma + 2 >= 0")
        self.b, self.gamma, self.x0 = b, gamma, x0
        self.upper = float(upper) if upper is not None else x0 + DEFAULT_SPAN
        self.offset = x0 - gamma
        self.z0 = min(x0 - gamma - 1.0, 1.0)
        self.a = 1.0
        J = max(2, int(math.floor(self.upper - self.offset)))
        j = np.arange(2, J + 1, dtype=float)
        starts = self.offset + j
        ends = starts + 1.0 / j**2
        e2 = ends[0]
        zg = self.z0
        self.bound = max(1.0, 4.0 / (2.0 - zg), e2**2 / (e2 - zg))
        B = self.bound
        # U(s_j) and the bump areas, built so that U(e_j) >= e_{j+1}^2.
        next_end = np.append(ends[1:], self.offset + J + 1 + 1.0 / (J + 1) ** 2)
        areas = np.empty(len(j))
        u_start = np.empty(len(j))
        u = B * (starts[0] - zg)
        for i in range(len(j)):
            u_start[i] = u
            need = next_end[i] ** 2 - u - B / j[i] ** 2
            areas[i] = max(0.0, need) + AREA_MARGIN
            u += B * (1.0 if i + 1 < len(j) else 0.0) + areas[i]
        self.intervals = np.column_stack([starts, ends])
        self.areas = areas
        self._p = np.array([B, zg, self.offset, float(J), 0, 0, 0, 0])
        self._xs = areas
        self._ys = u_start
        self.domain = (-math.inf, math.inf)

    # packed representation used by the compiled kernels
    def packed(self):
        return _core.BUMP, self._p, self._xs, self._ys

    def breakpoints(self) -> np.ndarray:
        return self.intervals.ravel()

    def U(self, x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([_core.bump_u(self._p, self._xs, self._ys, v) for v in xa])
        return out if np.ndim(x) else float(out[0])

    def dU(self, x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([_core.bump_du(self._p, self._xs, v) for v in xa])
        return out if np.ndim(x) else float(out[0])

    def d2U(self, x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([_core.bump_d2u(self._p, self._xs, v) for v in xa])
        return out if np.ndim(x) else float(out[0])

    def log_du(self, x):
        return np.log(self.dU(x)) - math.log(self.bound)

    def ratio(self, x):
        return (np.asarray(self.U(x)) - 0.0) / np.asarray(self.dU(x))

    def u(self, x):
        # normalized so that u'(z0) = 1
        return np.asarray(self.U(x)) / self.bound if np.ndim(x) else self.U(x) / self.bound

    def drift(self, x, a: float = 1.0):
        return -0.5 * a * np.asarray(self.d2U(x)) / np.asarray(self.dU(x)) if np.ndim(x) else (
            -0.5 * a * self.d2U(x) / self.dU(x)
        )

    def in_intervals(self, x) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        j = np.floor(xa - self.offset)
        J = len(self.areas) + 1
        inside = (j >= 2) & (j <= J) & ((xa - (self.offset + j)) * j**2 <= 1.0)
        return inside

    def to_dict(self) -> dict:
        return {"kind": "bump_profile", "b": self.b, "gamma": self.gamma, "x0": self.x0, "upper": self.upper}

    def __eq__(self, other):
        return isinstance(other, BumpScale) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(self.to_dict().items()))

    def __repr__(self):
        return f"BumpScale(b={self.b}, gamma={self.gamma}, x0={self.x0}, upper={self.upper})"


def theorem2_generator(b: float, gamma: float, x0: float, upper: float | None = None) -> FromScale:
    """Recurrent drift whose two-phase combination with ``Constant(b)`` is transient.

    Returns a :class:`FromScale` drift backed by :class:`BumpScale`.  The scale
    satisfies ``U(x) >= x^2`` for ``x >= 2`` up to ``upper`` and ``U' = B`` off
    the bump intervals, where ``B`` is ``scale.bound``.
    """
    return FromScale(BumpScale(b, gamma, x0, upper))
