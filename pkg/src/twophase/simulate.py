"""Pathwise simulation of the two-phase diffusion and cycle statistics.

Gaussian increments come from a counter-based stream keyed by
``(seed, replicate, step)``, so results do not depend on how replicates are
distributed over worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .analytic import closed_forms, hitting_prob, pack
from .errors import StepCapExceeded
from .model import Constant, Mode, TwoPhaseModel, is_reflecting
from .rng import _key


@dataclass(frozen=True)
class PathConfig:
    """Discretization settings.

    ``max_steps`` defaults to the number of steps needed to reach the
    horizon.  For cycle sampling it caps the steps of each replicate.
    """

    dt: float = 1e-3
    horizon: float = 100.0
    seed: int = 0
    max_steps: int | None = None
    bridge_correction: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be positive")
        if not self.dt < self.horizon:
            raise ValueError("dt must be smaller than the horizon")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def step_cap(self) -> int:
        return self.max_steps if self.max_steps is not None else self.n_steps


def _packs(m: TwoPhaseModel):
    return (*pack(m.bT), *pack(m.bR), *pack(m.gamma))


def _split(n: int, workers: int):
    workers = max(1, min(workers, n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _run_replicates(m, cfg: PathConfig, n_rep, n_steps, stop_mode, max_cycles, cap, parallel=1, rep_offset=0):
    k0, k1 = _key(cfg.seed)
    packs = _packs(m)
    cyc = np.full((n_rep, cap, K.N_CYCLE_FIELDS), np.nan)
    stats = np.zeros((n_rep, K.N_STATS))

    def job(span):
        lo, hi = span
        K.run_block(
            *packs, m.a, m.x0, cfg.dt, k0, k1, np.int64(rep_offset + lo), np.int64(n_steps),
            stop_mode, np.int64(max_cycles), cfg.bridge_correction, cyc[lo:hi], stats[lo:hi],
        )

    spans = _split(n_rep, parallel)
    if parallel > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(job, spans))
    else:
        for span in spans:
            job(span)
    return cyc, stats


# --------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Grid trajectory with running maximum, down-crossing level and phase."""

    t: np.ndarray
    x: np.ndarray
    xmax: np.ndarray
    level: np.ndarray
    mode: np.ndarray
    seed: int | None = None

    @classmethod
    def from_positions(cls, t, x, gamma) -> "Trajectory":
        """Trajectory of a given path, running maximum tracked at grid points."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        xmax = np.maximum.accumulate(x)
        level = xmax - np.asarray(gamma(xmax))
        mode = (x > level).astype(np.int8)
        return cls(t, x, xmax, level, mode)

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["t", "x", "xmax", "mode"])
            for row in zip(self.t, self.x, self.xmax, self.mode):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])


def simulate_path(m: TwoPhaseModel, cfg: PathConfig, replicate: int = 0) -> Trajectory:
    """Euler-Maruyama path on ``[0, horizon]`` with running maximum and phase."""
    n = cfg.n_steps
    if cfg.step_cap < n:
        raise StepCapExceeded(f"max_steps={cfg.step_cap} is below the {n} steps needed for the horizon")
    k0, k1 = _key(cfg.seed)
    rec_x = np.empty(n + 1)
    rec_xmax = np.empty(n + 1)
    rec_mode = np.empty(n + 1, dtype=np.int8)
    cyc = np.full((0, K.N_CYCLE_FIELDS), np.nan)
    stats = np.zeros(K.N_STATS)
    K.run_path(
        *_packs(m), m.a, m.x0, cfg.dt, k0, k1, np.int64(replicate), np.int64(n), K.STOP_HORIZON,
        np.int64(0), cfg.bridge_correction, rec_x, rec_xmax, rec_mode, cyc, stats,
    )
    level = rec_xmax - np.asarray(m.gamma(rec_xmax))
    return Trajectory(np.arange(n + 1) * cfg.dt, rec_x, rec_xmax, level, rec_mode, cfg.seed)


# --------------------------------------------------------------------------
# cycles

@dataclass(frozen=True)
class CycleStats:
    sigma: float
    tau_hat: float
    L: float
    censored: bool


def first_down_crossing(traj: Trajectory) -> CycleStats:
    """First grid time with ``x <= xmax - gamma(xmax)``; censored if none."""
    hit = np.nonzero(traj.x <= traj.level)[0]
    if hit.size == 0:
        return CycleStats(math.nan, math.nan, math.nan, True)
    i = int(hit[0])
    return CycleStats(float(traj.t[i] - traj.t[0]), math.nan, float(traj.xmax[i]), False)


@dataclass
class CycleTable:
    """Per-cycle records of one or more replicates (cycles in path order)."""

    sigma: np.ndarray
    tau_hat: np.ndarray
    L: np.ndarray
    censored: np.ndarray
    dL: np.ndarray
    replicate: np.ndarray

    def complete(self) -> "CycleTable":
        keep = ~self.censored
        return CycleTable(*(getattr(self, f)[keep] for f in
                            ("sigma", "tau_hat", "L", "censored", "dL", "replicate")))

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if self.censored.size else 0.0

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["sigma", "tau_hat", "L", "censored"])
            for s, t, l, c in zip(self.sigma, self.tau_hat, self.L, self.censored):
                w.writerow([repr(float(s)), repr(float(t)), repr(float(l)), int(c)])


def _table(cyc, stats) -> CycleTable:
    rows = []
    reps = []
    for r in range(cyc.shape[0]):
        n = int(stats[r, K.N_CYCLES]) + int(stats[r, K.PARTIAL] > 0)
        n = min(n, cyc.shape[1])
        rows.append(cyc[r, :n])
        reps.append(np.full(n, r))
    c = np.concatenate(rows) if rows else np.empty((0, K.N_CYCLE_FIELDS))
    return CycleTable(
        sigma=c[:, K.C_SIGMA], tau_hat=c[:, K.C_TAU], L=c[:, K.C_L],
        censored=c[:, K.C_CENSORED] > 0, dL=c[:, K.C_DL],
        replicate=np.concatenate(reps) if reps else np.empty(0, int),
    )


def cycle_sampler(m: TwoPhaseModel, cfg: PathConfig, replicate: int = 0) -> CycleStats:
    """One regeneration cycle from ``x0``: Y segment to ``sigma``, Z segment back to ``L``."""
    cyc, stats = _run_replicates(m, cfg, 1, cfg.step_cap, K.STOP_CYCLES, 1, 1, rep_offset=replicate)
    row = cyc[0, 0]
    return CycleStats(float(row[K.C_SIGMA]), float(row[K.C_TAU]), float(row[K.C_L]), bool(row[K.C_CENSORED] > 0))


def sample_cycles(m: TwoPhaseModel, cfg: PathConfig, cycles_per_replicate: int,
                  replicates: int = 1, parallel: int = 1) -> CycleTable:
    """Consecutive cycles along ``replicates`` independent paths.

    Each path stops after ``cycles_per_replicate`` cycles or ``cfg.step_cap``
    steps; an unfinished cycle is kept and flagged censored.
    """
    cap = cycles_per_replicate + 1
    cyc, stats = _run_replicates(m, cfg, replicates, cfg.step_cap, K.STOP_CYCLES,
                                 cycles_per_replicate, cap, parallel)
    return _table(cyc, stats)


def sample_onsets_pathwise(m: TwoPhaseModel, cfg: PathConfig, paths: int, parallel: int = 1):
    """Onset location ``L`` and ``sigma`` of independent paths (nan if censored)."""
    cyc, stats = _run_replicates(m, cfg, paths, cfg.step_cap, K.STOP_ONSET, 1, 1, parallel)
    return cyc[:, 0, K.C_L].copy(), cyc[:, 0, K.C_SIGMA].copy()


# --------------------------------------------------------------------------
# speed

@dataclass
class SpeedEstimate:
    terminal: float
    terminal_halfwidth: float
    regenerative: float
    regenerative_halfwidth: float
    replicates: int
    cycles: int
    censored_fraction: float
    closed_form: float | None = None
    per_replicate: np.ndarray = field(default=None, repr=False)

    def rows(self):
        out = [
            ("terminal", self.terminal, self.terminal_halfwidth),
            ("regenerative", self.regenerative, self.regenerative_halfwidth),
        ]
        return out


def _constant_phases(m: TwoPhaseModel):
    if not (isinstance(m.bT, Constant) and isinstance(m.gamma, Constant) and isinstance(m.bR, Constant)):
        return None
    if not (m.bT.value > 0 and m.bR.value > 0):
        return None
    return m.bT.value, m.bR.value, m.gamma.value


def estimate_speed(m: TwoPhaseModel, cfg: PathConfig, replicates: int, parallel: int = 1,
                   z: float = 1.959963984540054) -> SpeedEstimate:
    """Terminal ``(X(T) - x0)/T`` and regenerative ratio estimators of the speed.

    Half-widths are normal-approximation confidence half-widths at the level
    given by ``z``; the ratio estimator uses the delta method over the pooled
    completed cycles.
    """
    cyc, stats = _run_replicates(m, cfg, replicates, cfg.n_steps, K.STOP_HORIZON, 0, 0, parallel)
    T = stats[:, K.T_FINAL]
    v = (stats[:, K.X_FINAL] - m.x0) / T
    term = float(v.mean())
    term_hw = float(z * v.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else math.nan
    n = float(stats[:, K.N_CYCLES].sum())
    if n > 1:
        sdl, st = stats[:, K.SUM_DL].sum(), stats[:, K.SUM_T].sum()
        r = sdl / st
        e2 = (stats[:, K.SUM_DL2].sum() - 2 * r * stats[:, K.SUM_DLT].sum() + r * r * stats[:, K.SUM_T2].sum()) / n
        regen_hw = z * math.sqrt(max(e2, 0.0) / n) / (st / n)
    else:
        r, regen_hw = math.nan, math.nan
    partial = float(stats[:, K.PARTIAL].sum())
    cf = None
    const = _constant_phases(m)
    if const is not None:
        b, c, g = const
        cf = closed_forms(b, c, g, m.a).speed
    elif isinstance(m.bT, Constant) and is_reflecting(m.bR) and isinstance(m.gamma, Constant):
        cf = closed_forms(m.bT.value, math.inf, m.gamma.value, m.a).speed
    return SpeedEstimate(term, term_hw, float(r), float(regen_hw), replicates, int(n),
                         partial / max(n + partial, 1.0), cf, v)


# --------------------------------------------------------------------------
# hitting probability by Monte Carlo

@dataclass
class HittingEstimate:
    probability: float
    standard_error: float
    paths: int
    censored: int
    analytic: float

    def to_dict(self):
        return {"monte_carlo": self.probability, "standard_error": self.standard_error,
                "paths": self.paths, "censored": self.censored, "analytic": self.analytic}


def hitting_monte_carlo(m: TwoPhaseModel, z: float, c: float, paths: int, dt: float = 1e-4,
                        seed: int = 0, max_steps: int = 10**8, bridge_correction: bool = True,
                        parallel: int = 1) -> HittingEstimate:
    """Monte Carlo estimate of ``P_z(hit z0 before z + c)`` for the composite diffusion."""
    k0, k1 = _key(seed)
    tk, tp, txs, tys = pack(m.bT)
    rk, rp, rxs, rys = pack(m.bR)
    out = np.empty(paths)
    steps = np.empty(paths, dtype=np.int64)

    def job(span):
        lo, hi = span
        K.hit_block(tk, tp, txs, tys, rk, rp, rxs, rys, m.a, m.z0, float(z), float(c), dt,
                    k0, k1, np.int64(lo), np.int64(max_steps), bridge_correction, out[lo:hi], steps[lo:hi])

    spans = _split(paths, parallel)
    if parallel > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(job, spans))
    else:
        for span in spans:
            job(span)
    done = out >= 0
    p = float(out[done].mean())
    se = math.sqrt(p * (1 - p) / max(done.sum(), 1))
    return HittingEstimate(p, se, paths, int((~done).sum()), float(hitting_prob(m, z, c)))


__all__ = [
    "PathConfig", "Trajectory", "CycleStats", "CycleTable", "SpeedEstimate", "HittingEstimate",
    "simulate_path", "first_down_crossing", "cycle_sampler", "sample_cycles",
    "sample_onsets_pathwise", "estimate_speed", "hitting_monte_carlo", "Mode",
]
