"""Command-line front end.

``twophase COMMAND --config FILE [overrides]`` reads an experiment config
(YAML or JSON, schema in ``docs/config-schema.md``), runs one command and
writes its tables to ``--out`` (default: the config's ``out``).  Every CSV
starts with ``#`` comment lines carrying the command, the config hash, the
seed and the resolved config; every JSON report carries the same under
``provenance``.  Feeding that config back reproduces the file bit for bit.

Exit codes: 0 success, 1 validation failure (model rejected, hypotheses
not met, or acceptance criteria failing), 2 runtime error.  Errors are
reported on stderr as ``{"error": {...}}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .analytic import closed_forms, hitting_prob, onset_tail
from .config import ExperimentConfig, _canonical, apply_overrides, load_config
from .errors import ModelError
from .model import Constant, TwoPhaseModel, is_reflecting, validate_model
from .regeneration import (
    classify,
    classify_with_diagnostic,
    divergence_diagnostic,
    make_rng,
    sample_onsets,
    simulate_chain,
)
from .simulate import PathConfig, estimate_speed, hitting_monte_carlo

COMMANDS = ("validate", "classify", "speed", "chain", "onset-dist", "hitting",
            "closed-forms", "generate-thm2", "verify")


class ValidationFailure(Exception):
    """Raised for exit code 1 when a report is produced but does not pass."""


# --------------------------------------------------------------------------
# output helpers

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_canonical(obj), indent=2, sort_keys=True) + "\n")


def _report(cfg: ExperimentConfig, command: str, result) -> dict:
    return {"provenance": cfg.provenance(command), "result": result}


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def _write_csv(path: Path, cfg: ExperimentConfig, command: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in cfg.header_lines(command):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _num(v) for v in row])


def _out_dir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _path_config(cfg: ExperimentConfig) -> PathConfig:
    r = cfg.run
    return PathConfig(dt=float(r["dt"]), horizon=float(r["horizon"]), seed=cfg.seed,
                      max_steps=r["max_steps"], bridge_correction=bool(r["bridge_correction"]))


def _constants(m: TwoPhaseModel):
    if not (isinstance(m.bT, Constant) and isinstance(m.gamma, Constant) and isinstance(m.bR, Constant)):
        raise ModelError("closed forms need constant bT, bR and gamma (or a closed_forms block)")
    return {"b": m.bT.value, "c": m.bR.value, "gamma": m.gamma.value, "a": m.a, "x0": m.x0}


# --------------------------------------------------------------------------
# commands

def cmd_validate(cfg, m, out):
    rep = validate_model(m)
    d = rep.to_dict()
    lines = [f"transient condition (bT): {d['transient_condition']}",
             f"recurrent condition (bR): {d['recurrent_condition']}"]
    for name, tails in (("bT", d["bT_tails"]), ("bR", d["bR_tails"])):
        for side, t in zip(("left", "right"), tails):
            lines.append(f"  {name} {side} tail divergent={t['divergent']}: {t['reason']}")
    lines += [f"  check {k}: {v}" for k, v in d["checks"]]
    lines.append("OK" if rep.ok else "FAILED")
    text = "\n".join(lines)
    print(text)
    (out / "validate.txt").write_text(
        "".join(f"# {h}\n" for h in cfg.header_lines("validate")) + text + "\n")
    _write_json(out / "validate.json", _report(cfg, "validate", d))
    if not rep.ok:
        raise ValidationFailure("an integral condition fails")


def cmd_classify(cfg, m, out):
    n = cfg.run["chain_length"]
    v = classify_with_diagnostic(m, int(n), seed=cfg.seed) if n else classify(m)
    d = v.to_dict()
    print(json.dumps(d))
    _write_json(out / "classify.json", _report(cfg, "classify", d))


def cmd_speed(cfg, m, out):
    pc = _path_config(cfg)
    est = estimate_speed(m, pc, int(cfg.run["replicates"]), parallel=int(cfg.run["parallel"]))
    rows = [(name, val, hw, est.closed_form, est.replicates, est.cycles)
            for name, val, hw in est.rows()]
    header = ["estimator", "estimate", "ci_halfwidth", "closed_form", "replicates", "cycles"]
    _write_csv(out / "speed.csv", cfg, "speed", header, rows)
    for r in rows:
        print(f"{r[0]:>12}: {r[1]:.6f} +/- {r[2]:.6f}   closed form: {r[3]}")


def cmd_chain(cfg, m, out):
    n = int(cfg.run["chain_length"])
    chain = simulate_chain(m, n, seed=cfg.seed)
    rep = divergence_diagnostic(m, chain)
    chain.to_csv(out / "chain.csv", H=rep.H, header_lines=cfg.header_lines("chain"))
    _write_json(out / "divergence.json", _report(cfg, "chain", rep.to_dict()))
    print(json.dumps({"suggestion": rep.suggestion.value, "r2": rep.log_fit_r2,
                      "tail_estimate": rep.tail_estimate, "L_n": chain.points[-1]}))


def cmd_onset_dist(cfg, m, out):
    n = int(cfg.run["onset_draws"])
    draws = sample_onsets(m, m.x0, n, make_rng(cfg.seed)) - m.x0
    probes = cfg.run["probes"]
    if probes is None:
        probes = np.quantile(draws, [0.1, 0.25, 0.5, 0.75, 0.9, 0.99])
    rows = []
    for y in np.asarray(probes, dtype=float):
        emp = float(np.mean(draws > y))
        rows.append((y, emp, onset_tail(m, m.x0, y), math.sqrt(emp * (1 - emp) / n), n))
    header = ["y", "empirical_tail", "analytic_tail", "standard_error", "draws"]
    _write_csv(out / "onset_dist.csv", cfg, "onset-dist", header, rows)
    for r in rows:
        print(f"y={r[0]:.6g}  empirical={r[1]:.6f}  analytic={r[2]:.6f}  se={r[3]:.2g}")


def cmd_hitting(cfg, m, out):
    h = cfg.run["hitting"]
    g0 = float(m.gamma(m.x0))
    z = m.x0 - g0 if h.get("z") is None else float(h["z"])
    c = g0 if h.get("c") is None else float(h["c"])
    paths = int(h.get("paths", 10_000))
    dt = float(h.get("dt", 1e-4))
    if h.get("monte_carlo", True):
        est = hitting_monte_carlo(m, z, c, paths, dt=dt, seed=cfg.seed,
                                  bridge_correction=bool(cfg.run["bridge_correction"]),
                                  parallel=int(cfg.run["parallel"]))
        row = (z, c, est.analytic, est.probability, est.standard_error, paths, est.censored, dt)
    else:
        row = (z, c, float(hitting_prob(m, z, c)), None, None, 0, 0, dt)
    header = ["z", "c", "analytic", "monte_carlo", "standard_error", "paths", "censored", "dt"]
    _write_csv(out / "hitting.csv", cfg, "hitting", header, [row])
    print(f"analytic={row[2]:.10g}  monte_carlo={row[3]}  se={row[4]}")


def cmd_closed_forms(cfg, m, out):
    p = cfg.run["closed_forms"] or _constants(m)
    b, c, g = float(p["b"]), float(p["c"]), float(p["gamma"])
    a, x0 = float(p.get("a", 1.0)), float(p.get("x0", 0.0))
    bundle = closed_forms(b, c, g, a, x0).to_dict()
    bundle["inputs"] = {"b": b, "c": c, "gamma": g, "a": a, "x0": x0}
    print(json.dumps(_canonical(bundle)))
    _write_json(out / "closed_forms.json", _report(cfg, "closed-forms", bundle))


def cmd_generate_thm2(cfg, m, out):
    from .adversarial import theorem2_generator

    p = dict(cfg.run["thm2"] or {})
    if "b" not in p or "gamma" not in p:
        if not (isinstance(m.bT, Constant) and isinstance(m.gamma, Constant)):
            raise ModelError("generate-thm2 needs constant bT and gamma, or a thm2 block")
        p.setdefault("b", m.bT.value)
        p.setdefault("gamma", m.gamma.value)
    p.setdefault("x0", m.x0)
    drift = theorem2_generator(float(p["b"]), float(p["gamma"]), float(p["x0"]), p.get("upper"))
    sc = drift.scale
    rows = int(p.get("table_intervals", 1000))
    model = m.replace(bR=drift, bT=Constant(float(p["b"])), gamma=Constant(float(p["gamma"])),
                      x0=float(p["x0"]), z0=None)
    _write_json(out / "thm2_drift.json", _report(cfg, "generate-thm2", {
        "drift": drift.to_dict(), "bound": sc.bound, "intervals": len(sc.areas),
        "model": model.to_dict()}))
    starts = sc.offset + np.arange(2, 2 + min(rows, len(sc.areas)))
    ends = starts + 1.0 / np.arange(2, 2 + len(starts)) ** 2
    table = [(j, s, e, A, sc.U(s), sc.U(e), e * e)
             for j, s, e, A in zip(range(2, 2 + len(starts)), starts, ends, sc.areas)]
    _write_csv(out / "thm2_scale.csv", cfg, "generate-thm2",
               ["j", "start", "end", "bump_area", "u_start", "u_end", "end_squared"], table)
    print(json.dumps({"bound": sc.bound, "intervals": len(sc.areas), "table_rows": len(table)}))


HANDLERS = {
    "validate": cmd_validate, "classify": cmd_classify, "speed": cmd_speed, "chain": cmd_chain,
    "onset-dist": cmd_onset_dist, "hitting": cmd_hitting, "closed-forms": cmd_closed_forms,
    "generate-thm2": cmd_generate_thm2,
}


def run(command: str, cfg: ExperimentConfig) -> int:
    """Run one command; returns the exit status (exceptions propagate)."""
    m = cfg.build_model()
    if command != "validate":
        validate_model(m)
    out = _out_dir(cfg)
    try:
        HANDLERS[command](cfg, m, out)
    except ValidationFailure:
        return 1
    return 0


def run_verify(seed, parallel, budget, out) -> int:
    from .acceptance import DEFAULT_SEED, Suite

    env = os.environ.get("TWOPHASE_SEED")
    if seed is None and env:
        seed = int(env)
    seed = DEFAULT_SEED if seed is None else seed
    suite = Suite(seed=seed, parallel=parallel, budget=budget)
    results = suite.run_all(echo=lambda s: print(s, flush=True))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    if out is not None:
        p = Path(out)
        p.mkdir(parents=True, exist_ok=True)
        _write_json(p / "verify.json", {"provenance": {"command": "verify", "seed": seed,
                                                       "budget": budget},
                                        "result": [r.to_dict() for r in results]})
    return 0 if passed == len(results) else 1


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twophase", description="Two-phase diffusion experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="YAML or JSON experiment config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--horizon", type=float)
    ap.add_argument("--replicates", type=int, help="replicates (speed) or paths (hitting)")
    ap.add_argument("--chain-length", type=int)
    ap.add_argument("--parallel", type=int, help="worker threads")
    ap.add_argument("--budget", type=float, default=1.0,
                    help="verify only: sample-size multiplier (1 = acceptance budget)")
    return ap


def _error(exc: BaseException, code: int) -> int:
    doc = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return run_verify(args.seed, args.parallel or 4, args.budget, args.out)
        if not args.config:
            raise ModelError(f"{args.command} needs --config")
        cfg = load_config(args.config)
        extra = {}
        if args.command == "hitting":
            extra["hitting"] = dict(cfg.run["hitting"])
            if args.replicates is not None:
                extra["hitting"]["paths"] = args.replicates
            if args.dt is not None:
                extra["hitting"]["dt"] = args.dt
        cfg = apply_overrides(cfg, seed=args.seed, out=args.out, dt=args.dt, horizon=args.horizon,
                              replicates=args.replicates, chain_length=args.chain_length,
                              parallel=args.parallel, **extra)
        return run(args.command, cfg)
    except ModelError as exc:
        return _error(exc, 1)
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        return _error(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
