"""Batch front end: validate assumptions, run trajectories, sweep parameters.

Exit codes are a contract for scripting:

    0  success / all assumptions pass
    1  an assumption check failed
    2  configuration error (missing file, malformed JSON, bad values)
    3  integration failure (partial outputs are still written)

A run config is a single JSON document:

    {
      "instance": "G2",                  // or "problem": {...} inline
      "schedule": {"family": "shifted_power", "alpha": 1.5, "t0": 12,
                   "scale": 0.04},
      "params": {"gamma": 3.0, "lambda": 2.0, "theta": 0.9},
      "u0": "zero" | "random(7)" | [..], // default "zero"
      "v0": "zero" | "random(7)" | [..], // default "zero"
      "t_end": 2000.0,
      "cadence": 0.5,
      "controls": {"rel_tol": 1e-8, ...},// optional
      "out_dir": "out"                   // optional, --out overrides
    }

``run`` writes trajectory.csv, diagnostics.csv, report.json, and
metadata.json into the output directory. All numeric output is plain
full-precision decimal; no locale formatting anywhere.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gallery
from .flow import (
    IntegrationError,
    IntegratorControls,
    integrate,
    write_metadata_json,
    write_trajectory_csv,
)
from .lyapunov import (
    convergence_verdicts,
    lyapunov_inequality_check,
    write_diagnostics_csv,
)
from .oracles import problem_from_json
from .schedules import DynamicsParams, PenaltySchedule, condition_H_check, validate_growth

EXIT_OK = 0
EXIT_ASSUMPTION = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3


class ConfigError(Exception):
    pass


class _RunSetup:
    """Config file resolved into live objects."""

    def __init__(self, doc: dict, overrides: argparse.Namespace):
        try:
            self.instance = self._resolve_instance(doc)
            self.schedule = PenaltySchedule.from_json(doc["schedule"])
            p = doc["params"]
            self.params = DynamicsParams(
                gamma=float(p["gamma"]), lam=float(p["lambda"]),
                theta=float(p.get("theta", 0.9)))
            n = self.instance.dimension
            self.u0 = self._resolve_vector(doc.get("u0", "zero"), n, "u0")
            self.v0 = self._resolve_vector(doc.get("v0", "zero"), n, "v0")
            self.t_end = float(getattr(overrides, "horizon", None)
                               or doc.get("t_end", 100.0))
            self.cadence = float(getattr(overrides, "cadence", None)
                                 or doc.get("cadence", 0.1))
            self.controls = IntegratorControls(**doc.get("controls", {}))
            out = getattr(overrides, "out", None) or doc.get("out_dir", "out")
            self.out_dir = Path(out)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if self.t_end <= 0 or self.cadence <= 0:
            raise ConfigError("t_end and cadence must be positive")

    @staticmethod
    def _resolve_instance(doc: dict) -> gallery.GalleryInstance:
        if "instance" in doc:
            try:
                return gallery.load_instance(doc["instance"])
            except FileNotFoundError as exc:
                raise ConfigError(str(exc)) from exc
        if "problem" in doc:
            problem, constraint = problem_from_json(doc["problem"])
            ref = doc.get("reference")
            if ref is not None:
                z = np.array(ref["z"], dtype=float)
                nu = np.array(ref.get("nu", []), dtype=float)
                phi_z = float(ref.get("phi_z", problem.value(z)))
            else:
                # No reference supplied: compute one from the stationarity
                # system so validation and diagnostics have an anchor.
                G, g = problem.affine_gradient
                if constraint.kind == "zero":
                    z, nu = gallery.solve_reference_kkt(G, -g)
                else:
                    z, nu = gallery.solve_reference_kkt(
                        G, -g, constraint.matrix, constraint.rhs)
                phi_z = problem.value(z)
            inst = gallery.GalleryInstance(
                name="inline", problem=problem, constraint=constraint,
                z=z, phi_z=phi_z, nu=nu, tags=())
            gallery.verify_reference(inst)
            return inst
        raise ConfigError("config needs either 'instance' or 'problem'")

    @staticmethod
    def _resolve_vector(spec, n: int, label: str) -> np.ndarray:
        if isinstance(spec, str):
            if spec == "zero":
                return np.zeros(n)
            if spec.startswith("random(") and spec.endswith(")"):
                seed = int(spec[7:-1])
                return np.random.default_rng(seed).standard_normal(n)
            raise ConfigError(f"{label}: unknown spec {spec!r}")
        vec = np.asarray(spec, dtype=float).reshape(-1)
        if vec.shape != (n,):
            raise ConfigError(f"{label}: expected length {n}, got {vec.shape}")
        return vec


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc


def _validation_reports(setup: _RunSetup) -> dict:
    growth = validate_growth(setup.schedule, setup.params)
    p = -setup.instance.problem.gradient(setup.instance.z)
    cond = condition_H_check(setup.instance.constraint, p, setup.schedule,
                             horizon=max(setup.t_end, 100.0))
    eps = setup.params.epsilon
    identity_gap = abs(eps - (1.0 + setup.params.lam * setup.params.gamma)
                       * setup.params.k_max)
    return {
        "growth": growth.to_json(),
        "condition_H": cond.to_json(),
        "constants": {
            "k_max": setup.params.k_max,
            "epsilon": eps,
            "epsilon_identity_gap": identity_gap,
        },
        "passed": bool(growth.passed and cond.passed),
    }


def cmd_validate(args) -> int:
    doc = _load_config(args.config)
    setup = _RunSetup(doc, args)
    report = _validation_reports(setup)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_ASSUMPTION


def _run_once(setup: _RunSetup, force: bool):
    """Shared by run and sweep; returns (trajectory, validation, error)."""
    validation = _validation_reports(setup)
    if not validation["passed"] and not force:
        return None, validation, None
    inst = setup.instance
    try:
        traj = integrate(
            inst.problem, inst.constraint, setup.schedule, setup.params,
            setup.u0, setup.v0, setup.t_end, setup.controls,
            cadence=setup.cadence, reference=inst.reference(),
            certified_k=validation["growth"]["certified_k"],
            ablation=force)
    except IntegrationError as exc:
        return exc.trajectory, validation, exc
    return traj, validation, None


def _write_outputs(setup: _RunSetup, traj, validation, error) -> dict:
    out = setup.out_dir
    out.mkdir(parents=True, exist_ok=True)
    inst = setup.instance
    certified_k = validation["growth"]["certified_k"]
    report: dict = {"validation": validation}
    if traj is not None:
        write_trajectory_csv(out / "trajectory.csv", traj)
        write_metadata_json(out / "metadata.json", traj)
        write_diagnostics_csv(out / "diagnostics.csv", traj, inst.problem,
                              inst.constraint, setup.schedule, setup.params,
                              certified_k, z=inst.z)
        verdicts = convergence_verdicts(traj, inst, setup.schedule, setup.params,
                                        certified_k=certified_k)
        lyap = lyapunov_inequality_check(
            traj, inst.z, inst.problem, inst.constraint, setup.schedule,
            setup.params, certified_k, mu=inst.mu)
        report["convergence"] = verdicts.to_json()
        report["lyapunov"] = {
            "status": lyap.status,
            "max_margin": lyap.max_margin,
            "status_strong": lyap.status_strong,
            "max_margin_strong": lyap.max_margin_strong,
        }
        report["summary"] = {
            "horizon": float(traj.t[-1]),
            "phi_gap": abs(float(traj.phi[-1]) - inst.phi_z),
            "beta_psi": float(traj.beta[-1] * traj.psi[-1]),
            "y_norm": float(np.linalg.norm(traj.y[-1])),
            "verdict_counts": verdicts.verdict_counts(),
        }
    if error is not None:
        report["error"] = {"type": type(error).__name__, "message": str(error),
                           "t_last": error.state[0] if error.state else None}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def cmd_run(args) -> int:
    doc = _load_config(args.config)
    setup = _RunSetup(doc, args)
    traj, validation, error = _run_once(setup, args.force)
    if traj is None and error is None:
        print("assumption checks failed; rerun with --force to ablate",
              file=sys.stderr)
        print(json.dumps(validation, indent=2))
        return EXIT_ASSUMPTION
    report = _write_outputs(setup, traj, validation, error)
    if error is not None:
        print(f"integration failed: {error}", file=sys.stderr)
        return EXIT_INTEGRATION
    s = report["summary"]
    counts = s["verdict_counts"]
    print(f"horizon={s['horizon']:g} phi_gap={s['phi_gap']:.6g} "
          f"beta_psi={s['beta_psi']:.6g} y_norm={s['y_norm']:.6g} "
          f"verdicts: pass={counts.get('pass', 0)} fail={counts.get('fail', 0)} "
          f"inconclusive={counts.get('inconclusive', 0)} "
          f"not_claimed={counts.get('not_claimed', 0)}")
    return EXIT_OK


SWEEP_AXES = ("gamma", "lambda", "alpha", "t0", "theta")

SWEEP_HEADER = ("axis,value,status,phi_gap,beta_psi,y_norm,lyap_max_margin,"
                "pass,fail,inconclusive,not_claimed")


def _apply_axis(doc: dict, axis: str, value: float) -> dict:
    new = json.loads(json.dumps(doc))  # deep copy
    if axis in ("gamma", "lambda", "theta"):
        new["params"][axis] = value
    else:
        if new["schedule"].get("family") != "shifted_power":
            raise ConfigError(f"axis {axis!r} requires a shifted_power schedule")
        new["schedule"][axis] = value
    return new


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    _RunSetup(doc, args)  # validate the base config up front
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}")
    rows = []
    for value in args.values:
        row = {"axis": args.axis, "value": value, "status": "ok",
               "phi_gap": "", "beta_psi": "", "y_norm": "",
               "lyap_max_margin": "", "pass": "", "fail": "",
               "inconclusive": "", "not_claimed": ""}
        try:
            sub = _RunSetup(_apply_axis(doc, args.axis, value), args)
        except ConfigError as exc:
            row["status"] = f"invalid: {exc}"
            rows.append(row)
            continue
        sub.out_dir = Path(args.out or doc.get("out_dir", "out")) / f"{args.axis}={value:g}"
        traj, validation, error = _run_once(sub, args.force)
        if traj is None and error is None:
            row["status"] = "assumption_fail"
            rows.append(row)
            continue
        report = _write_outputs(sub, traj, validation, error)
        if error is not None:
            row["status"] = f"failed: {type(error).__name__}"
            rows.append(row)
            continue
        s = report["summary"]
        counts = s["verdict_counts"]
        row.update({
            "phi_gap": "%.17g" % s["phi_gap"],
            "beta_psi": "%.17g" % s["beta_psi"],
            "y_norm": "%.17g" % s["y_norm"],
            "lyap_max_margin": "%.17g" % report["lyapunov"]["max_margin"],
            "pass": counts.get("pass", 0), "fail": counts.get("fail", 0),
            "inconclusive": counts.get("inconclusive", 0),
            "not_claimed": counts.get("not_claimed", 0),
        })
        rows.append(row)
    out = Path(args.out or doc.get("out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    table = out / "sweep_summary.csv"
    with open(table, "w", newline="") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for row in rows:
            fh.write(",".join(str(row[k]) for k in
                              ("axis", "value", "status", "phi_gap", "beta_psi",
                               "y_norm", "lyap_max_margin", "pass", "fail",
                               "inconclusive", "not_claimed")) + "\n")
    print(f"wrote {table} ({len(rows)} rows)")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="penflow",
        description="Penalized second-order flow simulator and verifier")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--out", default=None, help="output directory override")
    common.add_argument("--horizon", type=float, default=None,
                        help="override t_end")
    common.add_argument("--cadence", type=float, default=None,
                        help="override output cadence")
    common.add_argument("--force", action="store_true",
                        help="proceed despite failed assumption checks (ablation)")

    sub.add_parser("validate", parents=[common],
                   help="check growth and integrability assumptions")
    sub.add_parser("run", parents=[common],
                   help="integrate one trajectory and write reports")
    sweep = sub.add_parser("sweep", parents=[common],
                           help="run a one-axis parameter sweep")
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True, nargs="*", type=float)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"validate": cmd_validate, "run": cmd_run, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
