"""Command-line front end: every subcommand writes CSV tables (plus optional SVG) and a manifest."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, algebra, carleman, hum, model, semilinear, spectral, svg
from .dynamics import TimeGrid, propagator
from .errors import ConfigError, DegCtrlError, RankLostAtIterate

SUBCOMMANDS = ("spectrum", "kalman", "control", "sweep", "observability", "carleman", "semilinear", "suite")
DEFAULT_EPSILONS = (1e-2, 1e-3, 1e-4, 1e-5)


class Run:
    """Output directory, atomic writers and the manifest being built."""

    def __init__(self, args, source: str):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.stages: dict[str, float] = {}
        self.source = source

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        if name not in self.files:
            self.files.append(name)
        return path

    def write_with(self, name: str, writer, *args) -> Path:
        """Run a module CSV writer into a temporary file, then rename."""
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
        os.close(fd)
        try:
            writer(*args, tmp)
            os.replace(tmp, self.out / name)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)
        if name not in self.files:
            self.files.append(name)
        return self.out / name

    def write_rows(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return self.write_text(name, buf.getvalue())

    def plot(self, name: str, text: str) -> None:
        if not self.args.no_plots:
            self.write_text(name, text)

    def stage(self, name: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.stages[name] = round(time.perf_counter() - self.t, 6)

        return _Timer()

    def manifest(self) -> dict:
        a = self.args
        return {
            "subcommand": a.command,
            "source": self.source,
            "modes": a.modes,
            "nodes": a.nodes,
            "steps": a.steps,
            "seed": a.seed,
            "epsilons": list(_epsilons(a)),
            "out": str(self.out),
            "version": __version__,
            "wall_clock_seconds": self.stages,
            "files": list(self.files),
        }


def _epsilons(args):
    if getattr(args, "epsilons", None):
        try:
            return tuple(float(e) for e in args.epsilons.split(","))
        except ValueError:
            raise ConfigError(f"cannot parse epsilon list {args.epsilons!r}", field="epsilons") from None
    return DEFAULT_EPSILONS


def _problems(args) -> list:
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}", field="config") from None
        return [model.build_problem(text)]
    if args.preset == "all":
        return [model.preset(name) for name in model.PRESETS]
    return [model.preset(args.preset)]


_BASES: dict = {}


def _basis(args, problem):
    key = (id(problem), args.nodes, args.modes)
    hit = _BASES.get(key)
    if hit is None or hit[0] is not problem:
        hit = (problem, spectral.compute_basis(problem, N=args.nodes, M=args.modes))
        _BASES[key] = hit
    return hit[1]


def _y0(problem, basis, components=None):
    Y0 = np.zeros((basis.M, problem.n))
    Y0[0] = 1.0 if components is None else components
    return Y0


def _y0_components(args, problem):
    if getattr(args, "y0", None):
        vals = [float(v) for v in args.y0.split(",")]
        if len(vals) != problem.n:
            raise ConfigError(f"--y0 needs {problem.n} components, got {len(vals)}", field="y0")
        return np.array(vals)
    return None


# --------------------------------------------------------------------------
# subcommands


def cmd_spectrum(run: Run, problem) -> dict:
    with run.stage(f"spectrum:{problem.name}"):
        basis = _basis(run.args, problem)
    ref = spectral.benchmark_eigenvalues(problem, basis.M)
    run.write_with(f"spectrum_{problem.name}.csv", lambda path: spectral.write_eigenvalues_csv(basis, path, ref))
    out = {"orthonormality": spectral.orthonormality_error(basis),
           "max_residual_over_lambda": float(np.max(spectral.rayleigh_residuals(basis) / basis.eigenvalues))}
    if ref is not None:
        k = min(5, basis.M)
        out["max_rel_error_first5"] = float(np.max(np.abs(basis.eigenvalues[:k] - ref[:k]) / ref[:k]))
    return out


def cmd_kalman(run: Run, problem) -> dict:
    basis = _basis(run.args, problem)
    with run.stage(f"kalman:{problem.name}"):
        rep = algebra.kalman_report(basis, problem.D.entries, problem.A, problem.B, basis.M)
    run.write_with(f"kalman_{problem.name}.csv", algebra.write_kalman_csv, rep)
    return {"verdict": rep.verdict, "first_failing": rep.first_failing}


def cmd_control(run: Run, problem) -> dict:
    args = run.args
    basis = _basis(args, problem)
    grid = TimeGrid(args.steps, problem.T)
    eps = args.epsilon
    with run.stage(f"control:{problem.name}"):
        res = hum.minimize_dual(problem, basis, eps, _y0(problem, basis, _y0_components(args, problem)), grid)
    rows = [("epsilon", eps), ("terminal_norm", res.terminal_norm), ("control_cost", res.control_cost),
            ("dual_value", res.dual_value), ("cg_iterations", res.cg_iterations),
            ("optimality_residual", res.optimality_residual), ("ledger_lhs", res.ledger_lhs),
            ("ledger_rhs", res.ledger_rhs)]
    run.write_rows(f"control_{problem.name}.csv", ["quantity", "value"], rows)
    V = res.control.values
    mass = propagator(problem, basis, grid).injection.mass
    vt = np.sqrt(np.einsum("kpc,pq,kqc->k", V, mass, V))
    run.write_rows(f"control_profile_{problem.name}.csv", ["t", "state_norm", "control_norm"],
                   [(float(grid.times[k]), float(res.state.norms()[k]), float(vt[k]) if k < len(vt) else 0.0)
                    for k in range(grid.L + 1)])
    return {"terminal_norm": res.terminal_norm, "control_cost": res.control_cost}


def _sweep(run: Run, problem, basis, Y0, stop_at_floor=True):
    grid = TimeGrid(run.args.steps, problem.T)
    with run.stage(f"sweep:{problem.name}"):
        table = hum.epsilon_sweep(problem, basis, Y0, _epsilons(run.args), grid, stop_at_floor=stop_at_floor)
    run.write_with(f"sweep_{problem.name}.csv", hum.write_sweep_csv, table)
    run.plot(f"sweep_{problem.name}.svg", svg.line_plot(
        {"terminal norm": (table.epsilons, table.terminal_norms), "control cost": (table.epsilons, table.control_costs)},
        "epsilon", "value", f"penalized HUM sweep, {problem.name}", logx=True, logy=True))
    return table


def cmd_sweep(run: Run, problem) -> dict:
    basis = _basis(run.args, problem)
    table = _sweep(run, problem, basis, _y0(problem, basis, _y0_components(run.args, problem)))
    return {"ratios": [float(r) for r in table.ratios()], "floor": table.floor_reached}


def _observability(run: Run, problem, basis):
    grid = TimeGrid(run.args.steps, problem.T)
    with run.stage(f"observability:{problem.name}"):
        est = hum.observability_estimate(problem, basis, grid, n_samples=20, power_iterations=200, seed=run.args.seed)
    run.write_rows(f"observability_{problem.name}.csv", ["step", "estimate"],
                   [(i + 1, float(v)) for i, v in enumerate(est.trace)])
    return est


def cmd_observability(run: Run, problem) -> dict:
    est = _observability(run, problem, _basis(run.args, problem))
    return {"estimate": est.value, "witness_mode": est.witness_mode}


def _omega0(problem):
    lo, hi = problem.omega
    mid, half = 0.5 * (lo + hi), 0.1 * (hi - lo)
    return (mid - half, mid + half)


def cmd_carleman(run: Run, problem) -> dict:
    with run.stage(f"carleman:{problem.name}"):
        c0 = carleman.compute_c0(problem.a)
        sigma, cert = carleman.build_sigma(_omega0(problem), problem.omega)
        params = carleman.select_parameters(problem.n, c0, sigma)
        report = carleman.verify_weights(params, problem.a, problem.T)
    rows = [("c0", c0), ("c", params.c), ("rho", params.rho), ("lambda", params.lambda_w),
            ("sigma_peak", cert.critical_point), ("min_abs_sigma_x_outside", cert.min_abs_slope_outside),
            ("theta_ratio_T4_T2", report.theta_ratio)]
    rows += [(f"slack: {k}", float(v)) for k, v in params.slacks.items()]
    rows += [(f"check: {k}", int(v)) for k, v in report.checks.items()]
    run.write_rows(f"carleman_{problem.name}.csv", ["quantity", "value"], rows)
    run.write_with(f"carleman_profiles_{problem.name}.csv", carleman.write_profiles_csv, params, problem.a)
    run.write_with(f"carleman_theta_{problem.name}.csv", carleman.write_theta_csv, problem.T)
    if not run.args.no_plots:
        t = np.linspace(0, problem.T, 42)[1:-1]
        x = np.linspace(0, 1, 40)
        w = carleman.weights_eval(params, problem.a, t[None, :], x[:, None], problem.T)
        run.plot(f"carleman_phi_{problem.name}.svg",
                 svg.field_map(w.phi, "t", "x", f"phi, {problem.name}", (t[0], t[-1], 0.0, 1.0)))
    return {"passed": report.passed, "c": params.c}


def cmd_semilinear(run: Run, problem) -> dict:
    args = run.args
    basis = _basis(args, problem)
    grid = TimeGrid(args.steps, problem.T)
    F = semilinear.sine_coupling(0.1)
    with run.stage(f"semilinear:{problem.name}"):
        history, fp = semilinear.fixed_point_control(problem, basis, F, _y0(problem, basis), args.epsilon, grid)
    run.write_with(f"semilinear_{problem.name}.csv", semilinear.write_history_csv, history)
    return {"iterations": len(history), "terminal_norm": fp.result.terminal_norm}


# --------------------------------------------------------------------------
# suite


def _suite_rows(run: Run, problem) -> list:
    args = run.args
    rows = []
    expect_pass = problem.name != "rank-deficient"

    def add(check, observed, ok, note=""):
        if ok:
            status = "pass"
        else:
            status = "fail" if expect_pass else "expected-fail"
        rows.append((problem.name, check, observed, status, note))

    spec_info = cmd_spectrum(run, problem)
    if "max_rel_error_first5" in spec_info:
        e = spec_info["max_rel_error_first5"]
        rows.append((problem.name, "spectrum benchmark rel. error", f"{e:.3e}", "pass" if e < 1e-4 else "fail", ""))
    basis = _basis(args, problem)
    rep = algebra.kalman_report(basis, problem.D.entries, problem.A, problem.B, basis.M)
    run.write_with(f"kalman_{problem.name}.csv", algebra.write_kalman_csv, rep)
    add("kalman rank condition", rep.verdict, rep.passed)
    Y0 = _y0(problem, basis, None if expect_pass else np.eye(problem.n)[-1])
    table = _sweep(run, problem, basis, Y0, stop_at_floor=False)
    tn = table.terminal_norms
    add("terminal norm decreases with epsilon", ";".join(f"{v:.4g}" for v in tn), bool(np.all(np.diff(tn) < 0)))
    ratios = table.ratios()
    add("consecutive ratios in [2.5, 4.5]", ";".join(f"{r:.3f}" for r in ratios),
        bool(np.all((ratios >= 2.5) & (ratios <= 4.5))))
    est = _observability(run, problem, basis)
    add("observability estimate finite", f"{est.value:.6g}", bool(np.isfinite(est.value)))
    try:
        info = cmd_carleman(run, problem)
        rows.append((problem.name, "carleman parameters and weight signs", f"c={info['c']:.6g}",
                     "pass" if info["passed"] else "fail", ""))
    except DegCtrlError as exc:
        rows.append((problem.name, "carleman parameters and weight signs", type(exc).__name__, "fail", str(exc)))
    try:
        info = cmd_semilinear(run, problem)
        add("semilinear fixed point", f"{info['iterations']} iterations", True)
    except RankLostAtIterate as exc:
        add("semilinear fixed point", "rank lost", False, str(exc))
    except DegCtrlError as exc:
        add("semilinear fixed point", type(exc).__name__, False, str(exc))
    return rows


def cmd_suite(run: Run, problems) -> dict:
    rows = []
    for p in problems:
        rows += _suite_rows(run, p)
    run.write_rows("suite_summary.csv", ["preset", "check", "observed", "status", "note"], rows)
    counts = {}
    for r in rows:
        counts[r[3]] = counts.get(r[3], 0) + 1
    return counts


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degctrl", description="Controllability experiments for degenerate coupled parabolic systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--preset", default="all" if name == "suite" else "jordan-cascade",
                         help="preset name, or 'all'")
        src.add_argument("--config", help="INI problem description")
        p.add_argument("--modes", type=int, default=16)
        p.add_argument("--nodes", type=int, default=2000)
        p.add_argument("--steps", type=int, default=128)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="results")
        p.add_argument("--no-plots", action="store_true")
        p.add_argument("--epsilon", type=float, default=1e-3)
        p.add_argument("--epsilons", help="comma separated, strictly decreasing")
        p.add_argument("--y0", help="components of the initial datum along the first mode")
    return parser


def run(argv=None) -> tuple[int, dict | None]:
    args = build_parser().parse_args(argv)
    try:
        problems = _problems(args)
        source = args.config or args.preset
        r = Run(args, source)
        if args.command == "suite":
            result = {"suite": cmd_suite(r, problems)}
        else:
            handler = globals()[f"cmd_{args.command}"]
            result = {p.name: handler(r, p) for p in problems}
        manifest = r.manifest()
        manifest["results"] = result
        r.write_text("manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        missing = [f for f in r.files if not (r.out / f).exists()]
        if missing:
            raise DegCtrlError(f"outputs missing after run: {missing}")
        print(json.dumps(result, sort_keys=True, default=_jsonable))
        return 0, manifest
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2, None
    except (DegCtrlError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1, None


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    return str(v)


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
