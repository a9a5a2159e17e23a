"""Command-line experiment runner.

``statequil <group> <action> --config c.json [--out DIR] [--seed S]`` runs
one experiment, writes its artifacts plus ``resolved_config.json``,
``summary.json`` and ``manifest.json`` (sha256 of every artifact) into the
output directory, and exits 0 iff every requested tolerance was met.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import itertools
import json
import logging
import sys
import time
import types
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import ensemble as en
from . import maxent as mx
from . import nbody as nb
from . import plotting
from . import potentials as pt
from . import statefield as sf
from . import transport as tr
from . import vlasov as vl

log = logging.getLogger("statequil")

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

COMMANDS = {
    ("nbody", "run"): "nbody",
    ("maxent", "solve"): "maxent",
    ("maxent", "sweep"): "maxent-sweep",
    ("vlasov", "evolve"): "vlasov",
    ("ensemble", "sample"): "ensemble-sample",
    ("ensemble", "wlln"): "ensemble-wlln",
    ("classify", None): "classify",
    ("pipeline", None): "pipeline",
}


class SolverFailure(RuntimeError):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


class Run:
    """Output directory bookkeeping for one experiment."""

    def __init__(self, cfg: dict, out: Path, emit_plot_data: bool, plot: bool):
        self.cfg = cfg
        self.out = out
        self.emit = emit_plot_data or plot
        self.plot = plot
        self.artifacts: list[str] = []
        self.checks: dict = {}
        self.tidy: list = []
        out.mkdir(parents=True, exist_ok=True)
        self.write_json("resolved_config.json", cfg)

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def check(self, name: str, value, tolerance, passed: bool | None = None, kind: str = "max") -> bool:
        if passed is None:
            passed = bool(value <= tolerance) if kind == "max" else bool(value >= tolerance)
        self.checks[name] = {"value": value, "tolerance": tolerance, "passed": bool(passed)}
        return bool(passed)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def finish(self, extra: dict | None = None) -> int:
        if self.emit and self.tidy:
            plotting.write_tidy(self.path("plot_data.csv"), self.tidy)
            if self.plot:
                for png in plotting.render(self.out / "plot_data.csv"):
                    self.artifacts.append(png.name)
        summary = {"kind": self.cfg["kind"], "schema": cfgmod.SCHEMA_ID, "passed": self.passed, "checks": self.checks}
        if extra:
            summary.update(extra)
        self.write_json("summary.json", summary)
        manifest = {
            "schema": cfgmod.SCHEMA_ID,
            "artifacts": {
                name: hashlib.sha256((self.out / name).read_bytes()).hexdigest()
                for name in sorted(set(self.artifacts))
            },
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return EXIT_OK if self.passed else EXIT_TOLERANCE


# --- builders -------------------------------------------------------------

def build_potential(cfg: dict) -> pt.PairPotential:
    return pt.make_potential(cfg["potential"])


def build_grid(cfg: dict) -> sf.PhaseGrid:
    g = cfg["grid"]
    return sf.PhaseGrid.symmetric(cfg["physics"]["dim"], g["q_extent"], g["p_extent"], g["points"], g["p_points"])


def solve_maxent(cfg: dict, potential, grid=None) -> mx.SolveReport:
    ph, so = cfg["physics"], cfg["solver"]
    grid = grid or build_grid(cfg)
    return mx.match_constraints(
        potential, grid, ph["epsilon"], cfgmod.physics_ell(cfg), m=ph["m"], e2=ph["e2"],
        theta=so["theta"], inner_tol=so["inner_tol"], outer_rtol=so["temperature_tol"], max_iter=so["max_iter"],
    )


def _solver_guard(run: Run, fn, *args):
    try:
        return fn(*args)
    except (mx.NonConvergenceError, mx.DivergenceError, mx.InfeasibleConstraints, mx.TruncationError) as exc:
        run.write_json("solve_report.json", {"converged": False, "error": type(exc).__name__, "message": str(exc)})
        raise SolverFailure(str(exc)) from exc


def _density_cut(f: sf.GridDensity) -> tuple[np.ndarray, np.ndarray]:
    """q_1 profile of the position marginal through the center of the other axes."""
    rho = f.q_marginal()
    idx = tuple([slice(None)] + [rho.shape[k] // 2 for k in range(1, rho.ndim)])
    return f.grid.q_centers[0], rho[idx]


def _record_maxent(run: Run, report: mx.SolveReport, tol: float, prefix: str = ""):
    run.write_json(prefix + "solve_report.json", report.as_dict())
    if report.f is not None:
        sf.save_density(run.path(prefix + "f.sqgd"), report.f, {"kind": "maxent"})
        run.artifacts.append(prefix + "f.sqgd.json")
        sf.write_moments_csv(run.path(prefix + "moments.csv"), sf.macrostate(report.f, run.cfg["physics"]["m"]), report.grid)
    for name, err in report.constraint_errors.items():
        run.check(prefix + "constraint_" + name, err, tol)


# --- experiments ------------------------------------------------------------

def run_nbody(run: Run) -> None:
    cfg = run.cfg
    nc, ph = cfg["nbody"], cfg["physics"]
    V = build_potential(cfg)
    rng = np.random.default_rng(cfg["seed"])
    d = ph["dim"]
    state = nb.to_com_frame(nb.PhaseState(
        rng.normal(0.0, nc["q_scale"], (nc["n"], d)), rng.normal(0.0, nc["p_scale"], (nc["n"], d)),
        m=ph["m"], e2=ph["e2"],
    ))
    every = nc["record_every"] or max(nc["steps"] // 1000, 1)
    final, rows = nb.integrate(state, V, nc["dt"], nc["steps"], every)
    nb.write_trajectory_csv(run.path("trajectory.csv"), rows, d)
    window = nc["energy_window"]
    if window is None and V.id == "harmonic":
        # relative motion about the center oscillates at sqrt(2 e2 a N / m)
        omega = np.sqrt(2.0 * ph["e2"] * V.params["a"] * nc["n"] / ph["m"])
        window = max(int(round(2 * np.pi / omega / nc["dt"] / every)), 1)
    drift = nb.conservation_drift(rows, d, *nb.conservation_scales(state), window=window)
    tol = cfg["tolerances"]
    run.check("momentum_drift", drift["momentum_drift"], tol["momentum_drift"])
    run.check("angmom_drift", drift["angmom_drift"], tol["angmom_drift"])
    run.check("energy_drift", drift["energy_drift"], tol["energy_drift"])
    run.write_json("drift.json", drift)
    if run.emit:
        a = np.asarray(rows)
        h0 = a[0, 1]
        cols = nb.trajectory_columns(d)
        for t, row in zip(a[:, 0], a):
            run.tidy.append(("nbody_invariants", "H", t, (row[1] - h0) / abs(h0)))
            for c, v in zip(cols, row):
                if c.startswith("J"):
                    run.tidy.append(("nbody_invariants", c, t, v - a[0, cols.index(c)]))


def run_maxent(run: Run) -> None:
    cfg = run.cfg
    V = build_potential(cfg)
    report = _solver_guard(run, solve_maxent, cfg, V)
    _record_maxent(run, report, cfg["tolerances"]["constraint"])
    reg = mx.fixed_point_regression(report, V, cfg["physics"]["m"], cfg["physics"]["e2"])
    run.write_json("fixed_point_regression.json", reg)
    if run.emit and report.f is not None:
        x, y = _density_cut(report.f)
        run.tidy += [("maxent_density", "rho", a, b) for a, b in zip(x, y)]


def run_maxent_sweep(run: Run) -> None:
    cfg = run.cfg
    V = build_potential(cfg)
    grid = build_grid(cfg)
    eps_list = cfg["sweep"]["epsilon"] or [cfg["physics"]["epsilon"]]
    ell_list = cfg["sweep"]["ell"] or [cfg["physics"]["ell"]]
    rows = []
    for eps, ell in itertools.product(eps_list, ell_list):
        sub = json.loads(json.dumps(cfg))
        sub["physics"]["epsilon"], sub["physics"]["ell"] = eps, ell
        tag = f"eps={eps:g},ell={ell:g}"
        try:
            rep = solve_maxent(sub, V, grid)
        except (mx.NonConvergenceError, mx.DivergenceError, mx.InfeasibleConstraints, mx.TruncationError) as exc:
            run.check(tag, str(exc), "converged", passed=False)
            rows.append((eps, ell, np.nan, np.nan, np.nan, np.nan, "unclassified"))
            continue
        err = max(rep.constraint_errors.values())
        run.check(tag + ":constraint", err, cfg["tolerances"]["constraint"])
        om = float(np.atleast_1d(rep.multipliers.omega)[-1])
        label = classify_density(rep.f, V, sub)["label"]
        rows.append((eps, ell, rep.multipliers.T, om, rep.values["entropy"], err, label))
    with open(run.path("sweep.csv"), "w") as fh:
        fh.write("epsilon,ell,T,omega,S,max_constraint_error,classification\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r[:6]) + "," + r[6] + "\n")
    if run.emit:
        for r in rows:
            run.tidy.append(("maxent_sweep", f"T(ell={r[1]:g})", r[0], r[2]))
            run.tidy.append(("maxent_sweep", f"S(ell={r[1]:g})", r[0], r[4]))


def _vlasov_initial(run: Run, V):
    vc = run.cfg["vlasov"]
    if vc["init"] == "file":
        return sf.load_density(vc["init_file"]).normalize()
    report = _solver_guard(run, solve_maxent, run.cfg, V)
    _record_maxent(run, report, run.cfg["tolerances"]["constraint"], prefix="init_")
    return report.f


def run_vlasov(run: Run) -> None:
    cfg = run.cfg
    vc, ph, tol = cfg["vlasov"], cfg["physics"], cfg["tolerances"]
    V = build_potential(cfg)
    f0 = _vlasov_initial(run, V)
    tdyn = vl.dynamical_time(f0, ph["m"])
    dt = vc["dt"] or tdyn / vc["steps_per_dynamical_time"]
    steps = vc["steps"] or int(round(vc["dynamical_times"] * tdyn / dt))
    t0 = time.perf_counter()
    res = vl.evolve(f0, V, dt, steps, vc["audit_every"], ph["m"], ph["e2"])
    log.info("vlasov: %d steps in %.1fs", steps, time.perf_counter() - t0)
    vl.write_history_csv(run.path("history.csv"), res)
    rep = vl.conservation_report(res)
    rep.update({"dt": dt, "steps": steps, "dynamical_time": tdyn})
    run.write_json("conservation.json", rep)
    run.check("N", rep["N"], tol["vlasov_mass"])
    run.check("E", rep["E"], tol["vlasov_energy"])
    run.check("J", rep["J"], tol["vlasov_angmom"])
    run.check("S", rep["S"], tol["vlasov_entropy"])
    run.check("C2", rep["C2"], tol["vlasov_casimir"])
    if vc["snapshot"]:
        sf.save_density(run.path("f_final.sqgd"), res.f, {"kind": "vlasov", "t": steps * dt})
        run.artifacts.append("f_final.sqgd.json")
    if run.emit:
        h = np.asarray(res.history)
        for name in ("N", "E", "S", "C2", "C32"):
            i = vl.HISTORY_COLUMNS.index(name)
            run.tidy += [("vlasov_drift", name, t, (v - h[0, i]) / abs(h[0, i])) for t, v in zip(h[:, 0], h[:, i])]


def _ensemble_spec(cfg: dict, n=None, mode=None, samples=None, seed=None) -> en.EnsembleSpec:
    ec, ph = cfg["ensemble"], cfg["physics"]
    n = n or ec["n"]
    ell = cfgmod.physics_ell(cfg)
    energy = ec["energy"] if (ec["energy"] is not None and n == ec["n"]) else n * n * ph["epsilon"]
    ell_n = np.asarray(ell, dtype=float) * n**1.5
    return en.EnsembleSpec(
        potential=build_potential(cfg), n=n, dim=ph["dim"], energy=energy,
        angmom=float(ell_n) if ell_n.ndim == 0 else tuple(ell_n),
        mode=mode or ec["mode"], samples=samples or ec["samples"], burn_in=ec["burn_in"], chains=ec["chains"],
        seed=cfg["seed"] if seed is None else seed, m=ph["m"], e2=ph["e2"], step=ec["step"], delta_rel=ec["delta_rel"],
    )


def _check_batch(run: Run, batch: en.SampleBatch, spec: en.EnsembleSpec, prefix=""):
    inv = batch.invariants(spec.potential)
    scale = np.sqrt(2 * spec.m * abs(spec.energy)) * spec.n
    run.check(prefix + "P", float(np.abs(inv["P"]).max() / scale), 1e-10)
    run.check(prefix + "Q", float(np.abs(inv["Q"]).max()), 1e-10)
    jerr = np.abs(np.atleast_2d(inv["J"].T).T - spec.b[spec.dim:]).max()
    run.check(prefix + "J", float(jerr / scale), 1e-10)
    htol = spec.delta if spec.mode == "shell" else 1e-10 * abs(spec.energy)
    run.check(prefix + "H", float(np.abs(inv["H"] - spec.energy).max()), htol)


def run_ensemble_sample(run: Run) -> None:
    cfg = run.cfg
    spec = _ensemble_spec(cfg)
    batch = en.sample_microcanonical(spec)
    np.save(run.path("q.npy"), batch.q)
    np.save(run.path("p.npy"), batch.p)
    run.write_json("diagnostics.json", batch.diagnostics)
    _check_batch(run, batch, spec)
    grid = build_grid(cfg)
    marg = en.marginal_estimate(batch, grid, rescale=cfg["ensemble"]["rescale"])
    sf.save_density(run.path("marginal.sqgd"), marg, {"kind": "ensemble-marginal", "samples": len(batch)})
    run.artifacts.append("marginal.sqgd.json")
    if run.emit:
        x, y = _density_cut(marg)
        run.tidy += [("marginal", "q_1", a, b) for a, b in zip(x, y)]


def run_ensemble_wlln(run: Run) -> None:
    cfg = run.cfg
    ec, tol = cfg["ensemble"], cfg["tolerances"]
    ells = ec["ell_list"]
    pool = en.sample_microcanonical(_ensemble_spec(cfg, samples=ells[-1] * ec["repeats"]))
    ref = en.sample_microcanonical(_ensemble_spec(cfg, samples=ec["reference_samples"], seed=cfg["seed"] + 1))
    bins = en.CoarseBins.spanning(en._particle_points(ref, ec["rescale"]), ec["bins"])
    res = en.wlln_experiment(pool, ref, bins, ells, ec["repeats"], seed=cfg["seed"] + 2, rescale=ec["rescale"])
    with open(run.path("wlln.csv"), "w") as fh:
        fh.write("ell,d_KR,d_KR_lo,d_KR_hi\n")
        for r in res.rows():
            fh.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]!r}\n")
    lo, hi = tol["slope_range"]
    run.check("slope", res.slope, tol["slope_range"], passed=lo <= res.slope <= hi)
    run.check("nonincreasing", bool(res.monotone), True, passed=res.monotone)
    if run.emit:
        run.tidy += [("wlln", "d_KR", e, m, a, b) for e, m, a, b in res.rows()]


# densities reaching the classifier come from a converged solve or a saved one
_SOLVED = types.SimpleNamespace(converged=True)


def classify_density(f: sf.GridDensity, V, cfg: dict) -> dict:
    ph, cc = cfg["physics"], cfg["classify"]
    res = vl.stationarity_residual(f, V, ph["m"], ph["e2"])
    un = mx.velocity_field_norm(f, ph["m"])
    stationary = res < cc["tol_stationary"]
    label = mx.classify(_SOLVED, res, un, cc["tol_stationary"], cc["tol_velocity"])
    return {"label": label, "stationarity_residual": res, "u_field_norm": un, "stationary": bool(stationary)}


def _shift_variants(f, V, cfg) -> list[dict]:
    d = f.grid.dim
    cc = cfg["classify"]
    out = []
    for which in ("q", "p"):
        cells = cc[f"shift_{which}_cells"]
        if not cells:
            continue
        if len(cells) != d:
            raise cfgmod.ConfigError([{"path": f"/classify/shift_{which}_cells", "message": f"needs {d} entries"}])
        g = sf.shift_cells(f, q_cells=cells if which == "q" else None, p_cells=cells if which == "p" else None)
        out.append({"shift": which, "cells": cells, **classify_density(g, V, cfg)})
    return out


def run_classify(run: Run) -> None:
    cfg = run.cfg
    V = build_potential(cfg)
    if cfg["classify"]["density_file"]:
        f = sf.load_density(cfg["classify"]["density_file"]).normalize()
        converged = True
    else:
        report = _solver_guard(run, solve_maxent, cfg, V)
        _record_maxent(run, report, cfg["tolerances"]["constraint"])
        f, converged = report.f, report.converged
    base = classify_density(f, V, cfg) if converged else {"label": "unclassified"}
    variants = _shift_variants(f, V, cfg)
    run.write_json("classification.json", {**base, "variants": variants})


def _meanfield_distances(run: Run, f_star: sf.GridDensity) -> list[tuple]:
    cfg = run.cfg
    ec = cfg["ensemble"]
    d = cfg["physics"]["dim"]
    per_axis = ec["bins"]
    while per_axis ** (2 * d) > 1000:
        per_axis -= 1
    pts = tr.from_grid_density(f_star)
    mean = np.average(pts.support, axis=0, weights=pts.mass)
    sd = np.sqrt(np.average((pts.support - mean) ** 2, axis=0, weights=pts.mass))
    bins = en.CoarseBins(mean - 4 * sd, mean + 4 * sd, per_axis)
    target = bins.density_measure(f_star)
    rows = []
    for n in ec["n_list"]:
        samples = max(int(np.ceil(ec["particles_per_n"] / n)), 100)
        batch = en.sample_microcanonical(_ensemble_spec(cfg, n=n, samples=samples, seed=cfg["seed"] + n))
        _check_batch(run, batch, _ensemble_spec(cfg, n=n, samples=samples), prefix=f"N={n}:")
        dist = tr.kr_distance_exact(bins.measure(en._particle_points(batch, True)), target)
        rows.append((n, dist, len(batch)))
    return rows


def run_pipeline(run: Run) -> None:
    cfg = run.cfg
    V = build_potential(cfg)
    report = _solver_guard(run, solve_maxent, cfg, V)
    _record_maxent(run, report, cfg["tolerances"]["constraint"])
    base = classify_density(report.f, V, cfg)
    report.classification = base["label"]
    variants = _shift_variants(report.f, V, cfg)
    out = {"classification": base["label"], "residuals": base, "variants": variants,
           "multipliers": report.multipliers.as_dict()}
    if cfg["ensemble"]["n_list"]:
        rows = _meanfield_distances(run, report.f)
        out["meanfield"] = [{"N": n, "d_KR": dist, "samples": s} for n, dist, s in rows]
        dists = [r[1] for r in rows]
        run.check("meanfield_decreasing", dists, "monotone", passed=all(b < a for a, b in zip(dists, dists[1:])))
        if run.emit:
            run.tidy += [("meanfield", "d_KR", n, dist) for n, dist, _ in rows]
    run.write_json("pipeline.json", out)


RUNNERS = {
    "nbody": run_nbody,
    "maxent": run_maxent,
    "maxent-sweep": run_maxent_sweep,
    "vlasov": run_vlasov,
    "ensemble-sample": run_ensemble_sample,
    "ensemble-wlln": run_ensemble_wlln,
    "classify": run_classify,
    "pipeline": run_pipeline,
}


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--out", help="output directory (overrides config 'output')")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads for numerical kernels")
    common.add_argument("--emit-plot-data", action="store_true", help="write tidy plot_data.csv")
    common.add_argument("--plot", action="store_true", help="also render PNG figures from the plot data")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="statequil", description=__doc__.splitlines()[0])
    groups = parser.add_subparsers(dest="group", required=True)
    actions = {}
    for group, action in COMMANDS:
        actions.setdefault(group, []).append(action)
    for group, acts in actions.items():
        if acts == [None]:
            groups.add_parser(group, parents=[common])
        else:
            sub = groups.add_parser(group).add_subparsers(dest="action", required=True)
            for a in acts:
                sub.add_parser(a, parents=[common])
    return parser


def _thread_limit(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits  # noqa: PLC0415

    return threadpool_limits(limits=n)


def load_config(path, kind: str, seed: int | None = None, out: str | None = None) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
        data = json.loads(text)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise cfgmod.ConfigError([{"path": "/", "message": f"cannot read config: {exc}"}]) from None
    if isinstance(data, dict):
        data.setdefault("kind", kind)
        if data["kind"] != kind:
            raise cfgmod.ConfigError([{"path": "/kind", "message": f"config kind {data['kind']!r} does not match command {kind!r}"}])
        if seed is not None:
            data["seed"] = seed
        if out is not None:
            data["output"] = out
    return cfgmod.validate(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    kind = COMMANDS[(args.group, getattr(args, "action", None))]
    try:
        cfg = load_config(args.config, kind, args.seed, args.out)
    except cfgmod.ConfigError as exc:
        print(exc.as_json())
        return EXIT_CONFIG
    run = Run(cfg, Path(cfg["output"]), args.emit_plot_data, args.plot)
    try:
        with _thread_limit(args.threads):
            RUNNERS[kind](run)
    except SolverFailure as exc:
        run.check("solver", str(exc), "converged", passed=False)
        run.finish({"error": str(exc)})
        return EXIT_SOLVER
    except cfgmod.ConfigError as exc:
        print(exc.as_json())
        return EXIT_CONFIG
    code = run.finish()
    print(json.dumps({"kind": kind, "passed": run.passed, "output": str(run.out),
                      "checks": {k: v["passed"] for k, v in run.checks.items()}}, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
