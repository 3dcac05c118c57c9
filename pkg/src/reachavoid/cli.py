"""Command-line surface: validate, simulate, plot, verify, sweep.

The CLI is a thin client over the library: it loads a scenario file,
orchestrates one run (or a seeded batch of runs), and writes
self-describing artifacts (trajectory CSV, summary JSON, SVG plots) into
an output directory.  Verbosity is controlled by the ``RAH_LOG``
environment variable.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, oracles, plant, unicycle, virtual_ctrl
from .geometry import Scenario, ScenarioFormatError

log = logging.getLogger("reachavoid")

PLANTS = {
    "unicycle": unicycle.make_bundle,
}


@dataclass
class RunConfig:
    """Everything one simulation invocation depends on."""

    scenario: Path
    plant: str = "virtual-only"
    out: Path | None = None
    dt_sample: float | None = None
    seed: int | None = None
    ell: float | None = None
    c: float | None = None
    qbar: str | None = None

    def __post_init__(self):
        if self.dt_sample is not None and not self.dt_sample > 0:
            raise ValueError("sample interval must be positive")
        if self.plant != "virtual-only" and self.plant not in PLANTS:
            raise ValueError(f"unknown plant {self.plant!r}")


def _apply_overrides(scenario: Scenario, cfg: RunConfig) -> Scenario:
    if cfg.ell is not None:
        scenario = dataclasses.replace(scenario, ell=cfg.ell)
    if cfg.c is not None:
        scenario = dataclasses.replace(scenario, c=cfg.c)
    if cfg.dt_sample is not None:
        integ = dataclasses.replace(scenario.integrator,
                                    dt_sample=cfg.dt_sample)
        scenario = dataclasses.replace(scenario, integrator=integ)
    return scenario


def run_simulation(cfg: RunConfig, xi0=None, x0=None):
    """Load, override, simulate.  Returns (solution, scenario used)."""
    scenario = _apply_overrides(geometry.load_scenario(cfg.scenario), cfg)
    if cfg.plant == "virtual-only":
        # The reference system is defined relative to the target, so run
        # it in the shifted frame like the coupled loop does.
        shifted, offset = plant.shift_to_origin(scenario)
        if xi0 is not None:
            xi0 = np.asarray(xi0, dtype=float) - offset
        sol = virtual_ctrl.simulate_virtual(shifted, xi0=xi0, qbar=cfg.qbar)
        sol.info["offset"] = offset
        sol.info["plant"] = "virtual-only"
    else:
        bundle = PLANTS[cfg.plant]()
        if cfg.qbar is not None:
            obstacles = tuple(dataclasses.replace(o, qbar=cfg.qbar)
                              for o in scenario.obstacles)
            scenario = dataclasses.replace(scenario, obstacles=obstacles)
        sol = plant.simulate_closed_loop(scenario, bundle,
                                         x0=x0, zeta0=xi0)
    return sol, scenario


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def csv_columns(sol) -> list[str]:
    p = sol.xi().shape[1]
    cols = ["t", "j", "rho"] + [f"xi_{k + 1}" for k in range(p)]
    if "x_slice" in sol.info:
        n = sol.info["x_slice"].stop
        cols += [f"x_{k + 1}" for k in range(n)]
        cols += [f"z_{k + 1}" for k in range(p)]
        cols += ["V", "d", "gate"]
    return cols


def write_csv(sol, path) -> None:
    """Fixed-schema trajectory table; reference and output columns are in
    the scenario's original (unshifted) frame."""
    offset = sol.info.get("offset")
    if offset is None:
        offset = np.zeros(sol.xi().shape[1])
    cols = csv_columns(sol)
    coupled = "x_slice" in sol.info
    xi = sol.xi()
    rho = sol.diag.get("rho", np.zeros(sol.t.size))
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(sol.t.size):
            row = [_fmt(sol.t[k]), str(int(sol.j[k])), _fmt(rho[k])]
            row += [_fmt(v) for v in xi[k] + offset]
            if coupled:
                x = sol.y[k, sol.info["x_slice"]]
                row += [_fmt(v) for v in x]
                p = xi.shape[1]
                z = np.array([sol.diag[f"z_{i + 1}"][k] for i in range(p)])
                row += [_fmt(v) for v in z + offset]
                row += [_fmt(sol.diag["V"][k]), _fmt(sol.diag["d"][k]),
                        _fmt(sol.diag["gate"][k])]
            w.writerow(row)


def summarize(sol, scenario: Scenario, cfg: RunConfig | None = None) -> dict:
    n_obs = len(scenario.obstacles)
    min_dist = {str(i): float(np.min(sol.diag[f"dist_{i}"]))
                for i in range(n_obs) if f"dist_{i}" in sol.diag}
    out = {
        "termination": sol.termination,
        "T": sol.duration,
        "jumps": len(sol.jumps),
        "jump_records": [
            {"t": rec.t, "j": rec.j_before, "obstacle": rec.obstacle,
             "rho_before": rec.rho_before, "rho_after": rec.rho_after}
            for rec in sol.jumps
        ],
        "min_virtual_distance": min_dist,
        "parameters": geometry.scenario_to_dict(scenario),
    }
    if "dist_out_0" in sol.diag or "x_slice" in sol.info:
        out["min_output_distance"] = {
            str(i): float(np.min(sol.diag[f"dist_out_{i}"]))
            for i in range(n_obs) if f"dist_out_{i}" in sol.diag}
    if "gate" in sol.diag:
        margin = sol.diag["gate"]
        start = 0
        if not sol.info.get("gate_held_initially", True):
            open_idx = np.nonzero(margin >= 0.0)[0]
            start = int(open_idx[0]) if open_idx.size else margin.size
        post = float(np.min(margin[start:])) if start < margin.size else None
        out["gate"] = {
            "held_initially": sol.info.get("gate_held_initially"),
            "recovered_at": sol.info.get("gate_recovered_at"),
            "min_margin": post,
            "ok": post is not None and post >= -1e-6,
        }
    if cfg is not None:
        out["run_config"] = {
            "scenario": str(cfg.scenario), "plant": cfg.plant,
            "dt_sample": cfg.dt_sample, "seed": cfg.seed,
            "ell": cfg.ell, "c": cfg.c, "qbar": cfg.qbar,
        }
    return out


def cmd_validate(path) -> int:
    try:
        scenario = geometry.load_scenario(path)
    except (ScenarioFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    violations = geometry.validate_scenario(scenario)
    if not violations:
        print(f"{path}: valid ({len(scenario.obstacles)} obstacles)")
        return 0
    for v in violations:
        print(v)
    return 1


def cmd_simulate(cfg: RunConfig) -> int:
    try:
        sol, scenario = run_simulation(cfg)
    except (ScenarioFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(cfg.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(sol, out_dir / "trajectory.csv")
    summary = summarize(sol, scenario, cfg)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    log.info("simulate: %s in T=%.6g with %d jumps",
             sol.termination, sol.duration, len(sol.jumps))
    print(f"{sol.termination}: T={sol.duration:.6g}, jumps={len(sol.jumps)}, "
          f"wrote {out_dir / 'trajectory.csv'}")
    return 0


def _read_csv(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        raise ValueError(f"{path}: no samples")
    data = np.array(rows)
    return {name: data[:, k] for k, name in enumerate(header)}


def cmd_plot(csv_path, scenario_path, out_dir) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Circle, Polygon

    try:
        table = _read_csv(csv_path)
        scenario = geometry.load_scenario(scenario_path)
    except (ScenarioFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    p = scenario.dimension
    written = []

    coupled = "x_1" in table
    t = table["t"]
    rho = table["rho"]
    xi = np.stack([table[f"xi_{k + 1}"] for k in range(p)], axis=1)

    if p == 2:
        fig, ax = plt.subplots(figsize=(7, 6))
        tgt = scenario.target
        for i, obs in enumerate(scenario.obstacles):
            q = obs.center
            ax.add_patch(Circle(q, obs.radius, color="0.35", zorder=3))
            ax.add_patch(Circle(q, obs.Delta, fill=False, ls="--", ec="tab:red"))
            ax.add_patch(Circle(q, obs.lam, fill=False, ls=":", ec="tab:green"))
            for poly, color in ((_wedge(q, tgt, obs.Delta, obs.lam,
                                        obs.theta1), "tab:orange"),
                                (_anti_wedge(q, tgt, obs.Delta,
                                             obs.lam + obs.eps, obs.theta0),
                                 "tab:purple")):
                ax.add_patch(Polygon(poly, closed=True, alpha=0.18,
                                     color=color, lw=0))
        mode1 = rho > 0.5
        ax.plot(xi[:, 0], xi[:, 1], color="tab:blue", lw=1.5,
                label="reference")
        if np.any(mode1):
            ax.plot(np.where(mode1, xi[:, 0], np.nan),
                    np.where(mode1, xi[:, 1], np.nan),
                    color="tab:red", lw=1.5, label="detour mode")
        if coupled:
            z = np.stack([table["z_1"], table["z_2"]], axis=1)
            ax.plot(z[:, 0], z[:, 1], color="tab:green", lw=1.0,
                    label="plant output")
        ax.plot(*xi[0], marker="o", color="k")
        ax.plot(*scenario.target, marker="*", markersize=12, color="k")
        ax.set_aspect("equal")
        ax.set_xlabel("z1")
        ax.set_ylabel("z2")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / "plane.svg")
        plt.close(fig)
        written.append(out_dir / "plane.svg")
    else:
        print(f"plane plot skipped: dimension {p} != 2")

    n_axes = 3 if coupled else 2
    fig, axes = plt.subplots(n_axes, 1, figsize=(7, 2.2 * n_axes),
                             sharex=True)
    shifted, offset = plant.shift_to_origin(scenario)
    params = virtual_ctrl.VirtualControllerParams.from_scenario(shifted)
    mu = np.array([
        virtual_ctrl.mu_bar(xi[k] - offset, int(round(rho[k])), params)
        for k in range(len(t))
    ])
    row = 0
    if coupled:
        n = 5 if "x_5" in table else max(
            k for k in range(1, 100) if f"x_{k}" in table)
        x = np.stack([table[f"x_{k + 1}"] for k in range(n)], axis=1)
        bundle = PLANTS["unicycle"]()  # inputs replayed for the registered plant
        u = np.array([bundle.controller.u(x[k], xi[k]) for k in range(len(t))])
        for m in range(u.shape[1]):
            axes[0].plot(t, u[:, m], label=f"u{m + 1}", lw=1.0)
        axes[0].set_ylabel("inputs")
        axes[0].legend(fontsize=8)
        row = 1
    for m in range(mu.shape[1]):
        axes[row].plot(t, mu[:, m], label=f"mu_{m + 1}", lw=1.0)
    axes[row].set_ylabel("reference field")
    axes[row].legend(fontsize=8)
    axes[row + 1].step(t, -rho, where="post", color="k")
    axes[row + 1].set_ylabel("-rho")
    axes[row + 1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out_dir / "time.svg")
    plt.close(fig)
    written.append(out_dir / "time.svg")
    print("wrote " + ", ".join(str(w) for w in written))
    return 0


def _wedge(q, target, r_in, r_out, theta, steps=48):
    """Polygon of the cone section between two radii (plot shading)."""
    axis = math.atan2(q[1] - target[1], q[0] - target[0])
    angles = np.linspace(axis - theta, axis + theta, steps)
    outer = q + r_out * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    inner = q + r_in * np.stack([np.cos(angles[::-1]), np.sin(angles[::-1])],
                                axis=1)
    return np.vstack([outer, inner])


def _anti_wedge(q, target, r_in, r_out, theta, steps=96):
    """Complementary cone section (release region shading)."""
    axis = math.atan2(q[1] - target[1], q[0] - target[0])
    angles = np.linspace(axis + theta, axis + 2.0 * math.pi - theta, steps)
    outer = q + r_out * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    inner = q + r_in * np.stack([np.cos(angles[::-1]), np.sin(angles[::-1])],
                                axis=1)
    return np.vstack([outer, inner])


def cmd_verify(cfg: RunConfig) -> int:
    try:
        sol, scenario = run_simulation(cfg)
    except (ScenarioFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    reports = oracles.check_trajectory(sol, scenario)
    for rep in reports:
        print(rep)
    print(f"termination: {sol.termination}, T={sol.duration:.6g}, "
          f"jumps={len(sol.jumps)}")
    return 0 if all(r.passed for r in reports) else 1


def _sweep_worker(args):
    scenario_path, plant_name, seed, run_dir, dt_sample, ell, c, qbar = args
    cfg = RunConfig(scenario=Path(scenario_path), plant=plant_name,
                    out=Path(run_dir), dt_sample=dt_sample, seed=seed,
                    ell=ell, c=c, qbar=qbar)
    scenario = _apply_overrides(geometry.load_scenario(cfg.scenario), cfg)
    rng = np.random.default_rng(seed)
    lo = scenario.c + max((o.Delta for o in scenario.obstacles), default=0.0)
    hi = max(2.0 * lo + 1.0,
             max((float(np.linalg.norm(o.center - scenario.target)) + o.lam
                  for o in scenario.obstacles), default=0.0) + 1.0)
    xi0 = scenario.target + geometry.random_point_in_safe_set(
        dataclasses.replace(scenario, target=np.zeros(scenario.dimension)),
        rng, lo + 0.1, hi)
    sol, scenario = run_simulation(cfg, xi0=xi0)
    run_path = Path(run_dir)
    run_path.mkdir(parents=True, exist_ok=True)
    write_csv(sol, run_path / "trajectory.csv")
    summary = summarize(sol, scenario, cfg)
    summary["xi0"] = [float(v) for v in xi0]
    (run_path / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    reports = oracles.check_trajectory(sol, scenario)
    return {
        "dir": str(run_path),
        "termination": sol.termination,
        "checks_passed": all(r.passed for r in reports),
    }


def cmd_sweep(cfg: RunConfig, runs: int, jobs: int | None) -> int:
    out_dir = Path(cfg.out or "sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = cfg.seed if cfg.seed is not None else 0
    seeds = np.random.SeedSequence(base_seed).generate_state(runs)
    tasks = [
        (str(cfg.scenario), cfg.plant, int(seeds[k]),
         str(out_dir / f"run_{k:03d}"), cfg.dt_sample, cfg.ell, cfg.c,
         cfg.qbar)
        for k in range(runs)
    ]
    jobs = jobs or min(4, os.cpu_count() or 1)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    else:
        results = [_sweep_worker(t) for t in tasks]
    ok = all(r["checks_passed"] for r in results)
    converged = sum(r["termination"] == "converged" for r in results)
    print(f"{runs} runs: {converged} converged, "
          f"checks {'all passed' if ok else 'FAILED'}")
    for r in results:
        if not r["checks_passed"]:
            print(f"  failed checks: {r['dir']}")
    return 0 if ok else 1


def _setup_logging():
    level = os.environ.get("RAH_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")


def _add_run_args(sp):
    sp.add_argument("--scenario", required=True, type=Path)
    sp.add_argument("--plant", default="virtual-only",
                    choices=["virtual-only", *PLANTS])
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--dt-sample", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--ell", type=float, default=None)
    sp.add_argument("--c", type=float, default=None)
    sp.add_argument("--qbar", choices=["cw", "ccw"], default=None)


def _config_from(args) -> RunConfig:
    return RunConfig(scenario=args.scenario, plant=args.plant, out=args.out,
                     dt_sample=args.dt_sample, seed=args.seed, ell=args.ell,
                     c=args.c, qbar=args.qbar)


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="reachavoid",
        description="Simulate hybrid reach-and-avoid reference tracking.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check scenario well-posedness")
    sp.add_argument("--scenario", required=True, type=Path)

    sp = sub.add_parser("simulate", help="run one simulation to CSV/JSON")
    _add_run_args(sp)

    sp = sub.add_parser("plot", help="render SVG plots from a trajectory CSV")
    sp.add_argument("--csv", required=True, type=Path)
    sp.add_argument("--scenario", required=True, type=Path)
    sp.add_argument("--out", type=Path, default=None)

    sp = sub.add_parser("verify", help="run and property-check a scenario")
    _add_run_args(sp)

    sp = sub.add_parser("sweep", help="batch runs over random initial states")
    _add_run_args(sp)
    sp.add_argument("--runs", type=int, default=8)
    sp.add_argument("--jobs", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.scenario)
        if args.command == "simulate":
            return cmd_simulate(_config_from(args))
        if args.command == "plot":
            return cmd_plot(args.csv, args.scenario, args.out)
        if args.command == "verify":
            return cmd_verify(_config_from(args))
        if args.command == "sweep":
            return cmd_sweep(_config_from(args), args.runs, args.jobs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
