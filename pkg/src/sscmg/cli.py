"""Command-line front end: ``sscmg {mesh,solve,verify,sweep}``.

Exit codes: 0 success, 2 invalid input, 3 non-convergence, 4 an assumption
or bound check failed. Files written under ``--out`` contain no timings, so
identical configurations and seeds give identical bytes.
"""

import argparse
import configparser
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from .config import load_config
from .exceptions import DenseCapError, NonConvergence
from .multigrid import build_hierarchy, solve, vcycle
from .space import export_matrix_market, spd_factor
from .verify import (
    contraction,
    estimate_delta,
    gamma,
    mg_error_matrix,
    run_verification,
    smoother_error_matrix,
)

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_ASSUMPTION = 0, 2, 3, 4


def _g(x):
    return "" if x is None else repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_mesh(cfg, out):
    cfg = cfg.with_hierarchy(rhs="constant")
    h = build_hierarchy(cfg.hierarchy)
    rows = []
    for lv in h.levels:
        with open(out / f"level_{lv.k}.mesh2d", "w", encoding="utf-8") as fh:
            meshmod.write_mesh(lv.mesh, fh)
        rows.append((lv.k, lv.mesh.n_vertices, lv.mesh.n_triangles, len(lv.mesh.hanging), lv.dim))
    _write_csv(out / "mesh.csv", ["level", "vertices", "triangles", "hanging", "dofs"], rows)
    print(f"{'level':>5} {'vertices':>9} {'triangles':>10} {'hanging':>8} {'dofs':>6}")
    for r in rows:
        print(f"{r[0]:>5} {r[1]:>9} {r[2]:>10} {r[3]:>8} {r[4]:>6}")
    return EXIT_OK


def cmd_solve(cfg, out):
    h = build_hierarchy(cfg.hierarchy)
    top = h.levels[-1]
    reference = None
    if cfg.rhs_label == "manufactured":
        reference = spd_factor(top.A).solve(h.load)
    code, diverged = EXIT_OK, None
    try:
        z, rep = solve(h, rel_tol=cfg.rel_tol, max_cycles=cfg.max_cycles, reference=reference)
    except NonConvergence as exc:
        diverged, rep, z = exc, exc.report, None
        code = EXIT_DIVERGED
    rows = [(c, _g(r), _g(e), _g(q)) for c, r, e, q in rep.rows()]
    _write_csv(out / "solve.csv", ["cycle", "residual", "energy_error", "ratio"], rows)
    if z is not None:
        xy = top.space.dof_coordinates()
        _write_csv(out / "solution.csv", ["x", "y", "value"],
                   [(_g(a), _g(b), _g(v)) for (a, b), v in zip(xy, z)])
    if cfg.export_matrices:
        export_matrix_market(top.A, out / "A.mtx", comment=f"stiffness matrix, level {h.J}")
        export_matrix_market(top.M, out / "M.mtx", comment=f"mass matrix, level {h.J}")
    for c, r, e, q in rep.rows():
        extra = "" if e is None else f"  energy_error {e:.3e}"
        print(f"cycle {c:3d}  residual {r:.3e}{extra}  ratio {q:.4f}")
    if diverged is not None:
        print(f"error: {diverged}", file=sys.stderr)
    else:
        print(f"converged in {rep.cycles} cycles ({top.dim} unknowns)")
    return code


def cmd_verify(cfg, out):
    h = build_hierarchy(cfg.hierarchy)
    rep = run_verification(h, cap=cfg.dense_cap, seed=cfg.seed, probes=cfg.probes,
                           k0_probes=cfg.k0_probes)
    (out / "verify.json").write_text(rep.to_json(), encoding="utf-8")
    (out / "verify.csv").write_text(rep.to_csv(), encoding="utf-8")
    print(f"{'k':>2} {'dim':>5} {'m':>3} {'delta':>9} {'psi':>8} {'gamma':>8} {'rho_E':>9} "
          f"{'w1':>6} {'K0':>8} {'g0':>3}")
    for lv in rep.levels:
        print(f"{lv.k:>2} {lv.dim:>5} {lv.m:>3} {lv.delta:>9.5f} {lv.psi:>8.4f} "
              f"{lv.gamma:>8.4f} {lv.rho_E:>9.5f} {lv.w1:>6.3f} {lv.K0:>8.3f} {lv.g0:>3}")
    checks = [("assumption 1 (S symmetric, non-negative)", rep.assumption1),
              ("assumption 2 (delta < 1)", rep.assumption2),
              ("assumption 3 (psi non-increasing)", rep.assumption3),
              ("gamma bound", rep.gamma_bound), ("lemma chain", rep.lemma_chain)]
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if rep.passed else EXIT_ASSUMPTION


def _measured_ratio(h, seed, cycles=12):
    """Energy contraction of repeated V-cycles on a normalized random error."""
    A = h.levels[-1].A
    e = np.random.default_rng(seed).standard_normal(h.levels[-1].dim)
    e /= np.sqrt(e @ (A @ e))
    ratio = 0.0
    for _ in range(cycles):
        e = vcycle(h, h.J, e, np.zeros_like(e))
        nrm = np.sqrt(max(e @ (A @ e), 0.0))
        ratio = nrm
        if nrm == 0:
            break
        e /= nrm
    return ratio


def cmd_sweep(cfg, out):
    rows = []
    print(f"{'schedule':>20} {'J':>2} {'m_J':>4} {'rho_E':>9} {'gamma_J':>9} {'measured':>9}")
    for spec in cfg.sweep_schedules:
        label = spec.kind + (f":{spec.m}" if spec.kind == "constant" else
                             f":{spec.q}" if spec.kind == "optimal_quadratic" else "")
        for J in cfg.sweep_J:
            h = build_hierarchy(replace(cfg.hierarchy, J=J, schedule=spec, rhs="constant"))
            top = h.levels[-1]
            rho = gam = None
            if top.dim <= cfg.dense_cap:
                rho = contraction(mg_error_matrix(h, J, cfg.dense_cap), top.A.toarray())[0]
                delta = estimate_delta(smoother_error_matrix(h, J, cfg.dense_cap), top.A)[0]
                gam = gamma(top.m, delta)
            meas = _measured_ratio(h, cfg.seed)
            rows.append((label, J, top.m, _g(rho), _g(gam), _g(meas)))
            print(f"{label:>20} {J:>2} {top.m:>4} {_fmt(rho):>9} {_fmt(gam):>9} {meas:>9.5f}")
    _write_csv(out / "sweep.csv", ["schedule", "J", "m_J", "rho_E", "gamma_J", "measured_ratio"], rows)
    return EXIT_OK


def _fmt(x):
    return "-" if x is None else f"{x:.5f}"


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="sscmg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"mesh": "write per-level mesh files", "solve": "run the multigrid solver",
             "verify": "measure delta_k, K0, rho_E and check the assumptions",
             "sweep": "compare smoothing schedules across levels"}
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", type=Path, help="INI experiment file")
        sp.add_argument("--out", type=Path, help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="seed for random probes")
        sp.add_argument("--dense-cap", type=int, help="largest dense oracle dimension")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.dense_cap is not None:
            overrides.append(f"dense_cap={args.dense_cap}")
        if args.out is not None:
            overrides.append(f"out={args.out}")
        cfg = load_config(args.config, overrides)
        cfg.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, cfg.out)
    except DenseCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError, KeyError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
