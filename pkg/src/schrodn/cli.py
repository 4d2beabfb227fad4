"""Command-line entry point: ``schrodn <subcommand> [config.yaml] [key=value ...]``.

Subcommands: forward, dnmap, xray, decompose, reconstruct, stability, verify.
Artifacts go to ``<output_dir>/<subcommand>/``; the environment variable
``SCHRODN_OUTPUT_DIR`` overrides ``output_dir``.  Exit codes: 0 success,
1 runtime or solver error, 2 configuration error, 3 verification failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import calculus as tc
from . import io
from .config import OUTPUT_ENV, load_config
from .errors import ConfigError, ToolkitError

SUBCOMMANDS = ("forward", "dnmap", "xray", "decompose", "reconstruct", "stability", "verify")


def _outdir(cfg, sub):
    base = os.environ.get(OUTPUT_ENV) or cfg["output_dir"]
    path = Path(base) / sub
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _dt(cfg):
    return cfg["grid"]["dt"]


def _is_zero(spec):
    return spec["preset"] == "zero"


# -- subcommands ---------------------------------------------------------------------


def cmd_forward(cfg, out):
    from .schrodinger import BoundaryData, evolve, magnetic_hamiltonian
    grid = cfg.grid()
    basis = cfg.basis()
    A, q = cfg.field("A1", grid), cfg.field("q1", grid)
    k, m = cfg["forward"]["mode"], cfg["forward"]["temporal"] - 1
    coeffs = np.zeros((len(basis.modes), basis.M), dtype=complex)
    coeffs[k + basis.K, m] = 1.0
    f = BoundaryData(basis, coeffs)
    T = basis.T
    n = int(np.ceil(T / (_dt(cfg) or T / 1024)))
    ev = evolve(magnetic_hamiltonian(A, q), lambda t: f(grid.theta, t)[0], T, n,
                track_norm=True)
    fp = cfg.fingerprint
    io.write_field(out / "final.csv", tc.ScalarField(grid, ev.final.reshape(grid.shape)), fp)
    stride = max(1, n // 64)
    rows = [(ev.t[i], j, ev.trace[i, j].real, ev.trace[i, j].imag)
            for i in range(0, n + 1, stride) for j in range(grid.n_theta)]
    io.write_csv(out / "neumann_trace.csv", ["t", "j", "re", "im"], rows, fp)
    summary = {"fingerprint": fp, "steps": n, "final_l2": float(ev.norms[-1]),
               "max_trace": float(np.max(np.abs(ev.trace)))}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_dnmap(cfg, out):
    from .schrodinger import dn_advection, dn_magnetic, dn_operator_norm
    grid = cfg.grid()
    basis = cfg.basis()
    fp = cfg.fingerprint
    vector = not (_is_zero(cfg["fields"]["X1"]) and _is_zero(cfg["fields"]["X2"]))
    if vector:
        D1 = dn_advection(cfg.field("X1", grid), basis, _dt(cfg))
        D2 = dn_advection(cfg.field("X2", grid), basis, _dt(cfg))
    else:
        D1 = dn_magnetic(cfg.field("A1", grid), cfg.field("q1", grid), basis, _dt(cfg))
        D2 = dn_magnetic(cfg.field("A2", grid), cfg.field("q2", grid), basis, _dt(cfg))
    io.write_dn_matrix(out / "system1.dnm", D1, fp)
    io.write_dn_matrix(out / "system2.dnm", D2, fp)
    summary = {"fingerprint": fp, "system": "advection" if vector else "magnetic",
               "norm_1": dn_operator_norm(D1)[0], "norm_difference": dn_operator_norm(D1 - D2)[0],
               "shape": list(D1.matrix.shape)}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_xray(cfg, out):
    from .geometry import sample_inflow_bundle
    from .raytransform import xray_function, xray_oneform
    metric = cfg.metric()
    inv = cfg["inversion"]
    rays = sample_inflow_bundle(metric, inv["n_boundary"], inv["n_direction"])
    grid = cfg.grid()
    A, q = cfg.field("A1", grid), cfg.field("q1", grid)
    fp = cfg.fingerprint
    d1 = xray_oneform(A, rays, metric, step=inv["step"])
    d0 = xray_function(q, rays, metric, step=inv["step"])
    io.write_raydata(out / "xray_oneform.csv", d1, metric.name, fp)
    io.write_raydata(out / "xray_function.csv", d0, metric.name, fp)
    io.heatmap_svg(out / "sinogram_oneform.svg", d1.grid_values().real.T, "I_1 A1",
                   "boundary angle s", "aperture alpha", fp)
    io.heatmap_svg(out / "sinogram_function.svg", d0.grid_values().real.T, "I q1",
                   "boundary angle s", "aperture alpha", fp)
    summary = {"fingerprint": fp, "rays": len(rays), "oneform_l2": d1.l2_norm(),
               "function_l2": d0.l2_norm()}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_decompose(cfg, out):
    from .hodge import solenoidal_decompose
    grid = cfg.grid()
    dec = solenoidal_decompose(cfg.field("A1", grid))
    fp = cfg.fingerprint
    io.write_field(out / "solenoidal.csv", dec.solenoidal, fp)
    io.write_field(out / "potential.csv", dec.potential, fp)
    summary = {"fingerprint": fp, **{k: float(v) for k, v in dec.residuals.items()}}
    _write_json(out / "summary.json", summary)
    return summary


def _rel(a, b):
    nb = b.l2_norm()
    return (a - b).l2_norm() / nb if nb > 0 else a.l2_norm()


def cmd_reconstruct(cfg, out):
    from .hodge import solenoidal_decompose
    from .optics import ProbeContext
    from .reconstruction import (ProbeSweep, recover_potential, recover_solenoidal,
                                 recover_vector_field, resample)
    from .schrodinger import gauge_reduce
    pgrid = cfg.probe_grid()
    igrid = cfg.inversion_grid()
    p = cfg["probe"]
    sweep = ProbeSweep(p["n_sources"], p["n_directions"], tuple(p["lam"]), tuple(p["rho"]),
                       p["phase_step"])
    tau = cfg["inversion"]["tau"]
    step = cfg["inversion"]["step"]
    fp = cfg.fingerprint
    summary = {"fingerprint": fp}
    vector = not (_is_zero(cfg["fields"]["X1"]) and _is_zero(cfg["fields"]["X2"]))
    if vector:
        X1, X2 = cfg.field("X1", pgrid), cfg.field("X2", pgrid)
        A1, q1 = gauge_reduce(X1)
        A2, q2 = gauge_reduce(X2)
        ctx = ProbeContext(pgrid, A2, q2, A1, q1)       # reference in slot 1
        vr, As, q = recover_vector_field(ctx, X2, igrid, sweep, tau, step)
        X1i = cfg.field("X1", igrid)
        io.write_field(out / "X1_recovered.csv", vr.X1, fp)
        summary.update(picard_iterations=vr.iterations,
                       X_rel_error=_rel(vr.X, X1i - cfg.field("X2", igrid)))
        true_As = solenoidal_decompose(resample(A1 - A2, igrid)).solenoidal
        true_q = resample(q1 - q2, igrid)
    else:
        A1, q1 = cfg.field("A1", pgrid), cfg.field("q1", pgrid)
        A2, q2 = cfg.field("A2", pgrid), cfg.field("q2", pgrid)
        ctx = ProbeContext(pgrid, A1, q1, A2, q2)
        As = recover_solenoidal(ctx, igrid, sweep, tau, step)
        q = recover_potential(ctx, As.field, igrid, sweep, tau, step)
        true_As = solenoidal_decompose(resample(A2 - A1, igrid)).solenoidal
        true_q = resample(q2 - q1, igrid)
    io.write_field(out / "As_recovered.csv", As.field, fp)
    io.write_field(out / "q_recovered.csv", q.field, fp)
    summary.update(As_rel_error=_rel(As.field, true_As), q_rel_error=_rel(q.field, true_q),
                   failed_rays=As.failures, q_leakage=q.extras.get("field_leakage", 0.0))
    _write_json(out / "summary.json", summary)
    return summary


def cmd_stability(cfg, out):
    from .reconstruction import stability_experiment
    grid = cfg.grid()
    X1 = cfg.field("X1", grid)
    V = cfg.direction(grid)
    res = stability_experiment(X1, V, cfg["stability"]["epsilons"], cfg.basis(), _dt(cfg),
                               cfg.fingerprint, cfg["workers"])
    fp = cfg.fingerprint
    rows = [(r.epsilon, r.dX_L2, r.dLambda_op, r.dAs_L2, r.dq_L2) for r in res.records]
    io.write_csv(out / "stability.csv", ["epsilon", "dX_L2", "dLambda_op", "dAs_L2", "dq_L2"],
                 rows, fp)
    io.loglog_svg(out / "stability.svg", [r.dLambda_op for r in res.records],
                  [r.dX_L2 for r in res.records], "stability", "||dLambda||", "||dX||",
                  res.slope, fp)
    summary = {"fingerprint": fp, "slope": res.slope, "monotone": res.monotone,
               "points": len(rows)}
    _write_json(out / "summary.json", summary)
    print(f"fitted exponent: {res.slope:.6f} (monotone dLambda: {res.monotone})")
    return summary


def cmd_verify(cfg, out):
    from .verification import run_checks
    checks = run_checks(cfg)
    for c in checks:
        print(c.line())
    report = {"fingerprint": cfg.fingerprint, "passed": all(c.passed for c in checks),
              "checks": [c.as_dict() for c in checks]}
    _write_json(out / "verify.json", report)
    return report


COMMANDS = {"forward": cmd_forward, "dnmap": cmd_dnmap, "xray": cmd_xray,
            "decompose": cmd_decompose, "reconstruct": cmd_reconstruct,
            "stability": cmd_stability, "verify": cmd_verify}


def _parse(argv):
    ap = argparse.ArgumentParser(prog="schrodn", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("args", nargs="*", help="config path and/or key=value overrides")
    ns = ap.parse_args(argv)
    path, overrides = None, []
    for i, a in enumerate(ns.args):
        if "=" in a:
            overrides.append(a)
        elif i == 0 and path is None:
            path = a
        else:
            ap.error(f"unexpected positional argument {a!r}")
    return ns.subcommand, path, overrides


def main(argv=None):
    sub, path, overrides = _parse(sys.argv[1:] if argv is None else argv)
    try:
        cfg = load_config(path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        out = _outdir(cfg, sub)
        result = COMMANDS[sub](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ToolkitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"{sub} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if sub == "verify" and not result["passed"]:
        return 3
    print(f"{sub}: artifacts in {out} (fingerprint {cfg.fingerprint[:12]})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
