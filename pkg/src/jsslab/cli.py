"""Command line front end.

Exit codes: 0 success or verdict true, 2 verdict false, 1 usage or input
error, 3 numeric failure. Floats are written with 17 significant digits and
every CSV written by a command is a deterministic function of its inputs;
wall-clock timings go to ``timings.json`` only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_ERROR, EXIT_FALSE, EXIT_NUMERIC = 0, 1, 2, 3
FMT = "%.17g"


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _limit_threads():
    # must run before numpy is imported to reach the BLAS pools
    n = os.environ.get("JSS_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _floats(text):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _g(x):
    return float(FMT % x)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, columns, fmt=FMT):
    import numpy as np

    arr = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, arr, fmt=fmt, delimiter=",", header=",".join(header), comments="")


def _read_csv(path):
    import numpy as np

    with open(path) as f:
        header = f.readline().strip().split(",")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: arr[:, i] for i, h in enumerate(header)}


def _run_dir(out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _version():
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0"


# --------------------------------------------------------------------------
# check-flux


def cmd_check_flux(args):
    from . import domain_io, flux

    domain = domain_io.load_domain(args.domain)
    config = flux.EnumConfig(max_corners=args.max_corners, stable_only=args.stable_only)
    report = flux.verify_jss(domain, config)
    print(report.to_text())
    if args.out:
        out = _run_dir(args.out)
        (out / "flux_report.csv").write_text(report.to_csv())
        (out / "flux_report.txt").write_text(report.to_text() + "\n")
    return EXIT_OK if report.verdict else EXIT_FALSE


# --------------------------------------------------------------------------
# solve-scherk


def _vertex_gradient_norm(field, metric):
    import numpy as np

    from .pmc import shape_gradients

    mesh = field.mesh
    B, area = shape_gradients(mesh)
    g = np.einsum("tij,tj->ti", B, field.values[mesh.triangles])
    acc = np.zeros((mesh.n, 2))
    wsum = np.zeros(mesh.n)
    for c in range(3):
        np.add.at(acc, mesh.triangles[:, c], g * area[:, None])
        np.add.at(wsum, mesh.triangles[:, c], area)
    grad = acc / wsum[:, None]
    if metric.kind == "flat":
        return np.sqrt(np.einsum("ni,ni->n", grad, grad))
    G = metric.inverse(mesh.vertices)
    return np.sqrt(np.einsum("ni,nij,nj->n", grad, G, grad))


def _field_file(k):
    return f"u_k{k:g}.csv"


def cmd_solve_scherk(args):
    import numpy as np

    from . import domain_io, flux, limits, mesh as meshing, pmc
    from .errors import MeshQuality

    if not args.out:
        raise _Usage("--out is required")
    domain = domain_io.load_domain(args.domain)
    out = _run_dir(args.out)
    shutil.copyfile(args.domain, out / "input.yaml")
    timings = {}
    t0 = time.perf_counter()
    report = flux.verify_jss(domain)
    timings["flux"] = time.perf_counter() - t0
    (out / "flux_report.csv").write_text(report.to_csv())
    (out / "flux_report.txt").write_text(report.to_text() + "\n")
    manifest = {
        "command": "solve-scherk",
        "version": _version(),
        "input_sha256": _sha256(args.domain),
        "epsilon": args.eps,
        "h": args.h,
        "k_schedule": list(args.k_schedule),
        "tau_newton": args.tol,
        "max_iter": args.max_iter,
        "perron_sweep": not args.no_sweep,
        "div_factor": limits.DIV_FACTOR,
        "undecided_limit": limits.UNDECIDED_LIMIT,
        "flux_verdict": bool(report.verdict),
        "forced": bool(args.force),
    }
    if not report.verdict and not args.force:
        manifest["dispatch"] = None
        _write_json(out / "manifest.json", manifest)
        print("flux conditions fail; pass --force to solve anyway", file=sys.stderr)
        return EXIT_FALSE

    t0 = time.perf_counter()
    aux = meshing.build_auxiliary_domain(domain, args.eps)
    mirror = None if args.mirror == "none" else "diagonal"
    if args.mirror == "auto" and domain.H0 == 0:
        try:
            m = meshing.mesh_auxiliary(aux, args.h, mirror="diagonal")
        except MeshQuality:
            m = meshing.mesh_auxiliary(aux, args.h)
    elif args.mirror == "auto":
        m = meshing.mesh_auxiliary(aux, args.h)
    else:
        m = meshing.mesh_auxiliary(aux, args.h, mirror=mirror)
    manifest["mirror"] = "none" if m.mirror is None else "diagonal"
    prob = pmc.prepare_problem(aux, m)
    timings["mesh"] = time.perf_counter() - t0
    _write_csv(out / "mesh_vertices.csv", ["x", "y", "region"], [m.vertices[:, 0], m.vertices[:, 1], m.region])
    np.savetxt(out / "mesh_triangles.csv", m.triangles, fmt="%d", delimiter=",", header="a,b,c", comments="")

    t0 = time.perf_counter()
    results = pmc.solve_schedule(prob, args.k_schedule, tol=args.tol, max_iter=args.max_iter,
                                 sweep=not args.no_sweep)
    timings["solve"] = time.perf_counter() - t0
    manifest["solves"] = [{"k": r.k, "iterations": r.iterations, "residual": _g(r.residual),
                           "substeps": [_g(s) for s in r.substeps], "perron_rounds": r.perron_rounds,
                           "file": _field_file(r.k)} for r in results]
    for r in results:
        du = _vertex_gradient_norm(r.u, domain.metric)
        _write_csv(out / _field_file(r.k), ["x", "y", "u", "grad_norm", "inv_W"],
                   [m.vertices[:, 0], m.vertices[:, 1], r.u.values, du, 1.0 / np.sqrt(1.0 + du**2)])

    t0 = time.perf_counter()
    run = limits.analyze_limit(results, report, omega=limits.interior_mask(prob))
    timings["classify"] = time.perf_counter() - t0
    dec = run.decompositions[-1]
    _write_csv(out / "classification.csv", ["x", "y", "label"], [m.vertices[:, 0], m.vertices[:, 1], dec.labels])
    disp = run.dispatch
    dispatch = {"kind": disp.kind, "reason": disp.reason, "anchors": [int(a) for a in run.anchors], "path": list(run.path),
                "retranslations": len(run.anchors)}
    if disp.kind == "CaseC_solution" and disp.limit_field is not None:
        _write_csv(out / "limit.csv", ["x", "y", "u"], [m.vertices[:, 0], m.vertices[:, 1], disp.limit_field.values])
    _write_json(out / "dispatch.json", dispatch)
    manifest["dispatch"] = disp.kind
    manifest["dispatch_path"] = list(run.path)
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    print("dispatch: " + " -> ".join(run.path) + (f" ({disp.reason})" if disp.reason else ""))
    # a forced run on a domain failing the flux conditions never certifies a solution
    ok = disp.kind == "CaseC_solution" and report.verdict
    return EXIT_OK if ok else EXIT_FALSE


# --------------------------------------------------------------------------
# solve-jang-radial


def _t_file(t):
    return f"u_t{t:g}.csv"


def _radial_columns(sol):
    import numpy as np

    from .jang import expansion_scalars

    du = np.gradient(sol.u, sol.r)
    tp, tm = expansion_scalars(sol.data, sol.r)
    return ["r", "u", "du", "theta_plus", "theta_minus"], [sol.r, sol.u, du, tp, tm]


def cmd_solve_jang_radial(args):
    from . import domain_io, jang
    from .errors import JSSError

    if not args.out:
        raise _Usage("--out is required")
    data = domain_io.load_radial(args.data)
    out = _run_dir(args.out)
    shutil.copyfile(args.data, out / "input.yaml")
    t0 = time.perf_counter()
    sols = jang.solve_blowup(data, args.sign, args.t_schedule, args.rmax, args.n_el, args.delta,
                             args.tol, args.max_iter)
    elapsed = time.perf_counter() - t0
    rows = []
    lines = [f"horizon radius: {'none' if sols[0].r_h is None else FMT % sols[0].r_h}"]
    for s in sols:
        header, cols = _radial_columns(s)
        _write_csv(out / _t_file(s.t), header, cols)
        rb = s.blowup_radius(args.threshold)
        rows.append({"t": s.t, "file": _t_file(s.t), "iterations": s.iterations, "residual": _g(s.residual),
                     "blowup_radius": None if rb is None else _g(rb)})
        lines.append(f"t={s.t:g} blow-up radius: {'none' if rb is None else FMT % rb}")
    sandwich = None
    try:
        lam, *_ = jang.lambda0_search(data)
        flags = [jang.barrier_sandwich(s, lam)[1] for s in sols]
        sandwich = {"lambda0": lam, "beta": jang.barrier_beta(data), "holds": bool(all(flags))}
        lines.append(f"barrier sandwich with Lambda={lam:g}: {'holds' if all(flags) else 'violated'}")
    except JSSError as e:
        lines.append(f"barrier sandwich not checked: {e}")
    manifest = {
        "command": "solve-jang-radial",
        "version": _version(),
        "input_sha256": _sha256(args.data),
        "sign": args.sign,
        "t_schedule": list(args.t_schedule),
        "r_max": args.rmax,
        "n_elements": args.n_el,
        "horizon_offset": args.delta,
        "tau_newton": args.tol,
        "max_iter": args.max_iter,
        "blowup_threshold": args.threshold,
        "r_h": sols[0].r_h,
        "solutions": rows,
        "sandwich": sandwich,
    }
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timings.json", {"solve": round(elapsed, 3)})
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _load_radial_run(path):
    from . import domain_io, jang

    run = Path(path)
    try:
        manifest = json.loads((run / "manifest.json").read_text())
    except (OSError, ValueError) as e:
        raise _Usage(f"{run}: not a radial run directory ({e})") from None
    if manifest.get("command") != "solve-jang-radial":
        raise _Usage(f"{run}: not a radial run directory")
    data = domain_io.load_radial(run / "input.yaml")
    sols = []
    for row in manifest["solutions"]:
        cols = _read_csv(run / row["file"])
        sols.append(jang.RadialSolution(cols["r"], cols["u"], row["t"], manifest["sign"], manifest["r_h"], data,
                                        row["iterations"], row["residual"]))
    return data, sols


# --------------------------------------------------------------------------
# stability


def cmd_stability(args):
    import numpy as np

    from . import domain_io, stability

    coeffs = domain_io.load_coefficients(args.coeffs)
    op = stability.assemble_stability_operator(coeffs)
    ep = stability.principal_eigenvalue(op, tol=args.tol, max_iter=args.max_iter)
    tau = stability.TAU_EIG_REL * max(1.0, float(np.max(np.abs(op.potential))))
    stable = ep.value >= -tau
    print(f"principal eigenvalue: {FMT % ep.value}")
    print(f"stable: {'yes' if stable else 'no'} (tolerance {tau:.3g})")
    if args.out:
        out = _run_dir(args.out)
        _write_csv(out / "eigenfunction.csv", ["node", "phi"], [np.arange(op.n), ep.vector])
        _write_json(out / "manifest.json", {"command": "stability", "version": _version(),
                                            "input_sha256": _sha256(args.coeffs), "tol": args.tol,
                                            "max_iter": args.max_iter, "eigenvalue": _g(ep.value),
                                            "iterations": ep.iterations, "stable": bool(stable)})
    return EXIT_OK if stable else EXIT_FALSE


# --------------------------------------------------------------------------
# verify-uniqueness and horizon-area


class _LoadedMesh:
    def __init__(self, vertices, triangles, region):
        self.vertices = vertices
        self.triangles = triangles
        self.region = region

    @property
    def n(self):
        return len(self.vertices)


def _load_scherk_field(target):
    import numpy as np

    from . import domain_io
    from .pmc import DiscreteScalarField

    path, _, ksel = str(target).partition(":")
    run = Path(path)
    manifest = json.loads((run / "manifest.json").read_text())
    solves = manifest.get("solves") or []
    if not solves:
        raise _Usage(f"{run}: run has no solutions")
    row = solves[-1]
    if ksel:
        match = [s for s in solves if s["k"] == float(ksel)]
        if not match:
            raise _Usage(f"{run}: no solution for k={ksel}")
        row = match[0]
    V = _read_csv(run / "mesh_vertices.csv")
    T = np.loadtxt(run / "mesh_triangles.csv", delimiter=",", skiprows=1, dtype=int, ndmin=2)
    mesh = _LoadedMesh(np.column_stack([V["x"], V["y"]]), T, V["region"].astype(int))
    u = _read_csv(run / row["file"])["u"]
    domain = domain_io.load_domain(run / "input.yaml")
    return DiscreteScalarField(mesh, u), domain.metric


def cmd_verify(args):
    from . import uniqueness

    kinds = []
    for target in (args.run_a, args.run_b):
        try:
            kinds.append(json.loads((Path(str(target).partition(":")[0]) / "manifest.json").read_text())["command"])
        except (OSError, ValueError, KeyError) as e:
            raise _Usage(f"{target}: not a run directory ({e})") from None
    if kinds[0] != kinds[1]:
        raise _Usage("runs of different kinds cannot be compared")
    try:
        if kinds[0] == "solve-jang-radial":
            _, sa = _load_radial_run(args.run_a)
            _, sb = _load_radial_run(args.run_b)
            defect = uniqueness.radial_uniqueness_defect(min(sa, key=lambda s: s.t), min(sb, key=lambda s: s.t))
        elif kinds[0] == "solve-scherk":
            ua, metric = _load_scherk_field(args.run_a)
            ub, _ = _load_scherk_field(args.run_b)
            pair = uniqueness.SolutionPair(ua, ub)
            region = (ua.mesh.region[ua.mesh.triangles] < 0).all(axis=1)
            defect = uniqueness.uniqueness_defect(pair, region, metric)
        else:
            raise _Usage(f"cannot compare runs of kind {kinds[0]}")
    except ValueError as e:
        raise _Usage(str(e)) from None
    print(f"defect: {FMT % defect.value}")
    print(f"area: {FMT % defect.area}")
    print(f"tolerance: {FMT % defect.tolerance}")
    print(f"certified: {'yes' if defect.certified else 'no'}")
    return EXIT_OK if defect.certified else EXIT_FALSE


def cmd_horizon_area(args):
    from . import uniqueness

    data, sols = _load_radial_run(args.run)
    beta = data.beta if args.beta is None else args.beta
    hf = uniqueness.horizon_area_flux(sols, beta, args.rungs, args.ratio, args.rtol)
    print(f"extrapolated flux: {FMT % hf.limit}")
    print(f"outermost sphere flux: {FMT % hf.raw}")
    print(f"ladder spread: {hf.spread:.3g}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    from . import jang, pmc

    p = _Parser(prog="jsslab", description="Scherk-type graphs, radial Jang blow-up and MOTS stability.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("check-flux", help="check the flux conditions of a domain file")
    s.add_argument("domain")
    s.add_argument("--out", help="directory for flux_report.csv and flux_report.txt")
    s.add_argument("--stable-only", action="store_true", help="prune unstable interior arcs")
    s.add_argument("--max-corners", type=int, default=12, help="corner limit (default 12)")
    s.set_defaults(func=cmd_check_flux)

    s = sub.add_parser("solve-scherk", help="regularized solves, classification and case dispatch")
    s.add_argument("domain")
    s.add_argument("--out", help="run directory (required)")
    s.add_argument("--eps", type=float, default=0.05, help="crescent width (default 0.05)")
    s.add_argument("--h", type=float, default=0.02, help="mesh size (default 0.02)")
    s.add_argument("--k-schedule", type=_floats, default=(1.0, 4.0, 16.0, 64.0),
                   help="comma separated k values (default 1,4,16,64)")
    s.add_argument("--mirror", choices=("auto", "diagonal", "none"), default="auto",
                   help="use the (x, y) -> (y, x) antisymmetry when the domain has it (default auto)")
    s.add_argument("--tol", type=float, default=pmc.TAU_NEWTON, help=f"Newton tolerance (default {pmc.TAU_NEWTON:g})")
    s.add_argument("--max-iter", type=int, default=pmc.MAX_ITER, help=f"Newton iterations (default {pmc.MAX_ITER})")
    s.add_argument("--no-sweep", action="store_true", help="skip the Perron sweep")
    s.add_argument("--force", action="store_true", help="solve even when the flux conditions fail")
    s.set_defaults(func=cmd_solve_scherk)

    s = sub.add_parser("solve-jang-radial", help="radial Jang blow-up solutions")
    s.add_argument("data")
    s.add_argument("--out", help="run directory (required)")
    s.add_argument("--sign", choices=("minus", "plus"), default="minus", help="blow-up side (default minus)")
    s.add_argument("--t-schedule", type=_floats, default=(1e-1, 1e-2, 1e-3, 1e-4),
                   help="comma separated t values (default 0.1,0.01,0.001,0.0001)")
    s.add_argument("--rmax", type=float, default=1000.0, help="outer radius (default 1000)")
    s.add_argument("--n-el", type=int, default=jang.N_ELEMENTS, help=f"elements (default {jang.N_ELEMENTS})")
    s.add_argument("--delta", type=float, default=jang.HORIZON_OFFSET,
                   help=f"grid offset from the horizon (default {jang.HORIZON_OFFSET:g})")
    s.add_argument("--tol", type=float, default=jang.TAU_NEWTON, help=f"Newton tolerance (default {jang.TAU_NEWTON:g})")
    s.add_argument("--max-iter", type=int, default=jang.MAX_ITER, help=f"Newton iterations (default {jang.MAX_ITER})")
    s.add_argument("--threshold", type=float, default=jang.BLOWUP_THRESHOLD,
                   help=f"blow-up level for the reported radius (default {jang.BLOWUP_THRESHOLD:g})")
    s.set_defaults(func=cmd_solve_jang_radial)

    s = sub.add_parser("stability", help="principal eigenvalue of a stability operator")
    s.add_argument("coeffs")
    s.add_argument("--out", help="directory for eigenfunction.csv")
    s.add_argument("--tol", type=float, default=1e-12, help="inverse iteration tolerance (default 1e-12)")
    s.add_argument("--max-iter", type=int, default=20000, help="inverse iteration steps (default 20000)")
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("verify-uniqueness", help="defect integral between two runs (RUN or RUN:k)")
    s.add_argument("run_a")
    s.add_argument("run_b")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("horizon-area", help="extrapolated sphere flux of a radial run")
    s.add_argument("run")
    s.add_argument("--beta", type=float, default=None, help="decay exponent (default from the data file)")
    s.add_argument("--rungs", type=int, default=5, help="ladder radii (default 5)")
    s.add_argument("--ratio", type=float, default=2.0, help="ladder ratio (default 2)")
    s.add_argument("--rtol", type=float, default=1e-2, help="relative ladder spread allowed (default 0.01)")
    s.set_defaults(func=cmd_horizon_area)
    return p


def main(argv=None):
    _limit_threads()
    from .errors import JSSError, NumericFailure, ParseError, SolveFailure

    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _Usage as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except SolveFailure as e:
        print(f"solve failed: {e} (last residual {e.residual:.3e})", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (JSSError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
