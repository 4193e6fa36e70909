"""Command-line interface: ``mikado-forge <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import harness


def _emit(obj, out_file=None):
    text = json.dumps(obj, sort_keys=True, default=harness._json_default)
    print(text)
    if out_file is not None:
        Path(out_file).parent.mkdir(parents=True, exist_ok=True)
        Path(out_file).write_text(text + "\n")


def _config(args) -> harness.RunConfig:
    overrides = {"seed": args.seed, "out": args.out}
    return harness.load_config(args.config, **overrides)


def cmd_params_check(args) -> int:
    from . import params
    cfg = _config(args)
    p = params.IterationParams(a=cfg.a, b=cfg.b, beta=cfg.beta, alpha=cfg.alpha)
    r = Fraction(args.r) if args.r else cfg.r
    lines = params.params_check_lines(p, r)
    for line in lines:
        print(line)
    ok = all(json.loads(line)["holds"] for line in lines)
    return 0 if ok else 1


def cmd_check_operators(args) -> int:
    cfg = _config(args)
    cfg.validate()
    n = args.n or cfg.antidiv_n
    diag = harness.Diagnostics(None, None, cfg)
    diag.suite = "field"
    harness.suite_field(harness.RunConfig(**{**cfg.__dict__, "field_n": n}), diag)
    diag.suite = "antidiv"
    harness.suite_antidiv(harness.RunConfig(**{**cfg.__dict__, "antidiv_n": n}), diag)
    report = {"n": n, "passed": not diag.failed,
              "checks": [json.loads(r.as_json()) for r in diag.records]}
    _emit(report)
    return 0 if report["passed"] else 1


def cmd_decompose(args) -> int:
    from . import geom
    vals = [float(x) for x in args.matrix.split(",")]
    if len(vals) == 6:
        a11, a12, a13, a22, a23, a33 = vals
        m = np.array([[a11, a12, a13], [a12, a22, a23], [a13, a23, a33]])
    elif len(vals) == 9:
        m = np.array(vals).reshape(3, 3)
    else:
        print("--matrix takes 6 (upper triangle, row-wise) or 9 entries", file=sys.stderr)
        return 2
    d = geom.build_decomposition()
    try:
        g = geom.gamma(d, m)
    except geom.BallDomainError as err:
        _emit({"error": str(err), "distance": err.distance, "r0": d.r0})
        return 1
    rec = d.reconstruct(g**2)
    _emit({"directions": [list(k) for k in d.directions.directions],
           "gamma_squared": (g**2).tolist(), "r0": d.r0,
           "reconstruction_residual": float(np.linalg.norm(rec - m))})
    return 0


def cmd_build_mikado(args) -> int:
    from . import field as fl
    from . import mikado
    fam = mikado.build_family(None, args.mu, args.sigma, args.n, args.resolution_factor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"mu": args.mu, "sigma": args.sigma, "N": args.n, "directions": [],
                "base_points": [[str(c) for c in p] for p in fam.directions.base_points]}
    for k in range(len(fam)):
        W = fam.W(k)
        Om = fam.Omega(k).with_flags()
        fl.write_snapshot(W, out / f"W_{k}.mkf")
        fl.write_snapshot(Om, out / f"Omega_{k}.mkf")
        chk = fam.check_direction(k)
        manifest["directions"].append({
            "k": list(fam.directions.directions[k]), "W_L2": fl.l2_norm(W),
            "Omega_L2": fl.l2_norm(Om), "checks": chk})
        del W, Om
        fam.release(k)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                  default=harness._json_default))
    print(json.dumps({"out": str(out), "directions": len(fam)}))
    return 0


def cmd_step(args) -> int:
    from . import geom, mikado, scheme
    from . import field as fl
    cfg = harness.load_config(args.params or args.config, seed=args.seed)
    cfg.validate()
    if args.input:
        t = scheme.read_tuple(args.input)
    else:
        t = scheme.ReynoldsTuple.zero(fl.grid(cfg.n))
    if t.grid.n != cfg.n:
        print(f"tuple grid {t.grid.n} differs from configured N={cfg.n}", file=sys.stderr)
        return 2
    sp_ = cfg.surrogate_params()
    sp = scheme.StepParams(cfg.sigma, cfg.mu, float(sp_.surrogate.ell), sp_.delta_np1())
    fam = mikado.build_family(None, cfg.mu, cfg.sigma, cfg.n, cfg.resolution_factor)
    try:
        new, rep = scheme.step(t, sp, geom.build_decomposition(), fam, r=cfg.stress_norm_r)
    except scheme.StageError as err:
        _emit({"error": str(err), "stage": err.stage})
        return 1
    out = Path(args.out or cfg.out)
    scheme.write_tuple(new, out, extra={"step_params": sp.__dict__})
    (out / "report.json").write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True,
                                                default=harness._json_default))
    _emit({"out": str(out), "residual_relative": rep.residuals["output_relative"],
           "checks": {k: v for k, v in rep.checks.items() if not isinstance(v, list)}})
    return 0


def cmd_verify(args) -> int:
    from . import scheme
    t = scheme.read_tuple(args.input)
    res = t.residual_norm()
    scale = t.scale()
    ok = res <= t.residual_tol * scale
    _emit({"residual": res, "scale": scale, "residual_tol": t.residual_tol, "certified": ok,
           "invariants": t.invariants()})
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = _config(args)
    ladder = [Fraction(x) if args.parameter == "l" else int(x) for x in args.ladder.split(",")]
    out = Path(cfg.out) / f"sweep_{args.parameter}.jsonl"
    res = harness.estimate_sweep(cfg, args.parameter, ladder, out)
    _emit({"sweep": args.parameter, "slopes": res["slopes"], "out": str(out)})
    return 0


def cmd_run_all(args) -> int:
    cfg = _config(args)
    suites = args.suite.split(",") if args.suite else None
    golden = harness.load_golden(args.golden) if args.golden else None
    try:
        status, diag = harness.run_suite(cfg, suites, golden=golden)
    except harness.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    failed = [f"{r.suite}:{r.check}" for r in diag.failed]
    print(json.dumps({"records": len(diag.records), "failed": failed, "out": cfg.out}))
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mikado-forge", description=__doc__)
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--jobs", type=int, help="FFT worker threads")
    ap.add_argument("--seed", type=int, help="random seed")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params-check", help="exact exponent bookkeeping at the reference parameters")
    p.add_argument("--r", help="integrability exponent r as a fraction, 1 < r < 2")
    p.set_defaults(fn=cmd_params_check)

    p = sub.add_parser("check-operators", help="field and antidivergence identity suite")
    p.add_argument("--n", type=int, help="grid size")
    p.set_defaults(fn=cmd_check_operators)

    p = sub.add_parser("decompose", help="rank-one weights of a symmetric matrix")
    p.add_argument("--matrix", required=True, help="a11,a12,a13,a22,a23,a33 or all 9 entries")
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("build-mikado", help="write Mikado snapshots and a manifest")
    p.add_argument("--mu", type=int, required=True)
    p.add_argument("--sigma", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--resolution-factor", type=int, default=8)
    p.set_defaults(fn=cmd_build_mikado)

    p = sub.add_parser("step", help="one iteration step from a tuple directory or (0, 0, 0)")
    p.add_argument("--in", dest="input", help="input tuple directory (default: zero tuple)")
    p.add_argument("--params", help="config file with the step parameters")
    p.set_defaults(fn=cmd_step)

    p = sub.add_parser("verify", help="re-certify a tuple directory")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("sweep", help="norms along a parameter ladder")
    p.add_argument("--parameter", choices=["mu", "l", "sigma"], default="mu")
    p.add_argument("--ladder", default="8,16,32")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("run-all", help="all verification suites")
    p.add_argument("--suite", help="comma separated subset of " + ",".join(harness.SUITES))
    p.add_argument("--golden", help="golden file (default: the packaged one)")
    p.set_defaults(fn=cmd_run_all)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    harness.set_threads(args.jobs)
    try:
        return args.fn(args)
    except (harness.ConfigError, FileNotFoundError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
