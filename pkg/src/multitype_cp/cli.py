"""``mtcp`` command line front end.

Exit codes: 0 ok, 1 usage error, 2 verification failure, 3 resource error.
Parallelism for ``sweep`` defaults to ``$MTCP_WORKERS`` (1 if unset).
"""

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__, block, coupling, dual, experiments, interface, meanfield, verify
from .errors import DomainError, EstimationError, ResourceError, WindowViolation
from .lattice import Configuration, TorusGeometry
from .payoff import FitnessSpec, PayoffMatrix
from .seeding import INITIAL, REPLICATE, derived_seed, rng_for

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RESOURCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _grid(text):
    """``start:stop:num`` or a comma-separated list."""
    if ":" in text:
        a, b, n = text.split(":")
        return list(np.linspace(float(a), float(b), int(n)))
    return _floats(text)


def _meta(extra=None):
    out = {"version": __version__, "python": platform.python_version(),
           "numpy": np.__version__}
    out.update(extra or {})
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=verify._plain)
        fh.write("\n")


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(args):
    cfg = experiments.ExperimentConfig.load(args.config) if args.config else \
        experiments.ExperimentConfig()
    overrides = {}
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.matrix is not None:
        overrides["matrix"] = tuple(_floats(args.matrix))
    if args.sides is not None:
        overrides["sides"] = tuple(int(v) for v in args.sides.split(","))
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.engine is not None:
        overrides["engine"] = args.engine
    if args.initial is not None:
        overrides["initial"] = {"kind": args.initial}
    if overrides:
        data = cfg.to_dict()
        data.update(overrides)
        cfg = experiments.ExperimentConfig.from_dict(data)
    return cfg


def cmd_simulate(args):
    cfg = _load_config(args)
    out = _out_dir(args.out)
    rows = []
    for r in range(cfg.replicates):
        seed = derived_seed(cfg.seed, REPLICATE, 0, r)
        traj = experiments.run_once(cfg, seed)
        outcome = experiments.classify_outcome(traj, cfg.theta, cfg.tail_fraction)
        for t, a, b in zip(traj.times, traj.density1, traj.density2):
            rows.append((r, float(t), float(a), float(b)))
        print(f"replicate {r}: {outcome}, densities {traj.density1[-1]:.4f} "
              f"{traj.density2[-1]:.4f}")
    with open(os.path.join(out, "stats.csv"), "w") as fh:
        fh.write("replicate,time,density1,density2\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
    _write_json(os.path.join(out, "metadata.json"),
                _meta({"config": cfg.to_dict(), "config_hash": cfg.hash()}))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _out_dir(args.out)
    res = experiments.sweep(cfg, args.axis1, _grid(args.grid1), args.axis2,
                            _grid(args.grid2) if args.axis2 else (None,), workers=args.workers)
    res.to_csv(os.path.join(out, "sweep.csv"))
    _write_json(os.path.join(out, "metadata.json"),
                _meta({"config": cfg.to_dict(), **res.metadata()}))
    for row in res.rows():
        print(",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in row))
    if res.failures:
        print(f"{len(res.failures)} runs failed; see metadata.json", file=sys.stderr)
    return EXIT_OK


def cmd_snapshot(args):
    cfg = _load_config(args)
    out = _out_dir(args.out)
    images, traj = experiments.snapshot(cfg, _floats(args.times))
    for t, data in images.items():
        path = os.path.join(out, f"snapshot_t{t:g}.pgm")
        with open(path, "wb") as fh:
            fh.write(data)
        print(f"{path}: boundary density "
              f"{experiments.boundary_density(traj.snapshots[t]):.4f}")
    _write_json(os.path.join(out, "metadata.json"),
                _meta({"config": cfg.to_dict(), "config_hash": cfg.hash(),
                       "times": sorted(images)}))
    return EXIT_OK


def cmd_interface(args):
    spec = FitnessSpec(args.lam)
    A = PayoffMatrix(*_floats(args.matrix))
    policy = interface.WindowPolicy(W=args.window)
    traces = []
    for r in range(args.replicates):
        seed = derived_seed(args.seed, REPLICATE, r)
        try:
            traces.append(interface.run_heaviside(spec, A, args.T, seed, policy))
        except WindowViolation as exc:
            traces.append(exc.trace)
    est = interface.estimate_drift(traces)
    mean, se, ks_p, _ = interface.contact_time_test(traces)
    report = {"drift": est.drift, "drift_ci": est.drift_ci,
              "compensated": est.compensated, "compensated_ci": est.compensated_ci,
              "excursions": est.n_excursions, "truncated": est.n_truncated,
              "contact_mean": mean, "contact_se": se, "contact_ks_p": ks_p}
    if args.out:
        out = _out_dir(args.out)
        traces[0].to_csv(os.path.join(out, "trace0.csv"))
        _write_json(os.path.join(out, "interface.json"), _meta({"report": report}))
    print(json.dumps(verify._plain(report), indent=2))
    return EXIT_OK


def cmd_dual_check(args):
    spec = FitnessSpec(args.lam)
    geo = TorusGeometry((args.L,))
    zst = dual.build_zeta_events(geo, spec, args.a11, args.T, args.seed)
    labels = dual.label_good_arrows(zst)
    rng = rng_for(args.seed, REPLICATE)
    config0 = Configuration.product(geo, rng)
    sites = rng.integers(0, geo.total_sites, args.points)
    times = rng.uniform(0, args.T, args.points)
    chk = dual.check_duality(config0, zst, labels, sites, times, budget=args.budget)
    print(json.dumps({"good_arrows": labels.n_good, "doubles": len(labels),
                      **chk.__dict__, "ok": chk.ok}, indent=2))
    return EXIT_OK if chk.ok else EXIT_VERIFY


def cmd_couple_check(args):
    A = PayoffMatrix(*_floats(args.matrix))
    Abar = PayoffMatrix(*_floats(args.matrix_bar))
    geo = TorusGeometry(tuple(int(v) for v in args.sides.split(",")))
    spec = FitnessSpec(args.lam)
    rng = rng_for(args.seed, INITIAL)
    c0, b0 = verify.ordered_start(geo, rng)
    _, _, rep = coupling.coupled_run(c0, b0, A, Abar, spec, args.T, args.seed)
    print(json.dumps({"verified": rep.verified, "events_checked": rep.events_checked,
                      "first_violation": rep.first_violation}, indent=2))
    return EXIT_OK if rep.verified else EXIT_VERIFY


def cmd_bounds(args):
    spec = FitnessSpec(args.lam)
    params = block.death_params(args.epsilon, args.d)
    geo = block.cross_region(args.d)
    thr = block.a_plus_threshold(args.epsilon, spec, args.d, args.a12, args.a21, args.a22)
    report = {"n_minus": geo.n_minus, "n_plus": geo.n_plus, "a": params.a, "T": params.T,
              "N": params.N, "p_death_exact": block.p_death_exact(params), "a_plus": thr}
    if args.trials:
        A = PayoffMatrix(0.0, args.a12, args.a21, args.a22)
        mc = block.verify_block_mc(args.epsilon, spec, args.d, A,
                                   thr if args.a11 is None else args.a11, args.trials,
                                   args.seed)
        report["monte_carlo"] = mc.__dict__
    print(json.dumps(verify._plain(report), indent=2))
    return EXIT_OK


def cmd_verify(args):
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    if any(n not in verify.SUITES for n in names):
        print(f"unknown suite {args.suite!r}; choose from all, "
              f"{', '.join(verify.SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    results = []
    for n in names:
        res = verify.run_suite(n, quick=args.quick)
        print(res.line(), flush=True)
        results.append(res)
    if args.json:
        _write_json(args.json, _meta({"quick": args.quick,
                                      "results": [r.to_dict() for r in results]}))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_meanfield(args):
    u0 = _floats(args.u0)
    vals = _floats(args.matrix)
    n = int(round(len(vals) ** 0.5))
    if n * n != len(vals) or len(u0) != n:
        raise DomainError("matrix must be n*n entries matching the length of u0")
    traj = meanfield.integrate(u0, np.array(vals).reshape(n, n), args.T, args.dt)
    if args.out:
        traj.to_csv(args.out)
    print(" ".join(f"{v:.6f}" for v in traj.u[-1]))
    return EXIT_OK


def _config_args(p):
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--lam", type=float)
    p.add_argument("--matrix", help="a11,a12,a21,a22")
    p.add_argument("--sides", help="torus sides, e.g. 100,100")
    p.add_argument("--horizon", type=float)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--engine", choices=experiments.ENGINES)
    p.add_argument("--initial", choices=("product", "heaviside", "all1"))
    p.add_argument("--out", default="out")


def build_parser():
    parser = _Parser(prog="mtcp", description="Multitype contact process experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="replicate runs of one config")
    _config_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="phase table over one or two axes")
    _config_args(p)
    p.add_argument("--axis1", required=True, choices=experiments.AXES)
    p.add_argument("--grid1", required=True, help="start:stop:num or comma list")
    p.add_argument("--axis2", choices=experiments.AXES)
    p.add_argument("--grid2")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("snapshot", help="PGM images of a 2D run")
    _config_args(p)
    p.add_argument("--times", required=True, help="comma-separated times")
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("interface", help="Heaviside interface drift")
    p.add_argument("--lam", type=float, default=4.0)
    p.add_argument("--matrix", default="0,1,0,0")
    p.add_argument("--T", type=float, default=300.0)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--window", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_interface)

    p = sub.add_parser("dual-check", help="dual sets and cone replay on a 1D run")
    p.add_argument("--lam", type=float, default=2.0)
    p.add_argument("--a11", type=float, default=2.0)
    p.add_argument("--L", type=int, default=200)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--points", type=int, default=500)
    p.add_argument("--budget", type=int, default=dual.DEFAULT_CONE_BUDGET)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dual_check)

    p = sub.add_parser("couple-check", help="two-matrix coupling inclusions")
    p.add_argument("--matrix", required=True)
    p.add_argument("--matrix-bar", required=True)
    p.add_argument("--lam", type=float, default=2.0)
    p.add_argument("--sides", default="100")
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_couple_check)

    p = sub.add_parser("bounds", help="block-construction constants")
    p.add_argument("--epsilon", type=float, default=0.8)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--lam", type=float, default=2.0)
    p.add_argument("--a11", type=float, default=None, help="a11 for the Monte Carlo")
    p.add_argument("--a12", type=float, default=0.0)
    p.add_argument("--a21", type=float, default=0.0)
    p.add_argument("--a22", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", help="all or one of: " + ", ".join(verify.SUITES))
    p.add_argument("--quick", action="store_true", help="reduced sample sizes")
    p.add_argument("--json", help="write a machine-readable report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("meanfield", help="integrate the replicator equation")
    p.add_argument("--matrix", required=True, help="row-major entries")
    p.add_argument("--u0", required=True)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_meanfield)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ResourceError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DomainError, EstimationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
