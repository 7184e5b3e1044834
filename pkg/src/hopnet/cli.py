"""Command-line interface.

Exit codes: 0 ok, 1 validation error, 2 numerical failure.
"""

import argparse
import sys
from pathlib import Path

from . import __version__
from . import harness as harness_mod
from . import kernels as kernels_mod
from . import limit as limit_mod
from . import sde as sde_mod
from . import stats as stats_mod
from . import weights as weights_mod
from .config import config_hash, load_config
from .errors import NumericalError, ValidationError
from .lattice import LatticeTrajectories, TimeGrid
from .tensorio import load_tensor, save_tensor


def _load_stack(prefix: str) -> kernels_mod.KernelStack:
    k, meta = load_tensor(prefix + "_K.bin")
    l, _ = load_tensor(prefix + "_L.bin")
    grid = TimeGrid(T=float(meta["T"]), m=int(meta["m"]))
    return kernels_mod.KernelStack(q=int(meta["q"]), grid=grid, K=k, L=l,
                                   sigma=float(meta["sigma"]), lattice=int(meta["lattice"]),
                                   provenance=meta.get("provenance", "loaded"))


def _save_stack(prefix: str, stack: kernels_mod.KernelStack, extra: dict | None = None) -> None:
    meta = {"q": stack.q, "lattice": stack.lattice, "sigma": stack.sigma,
            "T": stack.grid.T, "m": stack.grid.m, "provenance": stack.provenance}
    meta.update(extra or {})
    save_tensor(prefix + "_K.bin", stack.K, {**meta, "kind": "K kernel stack"})
    save_tensor(prefix + "_L.bin", stack.L, {**meta, "kind": "L kernel stack"})


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    n = args.n if args.n is not None else cfg.weights_n
    rep = weights_mod.validate(cfg.model(), n, strict=not args.lenient)
    print(rep.summary())
    return 0 if rep.ok else 1


def cmd_weights_sample(args) -> int:
    cfg = load_config(args.config)
    n = args.n if args.n is not None else cfg.weights_n
    model = cfg.model()
    draws = weights_mod.sample_weight_ensemble(model, n, cfg.seed, args.draws)
    arr = draws[0] if args.draws == 1 else draws
    save_tensor(args.out, arr, {"kind": "weight matrix", "n": n, "seed": cfg.seed,
                                "draws": args.draws, "model": {"family": cfg.model_family,
                                                               "params": cfg.model_params}})
    print(f"wrote {args.out}: shape {arr.shape}")
    return 0


def cmd_simulate_quenched(args) -> int:
    cfg = load_config(args.config)
    arr, meta = load_tensor(args.weights)
    if arr.ndim == 3:
        arr = arr[0]
    jm = weights_mod.WeightMatrix(n=(arr.shape[0] - 1) // 2, entries=arr, seed=int(meta.get("seed", 0)))
    replicas = args.replicas if args.replicas is not None else int(cfg.ladder["noise_replicas"])
    traj = sde_mod.simulate_quenched(jm, cfg.sde_config(), seed=cfg.seed, replicas=replicas)
    save_tensor(args.out, traj.paths, {"kind": "quenched trajectories", "seed": cfg.seed,
                                       "replicas": replicas, "T": cfg.sde["T"], "m": cfg.sde["m"]})
    mean = traj.paths.mean(axis=(0, 1))
    var = traj.paths.var(axis=(0, 1))
    rows = [[v, float(t), float(mu), float(va)]
            for v, (t, mu, va) in enumerate(zip(traj.grid.nodes, mean, var))]
    harness_mod._write_csv(Path(args.out + ".summary.csv"), ["node", "t", "mean", "var"], rows)
    print(f"wrote {args.out} ({replicas} replicas) and {args.out}.summary.csv")
    return 0


def cmd_kernels_build(args) -> int:
    cfg = load_config(args.config)
    arr, meta = load_tensor(args.trajectories)
    if arr.ndim == 4:  # (draws, reps, sites, nodes) -> flatten draw axis
        arr = arr.reshape(-1, *arr.shape[2:])
    grid = TimeGrid(T=float(meta.get("T", cfg.sde["T"])), m=int(meta.get("m", cfg.sde["m"])))
    traj = LatticeTrajectories(paths=arr, grid=grid)
    q = min(int(cfg.march["q"]), (traj.sites - 1) // 2)
    cf = kernels_mod.cf_from_paths(traj, cfg.f(), q)
    stack = kernels_mod.assemble_K(cfg.model(), cf, q)
    builder = kernels_mod.K_to_L_causal if args.causal_rows else kernels_mod.K_to_L
    stack = builder(stack, float(cfg.sde["sigma"]), traj.sites)
    _save_stack(args.out, stack)
    print(f"wrote {args.out}_K.bin / _L.bin (lattice {stack.lattice}, q {stack.q}, "
          f"provenance {stack.provenance})")
    return 0


def cmd_kernels_resolvent(args) -> int:
    stack = _load_stack(args.kernels)
    res = kernels_mod.iterated_kernels(stack, stack.sigma, tol=args.tol, max_order=args.max_order)
    save_tensor(args.out, res.values, {"kind": "resolvent kernel", "p_used": res.p_used,
                                       "tail_bound": res.tail_bound, "tol": res.tol,
                                       "sigma": res.sigma, "lattice": res.lattice,
                                       "T": res.grid.T, "m": res.grid.m})
    print(f"wrote {args.out}: truncation order {res.p_used}, tail bound {res.tail_bound:.3e}")
    return 0


def cmd_kernels_check(args) -> int:
    stack = _load_stack(args.kernels)
    chk = kernels_mod.check_stack(stack)
    print(chk.summary())
    return 0 if chk.ok else 2


def cmd_limit_march(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    law = limit_mod.march(cfg.model(), cfg.march_config())
    save_tensor(out / "limit_Z.bin", law.Z.paths,
                {"kind": "limit trajectories", "cf_mode": cfg.march["cf_mode"],
                 "T": cfg.sde["T"], "m": cfg.sde["m"], "seed": cfg.seed})
    _save_stack(str(out / "kernels"), law.kernels)
    f = cfg.f()
    probes = cfg.probe_list()
    tab = stats_mod.probe_table(law.Z, f, sorted({p[0] for p in probes}),
                                sorted({(p[1], p[2]) for p in probes}))
    nodes = law.Z.grid.nodes
    rows = [[k, v, w, float(nodes[v]), float(nodes[w]), tab[(k, v, w)].estimate, tab[(k, v, w)].se]
            for (k, v, w) in probes]
    harness_mod._write_csv(out / "limit_probes.csv", ["lag", "v", "w", "t", "s", "estimate", "se"], rows)
    kurt, kse = stats_mod.excess_kurtosis_check(law.Z.paths[:, 0, -1])
    harness_mod._write_csv(out / "limit_summary.csv", ["stat", "value"],
                           [["kurtosis_Z0_T", kurt], ["kurtosis_se", kse]])
    print(f"wrote {out}/limit_Z.bin, kernels_[KL].bin, limit_probes.csv, limit_summary.csv")
    return 0


def cmd_limit_closed_form(args) -> int:
    cfg = load_config(args.config)
    stack = _load_stack(args.kernels)
    res = kernels_mod.iterated_kernels(stack, stack.sigma, tol=args.tol)
    ensemble = args.ensemble if args.ensemble is not None else int(cfg.march["ensemble"])
    traj = limit_mod.sample_closed_form(stack, res, stack.sigma, ensemble, seed=cfg.seed)
    save_tensor(args.out, traj.paths, {"kind": "closed-form limit trajectories",
                                       "p_used": res.p_used, "tail_bound": res.tail_bound,
                                       "T": stack.grid.T, "m": stack.grid.m, "seed": cfg.seed})
    print(f"wrote {args.out} (ensemble {ensemble}, resolvent order {res.p_used})")
    return 0


def cmd_limit_single_site(args) -> int:
    cfg = load_config(args.config)
    law = limit_mod.single_site_uncorrelated(args.lambda2, cfg.grid(), float(cfg.sde["sigma"]),
                                             cfg.f(), int(cfg.march["ensemble"]), seed=cfg.seed)
    save_tensor(args.out, law.Z.paths, {"kind": "single-site limit trajectories",
                                        "lambda2": args.lambda2, "T": cfg.sde["T"],
                                        "m": cfg.sde["m"], "seed": cfg.seed})
    print(f"wrote {args.out}")
    return 0


def cmd_compare(args) -> int:
    run = Path(args.run)
    cfg = load_config(args.config if args.config else run / "config.json")
    f = cfg.f()
    probes = cfg.probe_list()
    quenched = {}
    for n in cfg.ladder["n"]:
        n_lat = 2 * int(n) + 1
        arr, _ = load_tensor(run / f"quenched_N{n_lat}.bin")
        quenched[n_lat] = [LatticeTrajectories(paths=arr[d], grid=cfg.grid()) for d in range(arr.shape[0])]
    limit_arr, _ = load_tensor(run / "limit_Z.bin")
    limit = LatticeTrajectories(paths=limit_arr, grid=cfg.grid())
    report = stats_mod.convergence_report(quenched, limit, f, probes)
    print(report.summary())
    return 0


def cmd_selftest(_args) -> int:
    report = harness_mod.selftest()
    print(report.summary())
    return 0 if report.ok else 2


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    outdir = Path(args.outdir if args.outdir else cfg.outdir)
    manifest = harness_mod.run_experiment(cfg, outdir)
    from .config import save_config

    save_config(cfg, outdir / "config.json")
    print(f"run complete: config {config_hash(cfg)[:12]}, {len(manifest.artifacts)} artifacts in {outdir}")
    for key, val in manifest.summary["medians"].items():
        print(f"  N={key}: median discrepancy {val:.6f} "
              f"(SE {manifest.summary['se_at_median'][key]:.6f})")
    print(f"  monotone decreasing: {manifest.summary['monotone_decreasing']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hopnet", description=__doc__)
    p.add_argument("--version", action="version", version=f"hopnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check a covariance model's envelope and spectrum")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--lenient", action="store_true", help="accept PSD-degenerate spectra")
    sp.set_defaults(fn=cmd_validate)

    w = sub.add_parser("weights", help="weight-matrix commands").add_subparsers(dest="sub", required=True)
    sp = w.add_parser("validate")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--lenient", action="store_true")
    sp.set_defaults(fn=cmd_validate)
    sp = w.add_parser("sample")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--draws", type=int, default=1)
    sp.set_defaults(fn=cmd_weights_sample)

    s = sub.add_parser("simulate", help="integrate the quenched system").add_subparsers(dest="sub", required=True)
    sp = s.add_parser("quenched")
    sp.add_argument("--config", required=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--replicas", type=int)
    sp.set_defaults(fn=cmd_simulate_quenched)

    k = sub.add_parser("kernels", help="kernel stack commands").add_subparsers(dest="sub", required=True)
    sp = k.add_parser("build")
    sp.add_argument("--config", required=True)
    sp.add_argument("--trajectories", required=True)
    sp.add_argument("--out", required=True, help="output prefix for <prefix>_K.bin / _L.bin")
    sp.add_argument("--causal-rows", action="store_true",
                    help="assemble L rows at horizon t_v instead of the fixed-horizon operator")
    sp.set_defaults(fn=cmd_kernels_build)
    sp = k.add_parser("resolvent")
    sp.add_argument("--kernels", required=True, help="input prefix")
    sp.add_argument("--out", required=True)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-order", type=int, default=200)
    sp.set_defaults(fn=cmd_kernels_resolvent)
    sp = k.add_parser("check")
    sp.add_argument("--kernels", required=True, help="input prefix")
    sp.set_defaults(fn=cmd_kernels_check)

    l = sub.add_parser("limit", help="limit-dynamics commands").add_subparsers(dest="sub", required=True)
    sp = l.add_parser("march")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_limit_march)
    sp = l.add_parser("closed-form")
    sp.add_argument("--config", required=True)
    sp.add_argument("--kernels", required=True, help="input prefix")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ensemble", type=int)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.set_defaults(fn=cmd_limit_closed_form)
    sp = l.add_parser("single-site")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lambda2", type=float, default=1.0)
    sp.set_defaults(fn=cmd_limit_single_site)

    sp = sub.add_parser("compare", help="recompute the convergence report from a run directory "
                                        "(limit side uses the stored run-0 trajectories)")
    sp.add_argument("--run", required=True)
    sp.add_argument("--config")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("selftest", help="run the fast property bundle")
    sp.set_defaults(fn=cmd_selftest)

    sp = sub.add_parser("run", help="run the full experiment pipeline")
    sp.add_argument("--config", required=True)
    sp.add_argument("--outdir")
    sp.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
