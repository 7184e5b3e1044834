"""Experiment orchestration: pipelines, persistence, provenance, self-test.

`run_experiment` executes weights -> quenched simulations -> limit runs ->
convergence comparison, writing every artifact (binary tensors, CSV tables)
plus a manifest with per-file checksums. Reruns with the same config and seed
reproduce identical checksums: all randomness derives from the master seed
via named child streams, and no artifact embeds timestamps.
"""

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import kernels as kernels_mod
from . import limit as limit_mod
from . import sde as sde_mod
from . import seeding
from . import stats as stats_mod
from . import weights as weights_mod
from .config import RunConfig, config_hash
from .errors import ValidationError
from .lattice import LatticeTrajectories, TimeGrid
from .tensorio import save_tensor, sha256_file


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    artifacts: list  # [{"path", "sha256", "bytes"}]
    timings: dict
    summary: dict

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "code_version": self.code_version,
                "artifacts": self.artifacts, "timings": self.timings, "summary": self.summary}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    path.write_text(buf.getvalue())


def limit_runs(cfg: RunConfig, n_runs: int | None = None) -> list[limit_mod.LimitLaw]:
    model = cfg.model()
    n_runs = int(cfg.march["runs"]) if n_runs is None else n_runs
    return [limit_mod.march(model, cfg.march_config(seed=seeding.child_key(cfg.seed, "limit-run", i)))
            for i in range(n_runs)]


def quenched_ladder(cfg: RunConfig) -> dict[int, list[LatticeTrajectories]]:
    model = cfg.model()
    sde_cfg = cfg.sde_config()
    reps = int(cfg.ladder["noise_replicas"])
    out = {}
    for idx, n in enumerate(cfg.ladder["n"]):
        n = int(n)
        draws = cfg.draws_for(idx)
        # one batched spectral synthesis per rung; draw i is index-stable
        ensemble = weights_mod.sample_weight_ensemble(
            model, n, seed=seeding.child_key(cfg.seed, f"weights-n{n}"), count=draws)
        trajs = []
        for d in range(draws):
            jm = weights_mod.WeightMatrix(n=n, entries=ensemble[d], seed=d)
            trajs.append(sde_mod.simulate_quenched(
                jm, sde_cfg, seed=seeding.child_key(cfg.seed, f"quenched-n{n}", d), replicas=reps))
        out[2 * n + 1] = trajs
    return out


def run_experiment(cfg: RunConfig, outdir=None) -> RunManifest:
    """Full pipeline; writes artifacts + manifest.json under the output directory."""
    out = Path(outdir if outdir is not None else cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model()
    f = cfg.f()
    timings = {}
    t_all = time.perf_counter()

    t0 = time.perf_counter()
    needed_n = sorted({int(n) for n in cfg.ladder["n"]} | {int(cfg.weights_n)})
    for n in needed_n:
        rep = weights_mod.validate(model, n, strict=False)
        if not rep.ok:
            raise ValidationError(f"model invalid at n={n}:\n{rep.summary()}")
    timings["validate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    laws = limit_runs(cfg)
    limit_trajs = [law.Z for law in laws]
    timings["limit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    quenched = quenched_ladder(cfg)
    timings["quenched"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    probes = cfg.probe_list()
    report = stats_mod.convergence_report(quenched, limit_trajs, f, probes)
    timings["stats"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    artifacts = []

    def emit_tensor(name, arr, meta):
        save_tensor(out / name, arr, meta)
        artifacts.append(name)
        artifacts.append(name + ".json")

    chash = config_hash(cfg)
    base_meta = {"config_hash": chash, "code_version": __version__}
    emit_tensor("limit_Z.bin", laws[0].Z.paths,
                {**base_meta, "kind": "limit trajectories (run 0)", "cf_mode": cfg.march["cf_mode"],
                 "lattice": cfg.march["lattice"], "T": cfg.sde["T"], "m": cfg.sde["m"]})
    emit_tensor("kernels_K.bin", laws[0].kernels.K,
                {**base_meta, "kind": "K kernel stack (run 0)", "q": laws[0].kernels.q,
                 "lattice": laws[0].kernels.lattice, "sigma": cfg.sde["sigma"],
                 "T": cfg.sde["T"], "m": cfg.sde["m"], "provenance": laws[0].kernels.provenance})
    emit_tensor("kernels_L.bin", laws[0].kernels.L,
                {**base_meta, "kind": "L kernel stack (run 0)", "q": laws[0].kernels.q,
                 "lattice": laws[0].kernels.lattice, "sigma": cfg.sde["sigma"],
                 "T": cfg.sde["T"], "m": cfg.sde["m"], "provenance": laws[0].kernels.provenance})
    for n_lat, trajs in quenched.items():
        stackarr = np.stack([t.paths for t in trajs])
        emit_tensor(f"quenched_N{n_lat}.bin", stackarr,
                    {**base_meta, "kind": "quenched trajectories (draw, replica, site, node)",
                     "n": (n_lat - 1) // 2, "draws": len(trajs),
                     "replicas": int(cfg.ladder["noise_replicas"])})

    grid = cfg.grid()
    nodes = grid.nodes
    lags = sorted({p[0] for p in probes})
    pairs = sorted({(p[1], p[2]) for p in probes})
    limit_tab = stats_mod.probe_table(limit_trajs, f, lags, pairs)
    rows = [[k, v, w, float(nodes[v]), float(nodes[w]), limit_tab[(k, v, w)].estimate,
             limit_tab[(k, v, w)].se] for (k, v, w) in probes]
    _write_csv(out / "limit_probes.csv", ["lag", "v", "w", "t", "s", "estimate", "se"], rows)
    artifacts.append("limit_probes.csv")

    z0 = laws[0].Z.paths[:, 0, -1]
    kurt, kurt_se = stats_mod.excess_kurtosis_check(z0)
    _write_csv(out / "limit_summary.csv", ["stat", "value"],
               [["mean_f_at_T", float(np.mean(f(laws[0].Z.paths[:, :, -1])))],
                ["kurtosis_Z0_T", kurt], ["kurtosis_se", kurt_se],
                ["limit_runs", len(laws)], ["ensemble", int(cfg.march["ensemble"])]])
    artifacts.append("limit_summary.csv")

    rows = []
    for point in report.ladder:
        for pe, diff, dse in zip(point.probes, point.diffs, point.diff_ses):
            lt = limit_tab[(pe.lag, pe.v, pe.w)]
            rows.append([point.n_lattice, pe.lag, pe.v, pe.w, float(nodes[pe.v]), float(nodes[pe.w]),
                         pe.estimate, pe.se, lt.estimate, lt.se, float(diff), float(dse)])
    _write_csv(out / "convergence.csv",
               ["N", "lag", "v", "w", "t", "s", "quenched", "quenched_se", "limit", "limit_se",
                "abs_diff", "diff_se"], rows)
    artifacts.append("convergence.csv")
    _write_csv(out / "ladder.csv", ["N", "median_discrepancy", "se_at_median"],
               [[p.n_lattice, p.median_discrepancy, p.se_at_median] for p in report.ladder])
    artifacts.append("ladder.csv")
    timings["persist"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_all

    manifest = RunManifest(
        config_hash=chash,
        code_version=__version__,
        artifacts=[{"path": a, "sha256": sha256_file(out / a), "bytes": (out / a).stat().st_size}
                   for a in artifacts],
        timings={k: round(v, 3) for k, v in timings.items()},
        summary={
            "medians": {str(p.n_lattice): p.median_discrepancy for p in report.ladder},
            "se_at_median": {str(p.n_lattice): p.se_at_median for p in report.ladder},
            "monotone_decreasing": report.monotone_decreasing,
            "fit_exponent": report.fit_exponent,
            "fit_ci": report.fit_ci,
        },
    )
    import json

    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=1) + "\n")
    return manifest


# --- self-test ----------------------------------------------------------------


@dataclass
class SelfTestReport:
    checks: list = field(default_factory=list)  # (name, ok, detail)

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def summary(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in self.checks]
        lines.append(f"selftest: {'all passed' if self.ok else 'FAILURES present'}")
        return "\n".join(lines)


def _check_operator_identity():
    rng = np.random.default_rng(611)
    worst = 0.0
    for _ in range(5):
        m = 7
        a = rng.standard_normal((m, m))
        k = a @ a.T
        sig, dt = 1.2, 0.15
        eye = np.eye(m)
        stack = kernels_mod.KernelStack(q=0, grid=TimeGrid(T=dt * (m - 1), m=m - 1),
                                        K=k[None], sigma=sig)
        ltil = kernels_mod.K_to_L(stack, sig, 1).L[0]
        inv = np.linalg.inv(eye + dt / sig**2 * k)
        forms = [np.linalg.solve(eye + dt / sig**2 * k, k), k @ inv, sig**2 * (eye - inv) / dt]
        worst = max(worst, *(float(np.max(np.abs(ltil - f_))) for f_ in forms))
    return worst < 1e-10, f"max deviation across the three closed forms {worst:.2e}"


def _check_tilt_moment_identity():
    rng = np.random.default_rng(612)
    m, sig, dt = 6, 0.9, 0.2
    a = rng.standard_normal((m, m))
    k = a @ a.T + 0.1 * np.eye(m)
    stack = kernels_mod.KernelStack(q=0, grid=TimeGrid(T=dt * (m - 1), m=m - 1), K=k[None], sigma=sig)
    ltil = kernels_mod.K_to_L(stack, sig, 1).L[0]
    moment = kernels_mod.gaussian_tilt_moment(k, dt / sig**2 * np.eye(m))
    err = float(np.max(np.abs(ltil - moment)))
    return err < 1e-8, f"fixed-horizon tilt vs Gaussian tilt moment: {err:.2e}"


def _check_tilt_moment_mc():
    rng = np.random.default_rng(613)
    d = 3
    a = rng.standard_normal((d, d))
    sig_mat = a @ a.T + 0.2 * np.eye(d)
    b = rng.standard_normal((d, d)) * 0.5
    a_mat = b @ b.T
    closed = kernels_mod.gaussian_tilt_moment(sig_mat, a_mat)
    x = rng.multivariate_normal(np.zeros(d), sig_mat, size=300_000)
    wts = np.exp(-0.5 * np.einsum("ni,ij,nj->n", x, a_mat, x))
    mc = np.einsum("n,ni,nj->ij", wts, x, x) / wts.sum()
    rel = float(np.linalg.norm(mc - closed) / np.linalg.norm(closed))
    return rel < 0.05, f"reweighted-MC relative Frobenius error {rel:.3f}"


def _check_resolvent_residual():
    rng = np.random.default_rng(614)
    ns, m = 5, 8
    grid = TimeGrid(T=0.9, m=m)
    l_lag = 0.4 * rng.standard_normal((ns, m + 1, m + 1))
    stack = kernels_mod.KernelStack(q=2, grid=grid, K=np.zeros_like(l_lag), L=l_lag,
                                    sigma=1.0, lattice=ns)
    tol = 1e-10
    res = kernels_mod.iterated_kernels(stack, 1.0, tol=tol)
    mask = kernels_mod.causal_mask(m + 1)
    lm = l_lag * mask
    mv = res.values * mask
    comp = np.zeros_like(mv)
    for i in range(ns):
        for l in range(ns):
            comp[i] += grid.dt * np.einsum("vu,uw->vw", lm[l], mv[(i - l) % ns])
    resid = float(np.max(np.abs(mv - lm - comp)))
    return resid < 10 * tol, f"residual ||M - L - (L o M)/sigma||: {resid:.2e} (p_used={res.p_used})"


def _check_resolvent_scalar():
    c, sig, m = 0.5, 1.1, 16
    grid = TimeGrid(T=1.0, m=m)
    stack = kernels_mod.KernelStack(q=0, grid=grid, K=np.zeros((1, m + 1, m + 1)),
                                    L=np.full((1, m + 1, m + 1), c), sigma=sig, lattice=1)
    res = kernels_mod.iterated_kernels(stack, sig, tol=1e-12)
    x = c * grid.dt / sig
    vv, ww = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    closed = np.where(vv > ww, c * (1 + x) ** np.clip(vv - ww - 1, 0, None), 0.0)
    err = float(np.max(np.abs(res.values[0] * kernels_mod.causal_mask(m + 1) - closed)))
    return err < 1e-10, f"constant kernel vs summed discrete series: {err:.2e}"


def _check_zero_coupling():
    grid = TimeGrid(T=1.0, m=10)
    from .activation import logistic4

    cfg = limit_mod.MarchConfig(lattice=7, q=1, grid=grid, sigma=1.4, f=logistic4(),
                                ensemble=4, cf_mode="empirical", seed=615)
    rng = np.random.default_rng(616)
    noise = rng.standard_normal((4, 7, 10))
    law = limit_mod.march(weights_mod.zero_model(), cfg, noise=noise)
    ref = np.concatenate([np.zeros((4, 7, 1)), np.cumsum(1.4 * np.sqrt(grid.dt) * noise, axis=2)], axis=2)
    ok = np.array_equal(law.Z.paths, ref)
    return ok, "Z = sigma*W bit-identical under R = 0" if ok else "zero-coupling paths deviate"


def _check_gh_quadrature():
    from .activation import logistic4

    f = logistic4()
    # at rho = 1 the whitened 2-d rule must collapse exactly to the 1-d rule
    got = float(kernels_mod.bivariate_gaussian_expectation(f, 1.0, 1.0, 1.0, quad_order=40))
    h, wh = np.polynomial.hermite.hermgauss(40)
    oracle = float(np.sum(wh / np.sqrt(np.pi) * f(np.sqrt(2.0) * h) ** 2))
    err = abs(got - oracle)
    return err < 1e-10, f"perfectly-correlated E[f^2] vs 1-d quadrature: {err:.2e}"


def _check_weights_covariance():
    model = weights_mod.product_model(c=1.0)
    n = 2
    size = 2 * n + 1
    draws = weights_mod.sample_weight_ensemble(model, n, seed=617, count=30_000)
    prod = draws[:, 0, 0][:, None, None] * draws
    est = prod.mean(0)
    se = prod.std(0, ddof=1) / np.sqrt(len(prod))
    from .lattice import lag_values

    lv = lag_values(size)
    kk, ll = np.meshgrid(lv, lv, indexing="ij")
    z = float(np.max(np.abs(est - model.rj(kk, ll) / size) / se))
    return z < 6.0, f"max covariance z-score over the lag grid: {z:.2f} (30k draws)"


def _check_representation_equivalence():
    rng = np.random.default_rng(618)
    ns, m = 5, 6
    grid = TimeGrid(T=0.8, m=m)
    l_lag = 0.3 * rng.standard_normal((ns, m + 1, m + 1))
    stack = kernels_mod.KernelStack(q=1, grid=grid, K=np.zeros_like(l_lag), L=l_lag,
                                    sigma=1.0, lattice=ns)
    res = kernels_mod.iterated_kernels(stack, 1.0, tol=1e-12)
    noise = rng.standard_normal((2, ns, m))
    zm = limit_mod.march_frozen(stack, 1.0, 2, noise=noise).paths
    zc = limit_mod.sample_closed_form(stack, res, 1.0, 2, noise=noise).paths
    err = float(np.max(np.abs(zm - zc)))
    return err < 1e-8, f"frozen march vs closed form, shared noise: {err:.2e}"


def selftest() -> SelfTestReport:
    """Fast property bundle (< 60 s): operator identities, resolvent, reductions, MC spot checks."""
    checks = [
        ("operator-identity", _check_operator_identity),
        ("tilt-moment-identity", _check_tilt_moment_identity),
        ("tilt-moment-mc", _check_tilt_moment_mc),
        ("resolvent-residual", _check_resolvent_residual),
        ("resolvent-scalar", _check_resolvent_scalar),
        ("zero-coupling-reduction", _check_zero_coupling),
        ("gh-quadrature", _check_gh_quadrature),
        ("weights-covariance-mc", _check_weights_covariance),
        ("representation-equivalence", _check_representation_equivalence),
    ]
    report = SelfTestReport()
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        report.checks.append((name, bool(ok), detail))
    return report
