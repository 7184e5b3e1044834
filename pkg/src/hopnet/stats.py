"""Empirical-measure statistics and quenched-vs-limit convergence diagnostics.

The comparison statistic throughout is the lag feature covariance
(1/N) sum_j f(V^j_t) f(V^{j+k}_s): it is exactly the functional through which
the law enters every kernel, so agreement at a probe set of (k, t, s) is
agreement of the objects the theory is about. Path-space distances ship as
the metric d_T and a Wasserstein upper bound (a bound, not the distance
itself).
"""

from dataclasses import dataclass, field

import numpy as np

from .activation import Activation
from .errors import InsufficientReplicas, ShapeMismatch, ValidationError, WindowMismatch
from .lattice import LatticeTrajectories


def path_distance_dT(u: np.ndarray, v: np.ndarray, f: Activation, b_env,
                     window: np.ndarray | None = None) -> float:
    """d_T(u, v) = sum_i b_i * sup_t |f(u^i_t) - f(v^i_t)| over a finite site window.

    `u`, `v` are (sites, times) arrays over the same window of signed site
    indices (default: consecutive indices centered at 0); `b_env` maps a
    signed index to its summable weight b_i.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim != 2 or u.shape != v.shape:
        raise WindowMismatch(f"need matching (sites, times) arrays, got {u.shape} and {v.shape}")
    if window is None:
        window = np.arange(u.shape[0]) - u.shape[0] // 2
    else:
        window = np.asarray(window)
        if window.shape != (u.shape[0],):
            raise WindowMismatch(f"window has {window.shape} entries for {u.shape[0]} sites")
    weights = np.asarray(b_env(window), dtype=float)
    return float(np.sum(weights * np.max(np.abs(f(u) - f(v)), axis=1)))


def wasserstein_upper_bound(x: np.ndarray, y: np.ndarray, b_sum: float, T: float) -> float:
    """b * sqrt((1/N) sum_k ||x^k - y^k||_{L2}^2), the bound relating the
    empirical-measure Wasserstein distance to the configuration L2 distance.

    `x`, `y` are (sites, m+1) configurations on the shared grid; the L2 time
    norm uses the left rule (nodes 0..m-1 with weight T/m).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape != y.shape:
        raise ShapeMismatch(f"need matching (sites, times) arrays, got {x.shape} and {y.shape}")
    m = x.shape[1] - 1
    if m < 1:
        raise ShapeMismatch("need at least two time nodes")
    dt = T / m
    l2sq = dt * np.sum((x[:, :m] - y[:, :m]) ** 2, axis=1)
    return float(b_sum * np.sqrt(np.mean(l2sq)))


@dataclass
class ProbeEstimate:
    lag: int
    v: int
    w: int
    estimate: float
    se: float


def lag_feature_covariance(paths: LatticeTrajectories, f: Activation, lags, time_pairs) -> list[ProbeEstimate]:
    """Monte Carlo estimates of (1/N) sum_j f(V^j_{t_v}) f(V^{j+k}_{t_w}) with replica SEs."""
    arr = paths.paths
    n_sites = paths.sites
    out = []
    fv = f(arr)
    for k in lags:
        if abs(int(k)) >= n_sites:
            raise ValidationError(f"lag {k} outside a lattice of {n_sites} sites")
        rolled = np.roll(fv, -int(k), axis=1)
        for (v, w) in time_pairs:
            per_rep = np.mean(fv[:, :, v] * rolled[:, :, w], axis=1)
            se = per_rep.std(ddof=1) / np.sqrt(len(per_rep)) if len(per_rep) > 1 else 0.0
            out.append(ProbeEstimate(int(k), int(v), int(w), float(per_rep.mean()), float(se)))
    return out


def excess_kurtosis_check(x: np.ndarray) -> tuple[float, float]:
    """(kurtosis, SE under normality) of a 1-d sample; Gaussian target is 3."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    kurt = np.mean(c**4) / np.var(x) ** 2
    return float(kurt), float(np.sqrt(24.0 / x.size))


@dataclass
class LadderPoint:
    n_lattice: int
    probes: list[ProbeEstimate]  # quenched estimates
    diffs: np.ndarray  # |quenched - limit| per probe
    diff_ses: np.ndarray
    median_discrepancy: float
    se_at_median: float


@dataclass
class ConvergenceReport:
    ladder: list[LadderPoint]
    limit_probes: list[ProbeEstimate]
    probe_list: list[tuple]
    fit_exponent: float | None = None
    fit_ci: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def medians(self) -> np.ndarray:
        return np.array([p.median_discrepancy for p in self.ladder])

    @property
    def monotone_decreasing(self) -> bool:
        med = self.medians
        return bool(np.all(np.diff(med) < 0))

    def summary(self) -> str:
        lines = ["convergence ladder (median lag-feature-covariance discrepancy):"]
        for p in self.ladder:
            lines.append(f"  N={p.n_lattice:4d}  median |diff| = {p.median_discrepancy:.5f}"
                         f"  (SE at median {p.se_at_median:.5f})")
        if self.fit_exponent is not None:
            lo, hi = self.fit_ci
            lines.append(f"  fitted decay exponent {self.fit_exponent:.3f}  (95% CI [{lo:.3f}, {hi:.3f}])")
        lines.append(f"  strictly decreasing: {self.monotone_decreasing}")
        return "\n".join(lines)


def _median_with_se(diffs: np.ndarray, ses: np.ndarray) -> tuple[float, float]:
    order = np.argsort(diffs)
    k = len(diffs)
    if k % 2:
        i = order[k // 2]
        return float(diffs[i]), float(ses[i])
    i, j = order[k // 2 - 1], order[k // 2]
    return float(0.5 * (diffs[i] + diffs[j])), float(0.5 * np.hypot(ses[i], ses[j]))


def probe_table(runs, f: Activation, lags, pairs) -> dict[tuple, ProbeEstimate]:
    """Probe estimates with SEs over independent units.

    A single LatticeTrajectories treats each replica path as a unit; a list
    treats each element (e.g. one weight draw, one limit run) as a unit whose
    estimate pools its own replicas, so draw-level correlations are priced in.
    """
    if isinstance(runs, LatticeTrajectories):
        return {(e.lag, e.v, e.w): e for e in lag_feature_covariance(runs, f, lags, pairs)}
    per_unit = {}
    for traj in runs:
        fv = f(traj.paths)
        for k in lags:
            rolled = np.roll(fv, -int(k), axis=1)
            for (v, w) in pairs:
                per_unit.setdefault((int(k), v, w), []).append(float(np.mean(fv[:, :, v] * rolled[:, :, w])))
    out = {}
    for key, vals in per_unit.items():
        vals = np.asarray(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
        out[key] = ProbeEstimate(*key, float(vals.mean()), float(se))
    return out


def convergence_report(quenched: dict, limit, f: Activation, probes: list[tuple],
                       min_resolution: float = 0.0) -> ConvergenceReport:
    """Per-N discrepancy of lag-feature covariances against the limit run.

    `probes` is a list of (lag, v, w) node triples shared by all runs; the
    quenched dict maps lattice size N to trajectories (or a list of them, one
    per weight draw), `limit` is trajectories or a list of limit runs. With
    min_resolution > 0, raises InsufficientReplicas when the combined SE at
    the median exceeds min_resolution times the median discrepancy somewhere.
    """
    lags = sorted({p[0] for p in probes})
    pairs = sorted({(p[1], p[2]) for p in probes})
    table = lambda runs: probe_table(runs, f, lags, pairs)
    limit_tab = table(limit)
    limit_probes = [limit_tab[tuple(p)] for p in probes]
    ladder = []
    for n_lat in sorted(quenched):
        tab = table(quenched[n_lat])
        qp = [tab[tuple(p)] for p in probes]
        diffs = np.array([abs(a.estimate - b.estimate) for a, b in zip(qp, limit_probes)])
        ses = np.array([np.hypot(a.se, b.se) for a, b in zip(qp, limit_probes)])
        med, med_se = _median_with_se(diffs, ses)
        ladder.append(LadderPoint(n_lat, qp, diffs, ses, med, med_se))
    if min_resolution > 0:
        for p in ladder:
            if p.se_at_median > min_resolution * max(p.median_discrepancy, 1e-300):
                raise InsufficientReplicas(
                    f"N={p.n_lattice}: SE {p.se_at_median:.3e} exceeds {min_resolution} x median "
                    f"discrepancy {p.median_discrepancy:.3e}")
    report = ConvergenceReport(ladder=ladder, limit_probes=limit_probes, probe_list=list(probes))
    meds = report.medians
    ns = np.array([p.n_lattice for p in ladder], dtype=float)
    if len(ladder) >= 3 and np.all(meds > 0):
        x = np.log(ns)
        y = np.log(meds)
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        dof = max(len(x) - 2, 1)
        sxx = np.sum((x - x.mean()) ** 2)
        se_slope = np.sqrt(np.sum(resid**2) / dof / sxx)
        report.fit_exponent = float(slope)
        report.fit_ci = (float(slope - 1.96 * se_slope), float(slope + 1.96 * se_slope))
    return report
