"""Limit / annealed dynamics on the spatial torus.

Three routes to the limiting Gaussian law:

  * `march` - the causal self-consistent scheme: step by step, rebuild the
    feature covariance of the already-built ensemble (empirically or via
    Gauss-Hermite quadrature under the Gaussian ansatz), tilt it into the
    drift kernel at horizon t_v, and advance
        Z_{v+1} = Z_v + sigma * theta_v * dt + sigma * sqrt(dt) * xi_v,
        theta^j_v = sigma^-2 sum_k sum_{w<v} L^k(t_v, t_w) dZ^{k+j}_w.
  * `march_frozen` - the same recursion with a fixed kernel stack (the linear
    non-Markovian dynamics with known coefficients).
  * `sample_closed_form` - the resolvent representation: Z = sigma W +
    int Phi + sigma^-1 int M * Phi with Phi the kernel-filtered noise.

`march_picard` iterates the self-consistency over whole paths instead
(kernels from the current law, then a full linear re-solve); it is a
cross-check, not the default. Spatial sums are exact circular correlations,
evaluated per lattice frequency.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import activation as act_mod
from . import kernels as kernels_mod
from . import seeding
from .activation import Activation
from .errors import EnsembleTooSmall, GridMismatch, ValidationError
from .kernels import (FeatureCovariance, KernelStack, ResolventKernel, assemble_K,
                      causal_mask, cf_from_gaussian, cf_from_paths, tilt_operator)
from .lattice import LatticeTrajectories, TimeGrid, check_odd_size
from .weights import CovarianceModel, delta_model
from .weights import validate as weights_validate


@dataclass(frozen=True)
class MarchConfig:
    lattice: int  # torus size N_s standing in for the infinite lattice
    q: int  # kernel lag truncation
    grid: TimeGrid
    sigma: float
    f: Activation
    ensemble: int
    cf_mode: str = "empirical"  # or "gaussian"
    seed: int = 0
    kernel_stride: int = 1
    quad_order: int = 40

    def __post_init__(self):
        check_odd_size(self.lattice, "march lattice")
        single_site = self.lattice == 1 and self.q == 0
        if not single_site and not 0 <= self.q < (self.lattice - 1) / 2:
            raise ValidationError(f"need q < (lattice-1)/2, got q={self.q}, lattice={self.lattice}")
        if self.cf_mode not in ("empirical", "gaussian"):
            raise ValidationError(f"cf_mode must be 'empirical' or 'gaussian', got {self.cf_mode!r}")
        if self.sigma <= 0:
            raise ValidationError("sigma must be > 0")
        if self.ensemble < 1:
            raise ValidationError("ensemble must be >= 1")
        if self.kernel_stride < 1:
            raise ValidationError("kernel_stride must be >= 1")
        act_mod.verify(self.f)


@dataclass
class LimitLaw:
    Z: LatticeTrajectories
    kernels: KernelStack
    theta_trace: np.ndarray  # (ensemble, lattice, m+1)
    config: Optional[MarchConfig] = None
    meta: dict = field(default_factory=dict)


def _draw_noise(seed: int, stage: str, ensemble: int, n_sites: int, steps: int) -> np.ndarray:
    out = np.empty((ensemble, n_sites, steps))
    for r in range(ensemble):
        out[r] = seeding.stream(seed, stage, r).standard_normal((n_sites, steps))
    return out


def _check_noise(noise, ensemble, n_sites, steps):
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (ensemble, n_sites, steps):
        raise ValidationError(f"noise shape {noise.shape} != {(ensemble, n_sites, steps)}")
    return noise


def lattice_covariance(paths: np.ndarray, q: int) -> np.ndarray:
    """Empirical stationary path covariance cov[l, v, w] = mean_{r,j} X[r,j,v] X[r,j+l,w]."""
    reps, n_sites, _ = paths.shape
    head = np.empty((q + 1, paths.shape[2], paths.shape[2]))
    for l in range(q + 1):
        rolled = np.roll(paths, -l, axis=1)
        head[l] = np.einsum("rjv,rjw->vw", paths, rolled) / (reps * n_sites)
    return kernels_mod._mirror_lags(head, q)


class _RunningCov:
    """Incremental stationary covariance over a growing time grid.

    Node v is filled exactly once (one lattice-FFT cross-correlation against
    all earlier nodes), so the accumulated head restricted to [0..v] is
    bit-identical to what a fresh estimate on the prefix would produce. The
    lag-0 slice is exactly symmetric by construction.
    """

    def __init__(self, reps: int, n_sites: int, q: int, n_nodes: int):
        self.q = q
        self.n_sites = n_sites
        self.head = np.zeros((q + 1, n_nodes, n_nodes))
        self._obs_f = np.empty((reps, n_sites, n_nodes), dtype=complex)
        self.denom = reps * n_sites
        self.filled = 0

    def extend(self, obs_col: np.ndarray) -> None:
        v = self.filled
        self._obs_f[:, :, v] = np.fft.fft(obs_col, axis=1)
        cross = np.einsum("rp,rpw->pw", np.conj(self._obs_f[:, :, v]), self._obs_f[:, :, : v + 1])
        corr = np.fft.ifft(cross, axis=0).real / self.denom
        self.head[:, v, : v + 1] = corr[: self.q + 1]
        for l in range(self.q + 1):
            self.head[l, : v + 1, v] = corr[-l % self.n_sites]
        self.filled = v + 1

    def head_prefix(self, n_nodes: int) -> np.ndarray:
        return self.head[:, :n_nodes, :n_nodes]


class _RunningGaussCf:
    """Feature covariance of the Gaussian ansatz, extended node by node.

    Wraps a _RunningCov of the raw paths and maps each new row/column of the
    path covariance through the bivariate Gauss-Hermite expectation.
    """

    def __init__(self, cov: _RunningCov, f, quad_order: int):
        self.cov = cov
        self.f = f
        self.quad_order = quad_order
        self.head = np.zeros_like(cov.head)

    def extend(self, obs_col: np.ndarray) -> None:
        self.cov.extend(obs_col)
        v = self.cov.filled - 1
        var = np.diagonal(self.cov.head[0])[: v + 1]
        self.head[:, v, : v + 1] = kernels_mod.bivariate_gaussian_expectation(
            self.f, var[v], self.cov.head[:, v, : v + 1], var[None, : v + 1],
            quad_order=self.quad_order)
        self.head[:, : v + 1, v] = kernels_mod.bivariate_gaussian_expectation(
            self.f, var[None, : v + 1], self.cov.head[:, : v + 1, v], var[v],
            quad_order=self.quad_order)

    def head_prefix(self, n_nodes: int) -> np.ndarray:
        return self.head[:, :n_nodes, :n_nodes]


def _theta_step(lf_row: np.ndarray, dzf: np.ndarray, sigma: float) -> np.ndarray:
    """theta at one node from the kernel row lf_row (P, v) and increments dzf (E, P, v)."""
    tf = np.einsum("pw,rpw->rp", np.conj(lf_row), dzf) / sigma**2
    return np.fft.ifft(tf, axis=1).real


def _truncate_lags(arr: np.ndarray, q: int) -> np.ndarray:
    """Zero FFT-order lag entries outside I_q (in place)."""
    if 2 * q + 1 < arr.shape[0]:
        arr[q + 1: arr.shape[0] - q] = 0.0
    return arr


def march(model: CovarianceModel, cfg: MarchConfig, noise: np.ndarray | None = None) -> LimitLaw:
    """Self-consistent causal construction of the limit law on the torus.

    `noise`, when given, is (ensemble, lattice, m) standard-normal increments
    replacing the seeded streams.
    """
    grid, n_s, q, sig = cfg.grid, cfg.lattice, cfg.q, cfg.sigma
    m = grid.m
    dt = grid.dt
    if cfg.cf_mode == "empirical" and cfg.ensemble < 2:
        raise EnsembleTooSmall("empirical cf mode needs ensemble >= 2")
    gate = weights_validate(model, q, strict=False)
    if not gate.ok:
        raise ValidationError(f"model invalid on the kernel lag range:\n{gate.summary()}")
    if noise is None:
        noise = _draw_noise(cfg.seed, "march-noise", cfg.ensemble, n_s, m)
    else:
        noise = _check_noise(noise, cfg.ensemble, n_s, m)
    z = np.zeros((cfg.ensemble, n_s, m + 1))
    theta = np.zeros((cfg.ensemble, n_s, m + 1))
    dzf = np.zeros((cfg.ensemble, n_s, m), dtype=complex)
    sqdt = sig * np.sqrt(dt)
    if cfg.cf_mode == "empirical":
        running = _RunningCov(cfg.ensemble, n_s, q, m + 1)
        observe = lambda col: cfg.f(col)
    else:
        running = _RunningGaussCf(_RunningCov(cfg.ensemble, n_s, q, m + 1), cfg.f, cfg.quad_order)
        observe = lambda col: col
    running.extend(observe(z[:, :, 0]))
    lf_row = None
    built_at = 0
    for v in range(m):
        if v >= 1:
            if lf_row is None or (v % cfg.kernel_stride) == 0 or v == 1:
                cf = FeatureCovariance(q=q, grid=TimeGrid(T=v * dt, m=v),
                                       values=kernels_mod._mirror_lags(running.head_prefix(v + 1), q))
                stack = assemble_K(model, cf, q)
                kf = np.fft.fft(kernels_mod._pad_lags(stack.K, q, n_s), axis=0)
                lsub = tilt_operator(kf, sig, dt)
                # horizon t_v, causal part of row v; the drift sums kernel
                # lags over I_q only, so re-truncate after the tilt
                row_lag = _truncate_lags(np.fft.ifft(lsub[:, v, :v], axis=0).real, q)
                lf_row = np.fft.fft(row_lag, axis=0)
                built_at = v
            # stride > 1 reuses a stale row: increments after the last rebuild get weight 0
            row = np.zeros((n_s, v), dtype=complex)
            take = min(built_at, v)
            row[:, :take] = lf_row[:, :take]
            theta[:, :, v] = _theta_step(row, dzf[:, :, :v], sig)
        step = sig * theta[:, :, v] * dt + sqdt * noise[:, :, v]
        z[:, :, v + 1] = z[:, :, v] + step
        dzf[:, :, v] = np.fft.fft(step, axis=1)
        running.extend(observe(z[:, :, v + 1]))
    trajectories = LatticeTrajectories(paths=z, grid=grid, seed=cfg.seed,
                                       meta={"kind": "march", "cf_mode": cfg.cf_mode})
    cf_full = FeatureCovariance(q=q, grid=grid,
                                values=kernels_mod._mirror_lags(running.head_prefix(m + 1), q))
    stack = assemble_K(model, cf_full, q)
    stack = kernels_mod.K_to_L_causal(stack, sig, n_s)
    # store the kernel exactly as the drift consumed it (lags cut to I_q),
    # so re-marching with the frozen stack reproduces this run
    _truncate_lags(stack.L, q)
    stack.provenance = f"march[{cfg.cf_mode}]" + "+tilt-causal-rows+lags-Iq"
    return LimitLaw(Z=trajectories, kernels=stack, theta_trace=theta, config=cfg)


def march_frozen(stack: KernelStack, sigma: float, ensemble: int, seed: int = 0,
                 noise: np.ndarray | None = None) -> LatticeTrajectories:
    """Time-march the linear dynamics with a fixed kernel stack (L rows frozen)."""
    if stack.L is None or stack.lattice is None:
        raise ValidationError("march_frozen needs a lattice-padded stack with L filled")
    grid = stack.grid
    n_s, m, dt = stack.lattice, grid.m, grid.dt
    if noise is None:
        noise = _draw_noise(seed, "march-frozen-noise", ensemble, n_s, m)
    else:
        noise = _check_noise(noise, ensemble, n_s, m)
    lf = np.fft.fft(stack.L * causal_mask(grid.n_nodes)[None], axis=0)
    z = np.zeros((ensemble, n_s, m + 1))
    dzf = np.zeros((ensemble, n_s, m), dtype=complex)
    sqdt = sigma * np.sqrt(dt)
    for v in range(m):
        if v >= 1:
            theta_v = _theta_step(lf[:, v, :v], dzf[:, :, :v], sigma)
        else:
            theta_v = np.zeros((ensemble, n_s))
        step = sigma * theta_v * dt + sqdt * noise[:, :, v]
        z[:, :, v + 1] = z[:, :, v] + step
        dzf[:, :, v] = np.fft.fft(step, axis=1)
    return LatticeTrajectories(paths=z, grid=grid, seed=seed, meta={"kind": "march-frozen"})


def sample_closed_form(stack: KernelStack, resolvent: ResolventKernel, sigma: float,
                       ensemble: int, seed: int = 0,
                       noise: np.ndarray | None = None) -> LatticeTrajectories:
    """Closed-form solution via the resolvent: Z = sigma W + int Phi + sigma^-1 int (M o Phi).

    Phi^j_{t_u} = sum_i sum_{w<u} L^i(t_u,t_w) dW^{i+j}_w; the outer time sums
    use the left rule, spatial sums are exact lattice correlations.
    """
    if stack.L is None or stack.lattice is None:
        raise ValidationError("sample_closed_form needs a lattice-padded stack with L filled")
    if resolvent.grid != stack.grid or resolvent.lattice != stack.lattice:
        raise GridMismatch("resolvent and kernel stack live on different grids")
    grid = stack.grid
    n_s, m, dt = stack.lattice, grid.m, grid.dt
    if noise is None:
        noise = _draw_noise(seed, "closed-form-noise", ensemble, n_s, m)
    else:
        noise = _check_noise(noise, ensemble, n_s, m)
    mask = causal_mask(grid.n_nodes)[None]
    lf = np.fft.fft(stack.L * mask, axis=0)
    mf = np.fft.fft(resolvent.values * mask, axis=0)
    dw = np.sqrt(dt) * noise  # standard BM increments
    dwf = np.fft.fft(dw, axis=1)  # (E, P, m)
    # Phi at nodes u = 0..m-1 (only those feed the left-rule time sums)
    phif = np.einsum("puw,rpw->rpu", np.conj(lf[:, :m, :m]), dwf)
    psif = np.einsum("puw,rpw->rpu", np.conj(mf[:, :m, :m]), phif)
    wf = np.concatenate([np.zeros((ensemble, n_s, 1), dtype=complex), np.cumsum(dwf, axis=2)], axis=2)
    run_phi = np.concatenate([np.zeros((ensemble, n_s, 1), dtype=complex), np.cumsum(phif, axis=2)], axis=2)
    run_psi = np.concatenate([np.zeros((ensemble, n_s, 1), dtype=complex), np.cumsum(psif, axis=2)], axis=2)
    zf = sigma * wf + dt * run_phi + dt**2 / sigma * run_psi
    z = np.fft.ifft(zf, axis=1).real
    return LatticeTrajectories(paths=z, grid=grid, seed=seed, meta={"kind": "closed-form"})


def march_picard(model: CovarianceModel, cfg: MarchConfig, noise: np.ndarray | None = None,
                 max_iters: int = 50, tol: float = 1e-8) -> LimitLaw:
    """Whole-path Picard iteration over the self-consistency (cross-check mode).

    Start from Z = sigma*W, then alternate: estimate the kernel stack from the
    current ensemble, re-solve the linear dynamics with the same noise. The
    fixed point solves the same self-consistent equations as `march` but with
    whole-path kernels instead of causal step-by-step ones; the two agree in
    law as lattice and ensemble grow. Raises NoConvergence if the sup-norm
    update is still above `tol` after `max_iters` sweeps.
    """
    from .errors import NoConvergence

    grid, n_s, q, sig = cfg.grid, cfg.lattice, cfg.q, cfg.sigma
    gate = weights_validate(model, q, strict=False)
    if not gate.ok:
        raise ValidationError(f"model invalid on the kernel lag range:\n{gate.summary()}")
    if noise is None:
        noise = _draw_noise(cfg.seed, "march-noise", cfg.ensemble, n_s, grid.m)
    else:
        noise = _check_noise(noise, cfg.ensemble, n_s, grid.m)
    z = np.concatenate([np.zeros((cfg.ensemble, n_s, 1)),
                        np.cumsum(sig * np.sqrt(grid.dt) * noise, axis=2)], axis=2)
    stack = None
    for sweep in range(max_iters):
        if cfg.cf_mode == "empirical":
            cf = cf_from_paths(LatticeTrajectories(z, grid), cfg.f, q)
        else:
            cov_z = lattice_covariance(z, q)
            cf = cf_from_gaussian(cov_z, cfg.f, grid, quad_order=cfg.quad_order)
        stack = kernels_mod.K_to_L_causal(assemble_K(model, cf, q), sig, n_s)
        _truncate_lags(stack.L, q)
        z_new = march_frozen(stack, sig, cfg.ensemble, noise=noise).paths
        delta = float(np.max(np.abs(z_new - z)))
        z = z_new
        if delta < tol:
            break
    else:
        raise NoConvergence(f"Picard update {delta:.3e} above tol={tol:.3e} after {max_iters} sweeps")
    stack.provenance = f"picard[{cfg.cf_mode}]" + "+tilt-causal-rows+lags-Iq"
    trajectories = LatticeTrajectories(paths=z, grid=grid, seed=cfg.seed,
                                       meta={"kind": "picard", "cf_mode": cfg.cf_mode,
                                             "sweeps": sweep + 1, "last_update": delta})
    return LimitLaw(Z=trajectories, kernels=stack, theta_trace=np.zeros_like(z), config=cfg,
                    meta={"sweeps": sweep + 1, "last_update": delta})


def single_site_uncorrelated(lambda2: float, grid: TimeGrid, sigma: float, f: Activation,
                             ensemble: int, seed: int = 0, cf_mode: str = "empirical",
                             noise: np.ndarray | None = None) -> LimitLaw:
    """Uncorrelated reduction: delta covariance collapses every lag, one effective site."""
    if lambda2 < 0:
        raise ValidationError("lambda2 must be >= 0")
    cfg = MarchConfig(lattice=1, q=0, grid=grid, sigma=sigma, f=f, ensemble=ensemble,
                      cf_mode=cf_mode, seed=seed)
    return march(delta_model(lambda2), cfg, noise=noise)
