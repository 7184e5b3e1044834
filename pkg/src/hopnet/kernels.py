"""Lag-indexed covariance kernels: feature covariances, tilted operators, resolvents.

Discrete operator convention (fixed once, used identically everywhere):

  * Time integrals use the left-endpoint rectangle rule with weight dt; a
    kernel value matrix A(t_v, t_w) acts as the operator A_op = A * dt.
  * The tilted kernel of a per-frequency covariance matrix Ktil is
        Ltil = sigma^2 (Id - (Id + sigma^-2 * Ktil * dt)^-1) / dt
             = Ktil (Id + sigma^-2 * dt * Ktil)^-1,
    i.e. kernel values again (divide the operator identity by dt).
  * All Volterra sums (the drift of the limit dynamics, kernel compositions,
    the resolvent series) consume kernels through their causal part: values
    L(t_v, t_w) enter only for w < v, each with weight dt. Composition is
        (A o B)(t_v, t_w) = sum_u dt * A(t_v, t_u) B(t_u, t_w)
    on causally masked kernels, so u ranges effectively over w < u < v. This
    is the unique convention under which time-marching, the closed-form
    resolvent solution, and a dense triangular solve agree to round-off.
  * Horizon: the tilted kernel value at (t_v, t_w) in the limit dynamics has
    tilt horizon t_v (the first argument). `K_to_L` builds the fixed-horizon
    operator on the whole grid (the object the operator identities refer to);
    `K_to_L_causal` assembles row v from the horizon-t_v operator, which is
    what the marching scheme and the limit equations consume.

Spatial structure: kernel stacks are lag-indexed in FFT order, periodic on a
lattice of `lattice` sites once padded; spatial convolutions are exact via the
lattice DFT (per-frequency matrix products in time).
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .activation import Activation
from .errors import (LagTooLarge, NoConvergence, NotPSD2x2, SingularOperator,
                     SingularSigma, ValidationError)
from .lattice import LatticeTrajectories, TimeGrid, lag_values
from .weights import CovarianceModel


@dataclass
class FeatureCovariance:
    """C_f^l(t_v, t_w) = E[f(path^0_{t_v}) f(path^l_{t_w})], lag axis FFT order over I_q."""

    q: int
    grid: TimeGrid
    values: np.ndarray  # (2q+1, m+1, m+1)

    def __post_init__(self):
        expect = (2 * self.q + 1, self.grid.n_nodes, self.grid.n_nodes)
        if self.values.shape != expect:
            raise ValidationError(f"feature covariance shape {self.values.shape} != {expect}")


@dataclass
class KernelStack:
    """K and (optionally) L kernels over lags, same time grid.

    Before `K_to_L*` the lag axis covers I_q (2q+1 entries); afterwards it is
    zero-padded onto the periodic lattice (`lattice` sites) on which all
    spatial convolutions run.
    """

    q: int
    grid: TimeGrid
    K: np.ndarray
    L: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    lattice: Optional[int] = None
    provenance: str = "unset"
    meta: dict = field(default_factory=dict)


@dataclass
class ResolventKernel:
    """Volterra resolvent M = sum_p sigma^(1-p) L_p, causal (strictly sub-diagonal in time)."""

    lattice: int
    grid: TimeGrid
    values: np.ndarray  # (lattice, m+1, m+1)
    p_used: int
    tail_bound: float
    sigma: float
    tol: float


def _mirror_lags(head: np.ndarray, q: int) -> np.ndarray:
    """Assemble the full FFT-order lag axis from lags 0..q, enforcing C^-l(v,w) = C^l(w,v) exactly.

    The lag-0 slice is symmetrized (it is symmetric up to float reassociation
    already), so the stored stack satisfies the symmetry bit-exactly.
    """
    full = np.empty((2 * q + 1, *head.shape[1:]))
    full[0] = 0.5 * (head[0] + head[0].swapaxes(-2, -1))
    full[1: q + 1] = head[1:]
    for l in range(1, q + 1):
        full[-l] = head[l].swapaxes(-2, -1)
    return full


def cf_from_paths(paths: LatticeTrajectories, f: Activation, q: int) -> FeatureCovariance:
    """Empirical feature covariance (1/N) sum_j f(X^j_{t_v}) f(X^{j+l}_{t_w}), ensemble-averaged."""
    n_sites = paths.sites
    if 2 * q + 1 > n_sites:
        raise LagTooLarge(f"q={q} does not fit on a lattice of {n_sites} sites")
    fv = f(paths.paths)  # (R, N, M)
    denom = paths.replicas * n_sites
    head = np.empty((q + 1, paths.grid.n_nodes, paths.grid.n_nodes))
    for l in range(q + 1):
        rolled = np.roll(fv, -l, axis=1)  # rolled[r, j] = fv[r, (j+l) mod N]
        head[l] = np.einsum("rjv,rjw->vw", fv, rolled) / denom
    return FeatureCovariance(q=q, grid=paths.grid, values=_mirror_lags(head, q))


def bivariate_gaussian_expectation(f: Activation, c00, c01, c11, quad_order: int = 40) -> np.ndarray:
    """E[f(X) f(Y)] for centered bivariate Gaussians, tensorized Gauss-Hermite after whitening.

    Broadcasts over array-valued (c00, c01, c11); degenerate variances
    collapse to point masses at 0.
    """
    c00, c01, c11 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (c00, c01, c11)))
    if np.any(c00 < -1e-12) or np.any(c11 < -1e-12):
        raise NotPSD2x2("negative variance in 2x2 covariance block")
    lim = np.sqrt(np.clip(c00, 0, None) * np.clip(c11, 0, None))
    if np.any(np.abs(c01) > lim + 1e-12):
        raise NotPSD2x2("off-diagonal exceeds sqrt(c00*c11) in 2x2 covariance block")
    h, wh = np.polynomial.hermite.hermgauss(quad_order)
    x = np.sqrt(2.0) * h
    w = wh / np.sqrt(np.pi)
    s0 = np.sqrt(np.clip(c00, 0, None))
    s1 = np.sqrt(np.clip(c11, 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(lim > 0, c01 / np.where(lim > 0, lim, 1.0), 0.0)
    rho = np.clip(rho, -1.0, 1.0)
    root = np.sqrt(np.clip(1.0 - rho**2, 0.0, None))
    flat = [a.ravel() for a in (s0, s1, rho, root)]
    out = np.empty(flat[0].shape)
    chunk = 4096
    for a0 in range(0, out.size, chunk):
        a1 = min(a0 + chunk, out.size)
        s0c, s1c, rhoc, rootc = (a[a0:a1, None] for a in flat)
        fx = f(s0c * x[None, :])  # (c, Q)
        y = s1c[..., None] * (rhoc[..., None] * x[None, :, None] + rootc[..., None] * x[None, None, :])
        fy = f(y) @ w  # (c, Q): inner expectation over the second node
        out[a0:a1] = np.einsum("cq,cq,q->c", fx, fy, w)
    return out.reshape(c00.shape)


def cf_from_gaussian(cov_z: np.ndarray, f: Activation, grid: TimeGrid,
                     quad_order: int = 40) -> FeatureCovariance:
    """Feature covariance of a centered Gaussian law given its path covariance.

    cov_z[l, v, w] = E[Z^0_{t_v} Z^l_{t_w}], lag axis FFT order over I_q. Each
    (l, v, w) defines a 2x2 block ((cov_z[0,v,v], cov_z[l,v,w]), (., cov_z[0,w,w]))
    whose E[f f] is evaluated by Gauss-Hermite quadrature.
    """
    cov_z = np.asarray(cov_z, dtype=float)
    q = (cov_z.shape[0] - 1) // 2
    var = np.diagonal(cov_z[0])
    head = bivariate_gaussian_expectation(
        f, var[None, :, None], cov_z[: q + 1], var[None, None, :], quad_order=quad_order
    )
    return FeatureCovariance(q=q, grid=grid, values=_mirror_lags(head, q))


def assemble_K(model: CovarianceModel, cf: FeatureCovariance, q: int) -> KernelStack:
    """K^k(t_v,t_w) = sum_{l in I_q} R(k,l) C_f^l(t_v,t_w), lags k in I_q (FFT order)."""
    if q > cf.q:
        raise LagTooLarge(f"assembly lag q={q} exceeds feature covariance lags {cf.q}")
    lv = lag_values(2 * cf.q + 1)
    kk, ll = np.meshgrid(lag_values(2 * q + 1), lv, indexing="ij")
    rmat = np.asarray(model.rj(kk, ll), dtype=float)
    head = np.einsum("kl,lvw->kvw", rmat[: q + 1], cf.values)
    return KernelStack(q=q, grid=cf.grid, K=_mirror_lags(head, q), provenance=f"assembled[{model.name}]")


def _pad_lags(arr: np.ndarray, q: int, lattice: int) -> np.ndarray:
    if 2 * q + 1 > lattice:
        raise LagTooLarge(f"lag range I_{q} does not fit on a lattice of {lattice} sites")
    out = np.zeros((lattice, *arr.shape[1:]))
    out[: q + 1] = arr[: q + 1]
    if q:
        out[-q:] = arr[-q:]
    return out


def tilt_operator(k_freq: np.ndarray, sigma: float, dt: float) -> np.ndarray:
    """Per-frequency tilted kernel values: solve (Id + sigma^-2 dt Ktil) Ltil = Ktil.

    Accepts a single (M, M) matrix or a batch (..., M, M); the three algebraic
    forms of this operator coincide because the factors commute.
    """
    k_freq = np.asarray(k_freq)
    m = k_freq.shape[-1]
    eye = np.eye(m, dtype=k_freq.dtype)
    try:
        return np.linalg.solve(eye + (dt / sigma**2) * k_freq, k_freq)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - PSD input cannot trigger this
        raise SingularOperator(f"tilt inversion failed: {exc}") from exc


def _to_frequency(stack: KernelStack, lattice: int):
    kpad = _pad_lags(stack.K, stack.q, lattice)
    return kpad, np.fft.fft(kpad, axis=0)


def _real_lag(arr_freq: np.ndarray, what: str, tol: float = 1e-9) -> np.ndarray:
    lag = np.fft.ifft(arr_freq, axis=0)
    scale = max(1.0, float(np.max(np.abs(lag.real))))
    if np.max(np.abs(lag.imag)) > tol * scale:
        raise ValidationError(f"{what}: imaginary residue exceeds tolerance")
    return lag.real


def K_to_L(stack: KernelStack, sigma: float, lattice_size: int) -> KernelStack:
    """Fixed-horizon tilt on the periodic lattice: per-frequency inversion on the full grid."""
    kpad, kf = _to_frequency(stack, lattice_size)
    lf = tilt_operator(kf, sigma, stack.grid.dt)
    l_lag = _real_lag(lf, "K_to_L")
    return replace(stack, K=kpad, L=l_lag, sigma=sigma, lattice=lattice_size,
                   provenance=stack.provenance + "+tilt-fixed-horizon")


def K_to_L_causal(stack: KernelStack, sigma: float, lattice_size: int) -> KernelStack:
    """Causal tilt: row v of L comes from the horizon-t_v operator on times 0..v.

    Rows are what the marching scheme and the limit equations consume; entries
    above the diagonal are zero.
    """
    kpad, kf = _to_frequency(stack, lattice_size)
    lf = np.zeros_like(kf)
    dt = stack.grid.dt
    for v in range(kf.shape[-1]):
        sub = tilt_operator(kf[:, : v + 1, : v + 1], sigma, dt)
        lf[:, v, : v + 1] = sub[:, v, :]
    l_lag = _real_lag(lf, "K_to_L_causal")
    return replace(stack, K=kpad, L=l_lag, sigma=sigma, lattice=lattice_size,
                   provenance=stack.provenance + "+tilt-causal-rows")


def gaussian_tilt_moment(sigma_mat: np.ndarray, a_mat: np.ndarray) -> np.ndarray:
    """Second moment (Sigma^-1 + A)^-1 of N(0, Sigma) reweighted by exp(-x'Ax/2).

    Computed as (Id + Sigma A)^-1 Sigma via a solve; Sigma must be symmetric
    positive definite, A symmetric positive semidefinite.
    """
    s = np.asarray(sigma_mat, dtype=float)
    a = np.asarray(a_mat, dtype=float)
    if s.shape != a.shape or s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"need matching square matrices, got {s.shape} and {a.shape}")
    for mat, name in ((s, "Sigma"), (a, "A")):
        if np.max(np.abs(mat - mat.T)) > 1e-8 * max(1.0, np.max(np.abs(mat))):
            raise ValidationError(f"{name} is not symmetric")
    s_eigs = np.linalg.eigvalsh(s)
    if s_eigs[0] <= 1e-12 * max(s_eigs[-1], 0.0):
        raise SingularSigma(f"Sigma nearly singular: eigenvalues in [{s_eigs[0]:.3e}, {s_eigs[-1]:.3e}]")
    a_eigs = np.linalg.eigvalsh(a)
    if a_eigs[0] < -1e-10 * max(1.0, a_eigs[-1]):
        raise ValidationError("A is not positive semidefinite")
    out = np.linalg.solve(np.eye(s.shape[0]) + s @ a, s)
    return 0.5 * (out + out.T)


def causal_mask(n_nodes: int) -> np.ndarray:
    return np.tril(np.ones((n_nodes, n_nodes)), k=-1)


def _series_tail(z: float, k0: int) -> float:
    """sum_{k >= k0} z^k / sqrt(k!), evaluated in log space (inf on overflow)."""
    if z <= 0.0:
        return 0.0
    log_term = k0 * math.log(z) - 0.5 * math.lgamma(k0 + 1)
    total = 0.0
    k = k0
    while True:
        if log_term > 700.0:
            return math.inf
        term = math.exp(log_term)
        total += term
        k += 1
        log_term += math.log(z) - 0.5 * math.log(k)
        # terms grow until k ~ z^2, then decay superexponentially
        if term < 1e-18 * max(total, 1e-300) and k > z * z:
            return total


def resolvent_tail_envelope(stack: KernelStack, sigma: float) -> tuple[float, float]:
    """(z, amplitude) of the factorial envelope: tail after order p is
    amplitude * sum_{k >= p-1} z^k / sqrt(k!)."""
    dt = stack.grid.dt
    mask = causal_mask(stack.grid.n_nodes)
    sl = np.sum(np.abs(stack.L * mask[None]), axis=0)  # sum over lags of |L^l(t_v,t_u)|
    a2 = dt * np.sum(sl**2, axis=1)  # A(t_v)^2
    b2 = dt * np.sum(sl**2, axis=0)  # B(t_u)^2
    c = float(np.sqrt(dt * np.sum(a2)))
    amp = float(np.sqrt(np.max(a2)) * np.sqrt(np.max(b2)) / sigma)
    return c / sigma, amp


def iterated_kernels(stack: KernelStack, sigma: float, tol: float,
                     max_order: int = 200) -> ResolventKernel:
    """Resolvent M = sum_{p>=1} sigma^(1-p) L_p by iterated kernels.

    L_1 = L (causally masked), L_{p+1} = L o L_p with the documented space-time
    composition (lattice convolution via DFT, time product with weight dt).
    The series stops once the factorial tail envelope computed from L falls
    below `tol` (or the iterates vanish exactly, which happens at order m+1
    since causal kernels are nilpotent on a finite grid).
    """
    if stack.L is None or stack.lattice is None:
        raise ValidationError("iterated_kernels needs a lattice-padded stack with L filled")
    if tol <= 0:
        raise ValidationError("tol must be > 0")
    dt = stack.grid.dt
    mask = causal_mask(stack.grid.n_nodes)[None]
    lf = np.fft.fft(stack.L * mask, axis=0)
    z, amp = resolvent_tail_envelope(stack, sigma)
    m_f = lf.copy()
    term = lf.copy()
    p_used = 1
    tail = amp * _series_tail(z, 0)
    while tail >= tol:
        if p_used >= max_order:
            raise NoConvergence(
                f"resolvent tail {tail:.3e} still above tol={tol:.3e} at order cap {max_order}")
        term = dt * np.matmul(lf, term)
        p_used += 1
        m_f += sigma ** (1 - p_used) * term
        if not np.any(term):
            tail = 0.0
            break
        tail = amp * _series_tail(z, p_used - 1)
    values = _real_lag(m_f, "iterated_kernels")
    return ResolventKernel(lattice=stack.lattice, grid=stack.grid, values=values,
                           p_used=p_used, tail_bound=float(tail), sigma=sigma, tol=tol)


@dataclass
class StackCheck:
    ok: bool
    sym_err: float
    min_freq_eig: float
    identity_residual: Optional[float]
    norm_bound: Optional[tuple[float, float]]  # (max per-frequency operator norm, a*b*T)

    def summary(self) -> str:
        lines = [f"kernel stack check: {'ok' if self.ok else 'NOT ok'}",
                 f"  K lag symmetry max error   {self.sym_err:.3e}",
                 f"  min per-frequency eigenvalue {self.min_freq_eig:.3e}"]
        if self.identity_residual is not None:
            lines.append(f"  tilt identity residual     {self.identity_residual:.3e}")
        if self.norm_bound is not None:
            lines.append(f"  max operator norm {self.norm_bound[0]:.3e} vs bound a*b*T = {self.norm_bound[1]:.3e}")
        return "\n".join(lines)


def check_stack(stack: KernelStack, model: CovarianceModel | None = None) -> StackCheck:
    """Structural health checks: lag symmetry, per-frequency PSD, tilt identity, norm bound."""
    k = stack.K
    size = k.shape[0]
    flip = (-np.arange(size)) % size
    sym_err = float(np.max(np.abs(k - k[flip].swapaxes(-2, -1))))
    kf = np.fft.fft(k, axis=0) * stack.grid.dt
    herm = 0.5 * (kf + np.conj(kf.swapaxes(-2, -1)))
    eigs = np.linalg.eigvalsh(herm)
    norms = np.max(np.abs(eigs), axis=-1)
    floor = -1e-9 * max(float(np.max(norms)), 1e-300)
    min_eig = float(np.min(eigs))
    resid = None
    if stack.L is not None and stack.sigma is not None:
        lf = np.fft.fft(stack.L, axis=0)
        ref = tilt_operator(np.fft.fft(k, axis=0), stack.sigma, stack.grid.dt)
        if "causal" in stack.provenance:
            # only the assembled rows satisfy the fixed-horizon identity rowwise
            resid = None
        else:
            resid = float(np.max(np.abs(lf - ref)))
    bound = None
    if model is not None:
        bound = (float(np.max(norms)), model.a_sum * model.b_sum * stack.grid.T)
    ok = (sym_err <= 1e-10 and min_eig >= floor
          and (resid is None or resid <= 1e-10)
          and (bound is None or bound[0] <= bound[1] * (1 + 1e-9)))
    return StackCheck(ok=ok, sym_err=sym_err, min_freq_eig=min_eig,
                      identity_residual=resid, norm_bound=bound)
