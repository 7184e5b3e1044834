"""Admissible weight-covariance models and circulant spectral sampling.

A model is a stationary covariance R(k,l) on integer lags together with an
envelope |R(k,l)| <= a_k * b_l, a_k summable with at-least-cubic decay and b_l
summable. On the size-N torus (N = 2n+1) the coupling field J with
Cov(J[i,j], J[i',j']) = (1/N) R(i'-i mod N, j'-j mod N) is bi-circulant, so it
is sampled exactly in the frequency domain.

Spectral conventions (fixed, bit-exact):
  * lambda[p,q] = sum_{k,l in I_n} R(k,l) exp(-2*pi*1j*(p*k+q*l)/N), computed
    as np.fft.fft2 of the lag grid in FFT order; real because R is even.
  * a Hermitian unit-variance noise array H is built from one N x N complex
    standard-normal draw E as H = (E + conj(E[-p,-q])) / 2; self-conjugate
    frequencies (only (0,0) for odd N) come out real with unit variance,
    conjugate pairs carry variance 1/2 per real component.
  * the field is J = real(np.fft.ifft2(sqrt(N * lambda) * H)), which has
    covariance (1/N) R exactly in distribution.

Truncated couplings live on the Q x N torus (Q = 2q+1): the first lag is
reduced mod I_q and the second lag is cut to I_q by an indicator; the same
spectral method applies with base covariance on that torus.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import seeding
from .errors import BadTruncation, EnvelopeViolation, SpectrumNotPositive, ValidationError
from .lattice import check_odd_size, lag_values, wrap_lag

# Spectral eigenvalues in [-NEG_TOL, 0] relative to the max are treated as 0;
# anything below is a genuinely indefinite spectrum.
NEG_TOL = 1e-12


@dataclass(frozen=True)
class CovarianceModel:
    """Stationary lag covariance R(k,l) with summability envelope (a_k, b_l).

    `rj`, `a_env`, `b_env` are vectorized callables on integer lag arrays;
    evenness R(k,l) = R(-k,-l) is enforced at construction by symmetrization.
    """

    rj: Callable[[np.ndarray, np.ndarray], np.ndarray]
    a_env: Callable[[np.ndarray], np.ndarray]
    b_env: Callable[[np.ndarray], np.ndarray]
    a_sum: float
    b_sum: float
    name: str = "custom"
    params: dict = field(default_factory=dict)


def covariance_model(rj, a_env, b_env, a_sum, b_sum, name="custom", params=None) -> CovarianceModel:
    """Wrap a user kernel, symmetrizing it so R(k,l) = R(-k,-l) holds exactly."""

    def even_rj(k, l):
        k = np.asarray(k)
        l = np.asarray(l)
        return 0.5 * (np.asarray(rj(k, l), dtype=float) + np.asarray(rj(-k, -l), dtype=float))

    return CovarianceModel(even_rj, a_env, b_env, float(a_sum), float(b_sum), name, dict(params or {}))


def product_model(c: float = 1.0) -> CovarianceModel:
    """Default shipped family R(k,l) = c * (1+|k|)^-4 * 2^-|l| (separable, positive spectrum)."""
    if c < 0:
        raise ValidationError("coupling strength c must be >= 0")
    k_sum = 1.0 + 2.0 * np.sum((1.0 + np.arange(1, 100001.0)) ** -4)
    return covariance_model(
        rj=lambda k, l: c * (1.0 + np.abs(k)) ** -4.0 * 2.0 ** (-np.abs(l)),
        a_env=lambda k: c * (1.0 + np.abs(k)) ** -4.0,
        b_env=lambda l: 2.0 ** (-np.abs(np.asarray(l, dtype=float))),
        a_sum=c * k_sum,
        b_sum=3.0,
        name="product",
        params={"c": c},
    )


def delta_model(lambda2: float = 1.0) -> CovarianceModel:
    """Uncorrelated couplings: R(k,l) = lambda2 * delta_k * delta_l."""
    if lambda2 < 0:
        raise ValidationError("lambda2 must be >= 0")
    return covariance_model(
        rj=lambda k, l: lambda2 * ((np.asarray(k) == 0) & (np.asarray(l) == 0)).astype(float),
        a_env=lambda k: lambda2 * 4.0 ** (-np.abs(np.asarray(k, dtype=float))),
        b_env=lambda l: 4.0 ** (-np.abs(np.asarray(l, dtype=float))),
        a_sum=lambda2 * 5.0 / 3.0,
        b_sum=5.0 / 3.0,
        name="delta",
        params={"lambda2": lambda2},
    )


def zero_model() -> CovarianceModel:
    return covariance_model(
        rj=lambda k, l: np.zeros(np.broadcast(k, l).shape),
        a_env=lambda k: np.zeros(np.shape(k)),
        b_env=lambda l: np.zeros(np.shape(l)),
        a_sum=0.0,
        b_sum=0.0,
        name="zero",
    )


_FAMILIES = {"product": product_model, "delta": delta_model, "zero": zero_model}


def model_by_family(family: str, **params) -> CovarianceModel:
    if family not in _FAMILIES:
        raise ValidationError(f"unknown covariance family {family!r}; known: {sorted(_FAMILIES)}")
    return _FAMILIES[family](**params)


def _lag_grids(model: CovarianceModel, size: int):
    """R and its envelope bound on the size x size lag torus, FFT order."""
    lv = lag_values(size)
    kk, ll = np.meshgrid(lv, lv, indexing="ij")
    r = np.asarray(model.rj(kk, ll), dtype=float)
    bound = np.asarray(model.a_env(np.abs(kk)), dtype=float) * np.asarray(model.b_env(np.abs(ll)), dtype=float)
    return lv, r, bound


def _envelope_violations(lv, r, bound):
    bad = np.abs(r) > bound * (1.0 + 1e-9) + 1e-15
    return [(int(lv[i]), int(lv[j]), float(abs(r[i, j])), float(bound[i, j])) for i, j in zip(*np.nonzero(bad))]


def spectral_density(model: CovarianceModel, n: int) -> np.ndarray:
    """2-D DFT of R restricted to I_n x I_n, an N x N real grid in FFT frequency order.

    Raises EnvelopeViolation when |R| exceeds a_k * b_l at some grid lag.
    """
    size = 2 * n + 1
    lv, r, bound = _lag_grids(model, size)
    bad = _envelope_violations(lv, r, bound)
    if bad:
        k, l, v, b = bad[0]
        raise EnvelopeViolation(f"|R({k},{l})| = {v:g} exceeds envelope {b:g} ({len(bad)} lags total)")
    lam = np.fft.fft2(r)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if np.max(np.abs(lam.imag)) > 1e-10 * scale:
        raise ValidationError("spectral grid is not real: covariance is not even in (k,l)")
    return lam.real


@dataclass
class ValidationReport:
    ok: bool
    n: int
    envelope_violations: list
    nonpositive_freqs: list
    spectrum_min: float
    spectrum_max: float
    strict: bool

    def summary(self) -> str:
        lines = [f"model check at n={self.n}: {'ok' if self.ok else 'NOT ok'}"]
        if self.envelope_violations:
            lines.append(f"  envelope violations at {len(self.envelope_violations)} lags, first: "
                         f"(k,l,|R|,bound)={self.envelope_violations[0]}")
        if self.nonpositive_freqs:
            lines.append(f"  nonpositive spectrum at {len(self.nonpositive_freqs)} frequencies, first: "
                         f"(p,q,lambda)={self.nonpositive_freqs[0]}")
        lines.append(f"  spectrum range [{self.spectrum_min:.6g}, {self.spectrum_max:.6g}]")
        return "\n".join(lines)


def validate(model: CovarianceModel, n: int, strict: bool = True) -> ValidationReport:
    """Report-valued admissibility gate: envelope bounds plus spectral positivity.

    With strict=True (the admissibility criterion) any lambda <= NEG_TOL * max
    is flagged; with strict=False only genuinely negative mass is flagged,
    which admits degenerate models such as R = 0.
    """
    size = 2 * n + 1
    lv, r, bound = _lag_grids(model, size)
    env_bad = _envelope_violations(lv, r, bound)
    lam = np.fft.fft2(r).real
    lam_max = float(np.max(lam, initial=0.0))
    thresh = NEG_TOL * max(lam_max, 0.0) if strict else -NEG_TOL * max(lam_max, 1e-300)
    mask = lam <= thresh if strict else lam < thresh
    spec_bad = [(int(lv[p]), int(lv[q]), float(lam[p, q])) for p, q in zip(*np.nonzero(mask))]
    return ValidationReport(
        ok=not env_bad and not spec_bad,
        n=n,
        envelope_violations=env_bad,
        nonpositive_freqs=spec_bad,
        spectrum_min=float(np.min(lam)),
        spectrum_max=lam_max,
        strict=strict,
    )


@dataclass
class WeightMatrix:
    n: int
    entries: np.ndarray  # (N, N), site axes
    seed: int

    @property
    def size(self) -> int:
        return 2 * self.n + 1


@dataclass
class TruncatedWeightMatrix:
    n: int
    q: int
    entries: np.ndarray  # (Q, N)
    seed: int


def _hermitian_noise(rng: np.random.Generator, count: int, field_shape) -> np.ndarray:
    """(count, *field_shape) complex array, Hermitian-symmetric in the field axes."""
    e = rng.standard_normal((count, *field_shape)) + 1j * rng.standard_normal((count, *field_shape))
    idx = np.ix_(np.arange(count), *[(-np.arange(s)) % s for s in field_shape])
    return 0.5 * (e + np.conj(e[idx]))


def _field_ensemble(sqrt_spec: np.ndarray, seed: int, stage: str, count: int,
                    block: int = 64, start: int = 0) -> np.ndarray:
    """Blockwise spectral synthesis of draws [start, start+count).

    Block b always draws its full noise block from stream (stage, b), so draw
    i is the same array for any requested count or start offset."""
    out = np.empty((count, *sqrt_spec.shape))
    pos = start
    while pos < start + count:
        b = pos // block
        rng = seeding.stream(seed, stage, b)
        h = _hermitian_noise(rng, block, sqrt_spec.shape)
        lo = pos - b * block
        hi = min(block, start + count - b * block)
        synth = np.fft.ifft2(sqrt_spec[None, :, :] * h[lo:hi], axes=(-2, -1))
        if np.max(np.abs(synth.imag)) > 1e-8 * max(1.0, float(np.max(np.abs(synth.real)))):
            raise SpectrumNotPositive("imaginary residue in synthesized field; spectrum not even/real")
        out[pos - start: pos - start + hi - lo] = synth.real
        pos += hi - lo
    return out


def _sqrt_clipped(spec: np.ndarray, what: str) -> np.ndarray:
    smax = float(np.max(spec, initial=0.0))
    floor = -NEG_TOL * max(smax, 1e-300)
    if np.min(spec, initial=0.0) < floor:
        raise SpectrumNotPositive(f"{what}: spectral grid has negative mass (min {np.min(spec):.3e})")
    return np.sqrt(np.clip(spec, 0.0, None))


def sample_weights(model: CovarianceModel, n: int, seed: int) -> WeightMatrix:
    """Draw one coupling matrix with Cov(J[i,j], J[k,l]) = (1/N) R(k-i, l-j) on the torus."""
    return WeightMatrix(n=n, entries=sample_weight_ensemble(model, n, seed, 1)[0], seed=seed)


def sample_weight_ensemble(model: CovarianceModel, n: int, seed: int, count: int,
                           block: int = 64, start: int = 0) -> np.ndarray:
    """Vectorized i.i.d. draws with indices [start, start+count), shape (count, N, N).

    Draw i consumes block stream ("weights", i // block), and draws are
    index-stable: ensemble(count)[i] does not depend on count or start, so
    blocks can be produced in parallel (or streamed) with a deterministic
    result.
    """
    size = check_odd_size(2 * n + 1, "weight lattice")
    lam = spectral_density(model, n)
    sqrt_spec = _sqrt_clipped(size * lam, "weights")
    out = _field_ensemble(sqrt_spec, seed, "weights", count, block, start)
    if not np.all(np.isfinite(out)):
        raise SpectrumNotPositive("non-finite weight draw")
    return out


def truncated_base_covariance(model: CovarianceModel, n: int, q: int) -> np.ndarray:
    """Base covariance on the Q x N torus: first lag mod I_q, second lag cut to I_q."""
    size_n = 2 * n + 1
    size_q = 2 * q + 1
    a = wrap_lag(lag_values(size_q), size_q)
    b = lag_values(size_n)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    cut = (np.abs(bb) <= q).astype(float)
    return np.asarray(model.rj(aa, bb), dtype=float) * cut / size_n


def sample_truncated_weights(model: CovarianceModel, n: int, q: int, seed: int) -> TruncatedWeightMatrix:
    """Draw the spatially truncated couplings (Q x N), covariance reduced mod I_q with indicator cutoff."""
    if not 0 < q < n:
        raise BadTruncation(f"need 0 < q < n, got q={q}, n={n}")
    base = truncated_base_covariance(model, n, q)
    spec = np.fft.fft2(base)
    scale = max(1.0, float(np.max(np.abs(spec))))
    if np.max(np.abs(spec.imag)) > 1e-10 * scale:
        raise ValidationError("truncated spectral grid is not real: covariance is not even")
    sqrt_spec = _sqrt_clipped(base.size * spec.real, "truncated weights")
    entries = _field_ensemble(sqrt_spec, seed, "weights-truncated", 1)[0]
    return TruncatedWeightMatrix(n=n, q=q, entries=entries, seed=seed)
