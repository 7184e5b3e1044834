"""Periodic lattice and time-grid primitives shared by all modules.

Lattice convention: the site set I_n = {-n, ..., n} has N = 2n+1 points. All
lag-indexed arrays use FFT order along the lag axis: index a in 0..N-1 holds
lag a for a <= n and lag a-N for a > n (the order np.fft produces). Site axes
use plain 0..N-1 labels; only differences modulo N ever matter.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def lag_values(size: int) -> np.ndarray:
    """Signed lags [0, 1, ..., n, -n, ..., -1] for an odd lattice of `size` points."""
    half = size // 2
    a = np.arange(size)
    return np.where(a <= half, a, a - size)


def wrap_lag(k, size: int):
    """Reduce integer lags into I_n = [-(size//2), size//2] (size odd)."""
    half = size // 2
    return (np.asarray(k) + half) % size - half


def check_odd_size(size: int, what: str = "lattice") -> int:
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"{what} size must be odd and >= 1, got {size}")
    return size


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_v = v*T/m, v = 0..m."""

    T: float
    m: int

    def __post_init__(self):
        if not (self.T > 0 and self.m >= 1):
            raise ValidationError(f"need T > 0 and m >= 1, got T={self.T}, m={self.m}")

    @property
    def dt(self) -> float:
        return self.T / self.m

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.m + 1)

    @property
    def n_nodes(self) -> int:
        return self.m + 1

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.T == other.T and self.m == other.m


@dataclass
class LatticeTrajectories:
    """Ensemble of lattice paths, shape (replicas, sites, m+1)."""

    paths: np.ndarray
    grid: TimeGrid
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim != 3:
            raise ValidationError(f"paths must be 3-d (replicas, sites, times), got shape {self.paths.shape}")
        if self.paths.shape[2] != self.grid.n_nodes:
            raise ValidationError(
                f"time axis {self.paths.shape[2]} does not match grid with {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(self.paths)):
            raise ValidationError("non-finite values in trajectories")

    @property
    def replicas(self) -> int:
        return self.paths.shape[0]

    @property
    def sites(self) -> int:
        return self.paths.shape[1]
