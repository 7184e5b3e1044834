"""Euler-Maruyama integration of the quenched finite-N lattice system.

dV^i = (sum_j J[i,j] f(V^j) - alpha V^i) dt + sigma dB^i, integrated on the
shared uniform grid with fixed step dt = T/m:

    V_{v+1} = V_v + drift(V_v) dt + sigma sqrt(dt) xi_v.

Replicas are independent noise streams over the same couplings; each replica
draws from its own counter-derived stream so results do not depend on how the
replica loop is scheduled or batched.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import activation as act_mod
from . import seeding
from .activation import Activation
from .errors import DimensionMismatch, ValidationError
from .lattice import LatticeTrajectories, TimeGrid
from .weights import WeightMatrix


@dataclass(frozen=True)
class SdeConfig:
    sigma: float
    f: Activation
    grid: TimeGrid
    alpha: float = 0.0
    init: float | Callable = 0.0  # constant, or callable(rng, n_sites) -> initial vector

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        act_mod.verify(self.f)


def drift(J: WeightMatrix | np.ndarray, f: Activation, state: np.ndarray, alpha: float = 0.0) -> np.ndarray:
    """J . f(state) - alpha * state. Accepts a single state vector or a batch (..., N)."""
    mat = J.entries if isinstance(J, WeightMatrix) else np.asarray(J)
    state = np.asarray(state, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"J must be square, got {mat.shape}")
    if state.shape[-1] != mat.shape[1]:
        raise DimensionMismatch(f"state has {state.shape[-1]} sites, J expects {mat.shape[1]}")
    return f(state) @ mat.T - alpha * state


def _initial_state(cfg: SdeConfig, rng, replicas: int, n_sites: int) -> np.ndarray:
    if callable(cfg.init):
        v0 = np.stack([np.asarray(cfg.init(rng, n_sites), dtype=float) for _ in range(replicas)])
        if v0.shape != (replicas, n_sites):
            raise ValidationError(f"init sampler returned shape {v0.shape[1:]}, expected ({n_sites},)")
        return v0
    return np.full((replicas, n_sites), float(cfg.init))


def simulate_quenched(J: WeightMatrix, cfg: SdeConfig, seed: int, replicas: int = 1,
                      noise: np.ndarray | None = None, debug: bool = False) -> LatticeTrajectories:
    """Integrate the quenched system for `replicas` independent noise draws.

    `noise`, when given, must be (replicas, N, m) standard-normal increments
    and replaces the seeded streams (test hook, bit-reproducible).
    """
    n_sites = J.entries.shape[0]
    grid = cfg.grid
    dt = grid.dt
    sq = cfg.sigma * np.sqrt(dt)
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (replicas, n_sites, grid.m):
            raise DimensionMismatch(f"noise shape {noise.shape} != {(replicas, n_sites, grid.m)}")
    else:
        noise = np.empty((replicas, n_sites, grid.m))
        for r in range(replicas):
            noise[r] = seeding.stream(seed, "quenched-noise", r).standard_normal((n_sites, grid.m))
    init_rng = seeding.stream(seed, "quenched-init", 0)
    paths = np.empty((replicas, n_sites, grid.m + 1))
    paths[:, :, 0] = _initial_state(cfg, init_rng, replicas, n_sites)
    bound = np.max(np.sum(np.abs(J.entries), axis=1)) if debug else None
    for v in range(grid.m):
        state = paths[:, :, v]
        dr = drift(J, cfg.f, state, cfg.alpha)
        if debug:
            coupling = dr + cfg.alpha * state
            assert np.max(np.abs(coupling)) <= bound + 1e-12, "coupling drift exceeds row-sum bound"
        paths[:, :, v + 1] = state + dr * dt + sq * noise[:, :, v]
    return LatticeTrajectories(paths=paths, grid=grid, seed=seed, meta={"kind": "quenched", "alpha": cfg.alpha})
