import numpy as np
import pytest

from hopnet.activation import logistic4
from hopnet.lattice import TimeGrid


@pytest.fixture(scope="session")
def f_default():
    return logistic4()


@pytest.fixture
def small_grid():
    return TimeGrid(T=1.0, m=6)


def loop_cf(paths, f, q):
    """Naive triple-loop feature covariance, independent of the engine's einsum path."""
    reps, n, mm = paths.shape
    size = 2 * q + 1
    out = np.zeros((size, mm, mm))
    for a in range(size):
        lag = a if a <= q else a - size
        acc = np.zeros((mm, mm))
        for r in range(reps):
            for j in range(n):
                fu = f(paths[r, j])
                fv = f(paths[r, (j + lag) % n])
                acc += np.outer(fu, fv)
        out[a] = acc / (reps * n)
    return out


def dense_limit_solve(l_lag, sigma, dt, noise):
    """Dense lower-triangular solve of the discretized limit equations over increments."""
    ns, mm, _ = l_lag.shape
    m = noise.shape[2]
    reps = noise.shape[0]
    big = np.eye(ns * m)
    for v in range(m):
        for w in range(v):
            for j in range(ns):
                for i in range(ns):
                    big[v * ns + j, w * ns + i] -= dt / sigma * l_lag[(i - j) % ns, v, w]
    rhs = (sigma * np.sqrt(dt) * noise.transpose(0, 2, 1).reshape(reps, -1)).T
    dz = np.linalg.solve(big, rhs).T.reshape(reps, m, ns).transpose(0, 2, 1)
    return np.concatenate([np.zeros((reps, ns, 1)), np.cumsum(dz, axis=2)], axis=2)
