import numpy as np
import pytest

from hopnet import sde
from hopnet.activation import Activation
from hopnet.errors import DimensionMismatch, ValidationError
from hopnet.lattice import TimeGrid
from hopnet.weights import WeightMatrix, product_model, sample_weights


def make_J(arr):
    arr = np.asarray(arr, dtype=float)
    return WeightMatrix(n=(arr.shape[0] - 1) // 2, entries=arr, seed=0)


class TestDrift:
    def test_zero_coupling_is_pure_leak(self, f_default):
        state = np.array([1.0, -2.0, 0.5])
        out = sde.drift(make_J(np.zeros((3, 3))), f_default, state, alpha=0.7)
        assert np.array_equal(out, -0.7 * state)

    def test_zero_state_gives_half_row_sums(self, f_default):
        rng = np.random.default_rng(1)
        J = make_J(rng.standard_normal((5, 5)))
        out = sde.drift(J, f_default, np.zeros(5), alpha=0.0)
        # f(0) = 1/2 for the logistic activation
        assert np.allclose(out, 0.5 * J.entries.sum(axis=1), atol=1e-14)

    def test_matches_triple_loop_oracle(self, f_default):
        rng = np.random.default_rng(2)
        J = make_J(rng.standard_normal((3, 3)))
        state = rng.standard_normal(3)
        out = sde.drift(J, f_default, state, alpha=0.3)
        oracle = np.zeros(3)
        for i in range(3):
            acc = 0.0
            for j in range(3):
                acc += J.entries[i, j] * float(f_default(state[j]))
            oracle[i] = acc - 0.3 * state[i]
        assert np.allclose(out, oracle, atol=1e-14)

    def test_dimension_mismatch(self, f_default):
        with pytest.raises(DimensionMismatch):
            sde.drift(make_J(np.zeros((3, 3))), f_default, np.zeros(4))


class TestSimulateQuenched:
    def test_noise_only_is_scaled_brownian(self, f_default):
        grid = TimeGrid(T=2.0, m=25)
        cfg = sde.SdeConfig(sigma=1.3, f=f_default, grid=grid)
        rng = np.random.default_rng(3)
        noise = rng.standard_normal((4, 3, grid.m))
        traj = sde.simulate_quenched(make_J(np.zeros((3, 3))), cfg, seed=0, replicas=4, noise=noise)
        ref = np.concatenate([np.zeros((4, 3, 1)),
                              np.cumsum(1.3 * np.sqrt(grid.dt) * noise, axis=2)], axis=2)
        assert np.array_equal(traj.paths, ref)

    def test_noise_only_variance(self, f_default):
        grid = TimeGrid(T=1.0, m=10)
        sig = 0.8
        cfg = sde.SdeConfig(sigma=sig, f=f_default, grid=grid)
        traj = sde.simulate_quenched(make_J(np.zeros((3, 3))), cfg, seed=5, replicas=2000)
        samples = traj.paths[:, :, -1].ravel()
        est = samples.var()
        se = est * np.sqrt(2.0 / len(samples))
        assert abs(est - sig**2) < 4 * se

    def test_brownian_covariance_min_st(self, f_default):
        grid = TimeGrid(T=1.0, m=8)
        cfg = sde.SdeConfig(sigma=1.0, f=f_default, grid=grid)
        traj = sde.simulate_quenched(make_J(np.zeros((1, 1))), cfg, seed=6, replicas=8000)
        x = traj.paths[:, 0, :]
        for (v, w) in [(4, 8), (2, 6), (8, 8)]:
            prods = x[:, v] * x[:, w]
            se = prods.std(ddof=1) / np.sqrt(len(prods))
            assert abs(prods.mean() - grid.nodes[min(v, w)]) < 4 * se

    def test_deterministic_leak_decay(self, f_default):
        grid = TimeGrid(T=1.0, m=12)
        cfg = sde.SdeConfig(sigma=1.0, f=f_default, grid=grid, alpha=0.9, init=1.0)
        traj = sde.simulate_quenched(make_J(np.zeros((3, 3))), cfg, seed=0, replicas=1,
                                     noise=np.zeros((1, 3, grid.m)))
        expect = (1.0 - 0.9 * grid.dt) ** np.arange(grid.m + 1)
        assert np.max(np.abs(traj.paths[0] - expect[None, :])) < 1e-14

    def test_matches_scalar_stepping_oracle(self, f_default):
        grid = TimeGrid(T=0.8, m=4)
        sig, alpha = 1.1, 0.2
        cfg = sde.SdeConfig(sigma=sig, f=f_default, grid=grid, alpha=alpha)
        rng = np.random.default_rng(7)
        J = make_J(0.5 * rng.standard_normal((5, 5)))
        noise = rng.standard_normal((1, 5, grid.m))
        traj = sde.simulate_quenched(J, cfg, seed=0, replicas=1, noise=noise)
        # straight-line scalar reimplementation
        v = [0.0] * 5
        path = [list(v)]
        dt = grid.dt
        for step in range(grid.m):
            nv = []
            for i in range(5):
                acc = 0.0
                for j in range(5):
                    acc += J.entries[i, j] * float(f_default(v[j]))
                nv.append(v[i] + (acc - alpha * v[i]) * dt + sig * np.sqrt(dt) * noise[0, i, step])
            v = nv
            path.append(list(v))
        assert np.max(np.abs(traj.paths[0] - np.array(path).T)) < 1e-14

    def test_replica_streams_independent_of_count(self, f_default):
        grid = TimeGrid(T=1.0, m=5)
        cfg = sde.SdeConfig(sigma=1.0, f=f_default, grid=grid)
        J = make_J(np.zeros((3, 3)))
        two = sde.simulate_quenched(J, cfg, seed=9, replicas=2)
        five = sde.simulate_quenched(J, cfg, seed=9, replicas=5)
        assert np.array_equal(two.paths, five.paths[:2])

    def test_shift_equivariance(self, f_default):
        grid = TimeGrid(T=1.0, m=10)
        cfg = sde.SdeConfig(sigma=1.0, f=f_default, grid=grid)
        J = sample_weights(product_model(), 3, seed=10)
        rng = np.random.default_rng(11)
        noise = rng.standard_normal((2, 7, grid.m))
        base = sde.simulate_quenched(J, cfg, seed=0, replicas=2, noise=noise)
        s = 3
        J_shift = WeightMatrix(n=3, entries=np.roll(np.roll(J.entries, -s, axis=0), -s, axis=1), seed=0)
        shifted = sde.simulate_quenched(J_shift, cfg, seed=0, replicas=2,
                                        noise=np.roll(noise, -s, axis=1))
        assert np.max(np.abs(shifted.paths - np.roll(base.paths, -s, axis=1))) < 1e-12

    def test_debug_mode_asserts_drift_bound(self, f_default):
        grid = TimeGrid(T=1.0, m=4)
        cfg = sde.SdeConfig(sigma=1.0, f=f_default, grid=grid)
        J = sample_weights(product_model(), 2, seed=12)
        sde.simulate_quenched(J, cfg, seed=1, replicas=2, debug=True)  # must not raise

    def test_iid_initial_condition(self, f_default):
        grid = TimeGrid(T=1.0, m=3)
        cfg = sde.SdeConfig(sigma=1.0, f=f_default, grid=grid,
                            init=lambda rng, n: rng.normal(2.0, 0.1, n))
        traj = sde.simulate_quenched(make_J(np.zeros((4, 4))), cfg, seed=2, replicas=300)
        x0 = traj.paths[:, :, 0]
        assert abs(x0.mean() - 2.0) < 0.05
        assert x0.std() > 0


class TestConfigValidation:
    def test_bad_sigma(self, f_default, small_grid):
        with pytest.raises(ValidationError):
            sde.SdeConfig(sigma=0.0, f=f_default, grid=small_grid)

    def test_bad_activation_range(self, small_grid):
        too_big = Activation(lambda x: 2.0 * np.ones_like(x), name="bad", lo=0.0, hi=1.0)
        with pytest.raises(ValidationError):
            sde.SdeConfig(sigma=1.0, f=too_big, grid=small_grid)

    def test_bad_lipschitz(self, small_grid):
        steep = Activation(lambda x: np.clip(3.0 * x, 0.0, 1.0), name="steep")
        with pytest.raises(ValidationError):
            sde.SdeConfig(sigma=1.0, f=steep, grid=small_grid)

    def test_bad_grid(self):
        with pytest.raises(ValidationError):
            TimeGrid(T=1.0, m=0)
