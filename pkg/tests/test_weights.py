import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopnet import weights as W
from hopnet.errors import BadTruncation, EnvelopeViolation, SpectrumNotPositive
from hopnet.lattice import lag_values


def nearest_neighbour_model():
    """R(k,l) = delta_l * 1{|k|=1}: legal envelope, indefinite spectrum."""
    return W.covariance_model(
        rj=lambda k, l: ((np.abs(k) == 1) & (np.asarray(l) == 0)).astype(float),
        a_env=lambda k: np.where(np.abs(k) <= 1, 1.0, (1.0 + np.abs(k)) ** -4.0),
        b_env=lambda l: 2.0 ** (-np.abs(np.asarray(l, dtype=float))),
        a_sum=3.0, b_sum=3.0, name="nn",
    )


class TestSpectralDensity:
    def test_delta_kernel_flat_spectrum(self):
        lam = W.spectral_density(W.delta_model(1.0), n=2)
        assert np.allclose(lam, 1.0, atol=1e-12)

    def test_nearest_neighbour_matches_loop_oracle(self):
        n = 4
        size = 2 * n + 1
        lam = W.spectral_density(nearest_neighbour_model(), n)
        lv = lag_values(size)
        # independent double-loop DFT
        oracle = np.zeros((size, size), dtype=complex)
        for pi, p in enumerate(lv):
            for qi, q in enumerate(lv):
                s = 0.0
                for k in lv:
                    for l in lv:
                        r = 1.0 if (abs(k) == 1 and l == 0) else 0.0
                        s += r * np.exp(-2j * np.pi * (p * k + q * l) / size)
                oracle[pi, qi] = s
        assert np.max(np.abs(oracle.imag)) < 1e-12
        assert np.allclose(lam, oracle.real, atol=1e-12)
        # analytic form 2 cos(2 pi p / 9), independent of q; negative somewhere
        expect = 2 * np.cos(2 * np.pi * lv / size)
        assert np.allclose(lam, expect[:, None] * np.ones(size), atol=1e-12)
        assert lam.min() < 0

    def test_product_model_spectrum_separable(self):
        n = 3
        size = 2 * n + 1
        model = W.product_model(c=0.8)
        lam = W.spectral_density(model, n)
        lv = lag_values(size)
        a_t = np.array([np.sum(0.8 * (1 + np.abs(lv)) ** -4.0 * np.exp(-2j * np.pi * p * lv / size)).real
                        for p in lv])
        b_t = np.array([np.sum(2.0 ** -np.abs(lv) * np.exp(-2j * np.pi * q * lv / size)).real
                        for q in lv])
        assert np.allclose(lam, np.outer(a_t, b_t), rtol=1e-12)
        assert lam.min() > 0

    def test_evenness_exact(self):
        size = 2 * 5 + 1
        lam = W.spectral_density(W.product_model(), 5)
        flip = (-np.arange(size)) % size
        assert np.array_equal(lam, lam[flip][:, flip])

    def test_envelope_violation_raises(self):
        bad = W.CovarianceModel(
            rj=lambda k, l: np.ones(np.broadcast(k, l).shape),
            a_env=lambda k: (1.0 + np.abs(k)) ** -4.0,
            b_env=lambda l: 2.0 ** (-np.abs(np.asarray(l, dtype=float))),
            a_sum=1.0, b_sum=3.0)
        with pytest.raises(EnvelopeViolation):
            W.spectral_density(bad, 2)


class TestValidate:
    def test_delta_ok(self):
        assert W.validate(W.delta_model(1.0), 3).ok

    def test_nearest_neighbour_flags_nonpositive_frequencies(self):
        n = 4
        size = 2 * n + 1
        rep = W.validate(nearest_neighbour_model(), n)
        assert not rep.ok and not rep.envelope_violations
        flagged = {p for (p, q, lam) in rep.nonpositive_freqs}
        expect = {int(p) for p in lag_values(size) if 2 * np.cos(2 * np.pi * p / size) <= 0}
        assert flagged == expect

    def test_product_model_ok(self):
        model = W.product_model(c=1.0)
        rep = W.validate(model, 6)
        assert rep.ok and rep.spectrum_min > 0

    def test_zero_model_strict_vs_lenient(self):
        assert not W.validate(W.zero_model(), 2, strict=True).ok
        assert W.validate(W.zero_model(), 2, strict=False).ok

    def test_summary_mentions_violations(self):
        rep = W.validate(nearest_neighbour_model(), 4)
        assert "nonpositive" in rep.summary()


class TestSampling:
    def test_delta_n1_iid_entries(self):
        draws = W.sample_weight_ensemble(W.delta_model(1.0), 1, seed=11, count=60_000)
        var = draws.var(axis=0)
        se = np.sqrt(2.0 / len(draws)) / 3.0  # var of variance estimator for N(0, 1/3)
        assert np.max(np.abs(var - 1.0 / 3.0)) < 5 * se
        cross = np.mean(draws[:, 0, 0] * draws[:, 1, 2])
        assert abs(cross) < 5 * (1.0 / 3.0) / np.sqrt(len(draws))

    def test_covariance_matches_model(self):
        model = W.product_model(c=1.0)
        n = 3
        size = 2 * n + 1
        draws = W.sample_weight_ensemble(model, n, seed=7, count=60_000)
        prod = draws[:, 0, 0][:, None, None] * draws
        est = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / np.sqrt(len(prod))
        lv = lag_values(size)
        kk, ll = np.meshgrid(lv, lv, indexing="ij")
        z = np.abs(est - model.rj(kk, ll) / size) / se
        assert z.max() < 5

    def test_seed_determinism_bitwise(self):
        model = W.product_model()
        a = W.sample_weights(model, 3, seed=3).entries
        b = W.sample_weights(model, 3, seed=3).entries
        assert a.tobytes() == b.tobytes()
        c = W.sample_weights(model, 3, seed=4).entries
        assert a.tobytes() != c.tobytes()

    def test_dft_independence_structure(self):
        model = W.product_model(c=1.0)
        n = 3
        size = 2 * n + 1
        draws = W.sample_weight_ensemble(model, n, seed=19, count=80_000)
        jt = np.fft.fft(draws, axis=1)  # DFT over the first site index
        lv = lag_values(size)
        kk, ll = np.meshgrid(lv, lv, indexing="ij")
        r_t = np.fft.fft(model.rj(kk, ll), axis=0)  # DFT over first lag
        for (p, q, k, l) in [(1, -1, 0, 2), (2, -2, 3, 3), (1, 2, 0, 0), (3, 1, 2, 5), (0, 0, 1, 4)]:
            prod = jt[:, p % size, k] * jt[:, q % size, l]
            theory = r_t[p % size, (k - l) % size] if (p + q) % size == 0 else 0.0
            for part, tgt in ((prod.real, np.real(theory)), (prod.imag, np.imag(theory))):
                se = part.std(ddof=1) / np.sqrt(len(part))
                if se == 0.0:  # exactly-real combinations, e.g. p = q = 0
                    assert part.mean() == pytest.approx(tgt, abs=1e-12)
                else:
                    assert abs(part.mean() - tgt) < 5 * se

    def test_negative_spectrum_rejected(self):
        with pytest.raises(SpectrumNotPositive):
            W.sample_weights(nearest_neighbour_model(), 4, seed=0)

    def test_zero_model_samples_zero(self):
        draws = W.sample_weight_ensemble(W.zero_model(), 2, seed=1, count=4)
        assert np.array_equal(draws, np.zeros_like(draws))


class TestTruncated:
    def test_bad_truncation(self):
        with pytest.raises(BadTruncation):
            W.sample_truncated_weights(W.product_model(), n=3, q=3, seed=0)
        with pytest.raises(BadTruncation):
            W.sample_truncated_weights(W.product_model(), n=3, q=0, seed=0)

    def test_shapes_and_zero_model(self):
        t = W.sample_truncated_weights(W.product_model(), n=4, q=2, seed=5)
        assert t.entries.shape == (5, 9)
        z = W.sample_truncated_weights(W.zero_model(), n=4, q=2, seed=5)
        assert np.array_equal(z.entries, np.zeros((5, 9)))

    def test_base_covariance_cutoff_exact(self):
        base = W.truncated_base_covariance(W.product_model(), n=4, q=2)
        lv = lag_values(9)
        cut_cols = np.abs(lv) > 2
        assert np.array_equal(base[:, cut_cols], np.zeros_like(base[:, cut_cols]))

    @staticmethod
    def _truncated_ensemble(model, n, q, seed, count):
        """Batch draws through the same spectral pieces the sampler uses."""
        base = W.truncated_base_covariance(model, n, q)
        sqrt_spec = W._sqrt_clipped(base.size * np.fft.fft2(base).real, "test")
        return W._field_ensemble(sqrt_spec, seed, "weights-truncated", count)

    def test_single_draw_matches_batch_head(self):
        model = W.product_model()
        single = W.sample_truncated_weights(model, 4, 2, seed=12).entries
        batch = self._truncated_ensemble(model, 4, 2, seed=12, count=3)
        assert np.array_equal(single, batch[0])

    def test_delta_q_truncation_iid_rows(self):
        n, q = 3, 2
        size = 2 * n + 1
        draws = self._truncated_ensemble(W.delta_model(1.0), n, q, seed=8, count=60_000)
        var = draws.var(axis=0)
        se = np.sqrt(2.0 / len(draws)) / size
        assert np.max(np.abs(var - 1.0 / size)) < 5 * se

    def test_mc_covariance_matches_lccl(self):
        n, q = 4, 2
        size_n, size_q = 9, 5
        model = W.product_model(c=1.0)
        draws = self._truncated_ensemble(model, n, q, seed=9, count=60_000)
        prod = draws[:, 0, 0][:, None, None] * draws
        est = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / np.sqrt(len(prod)) + 1e-15
        a = np.arange(size_q)
        b = np.arange(size_n)
        aa, bb = np.meshgrid(((a + q) % size_q) - q, ((b + n) % size_n) - n, indexing="ij")
        target = model.rj(aa, bb) * (np.abs(bb) <= q) / size_n
        assert (np.abs(est - target) / se).max() < 5
        # indicator cutoff: beyond lag q the covariance is zero within MC error
        cut = np.abs(bb) > q
        assert (np.abs(est[cut]) / se[cut]).max() < 5


@settings(max_examples=25, deadline=None)
@given(amp=st.floats(0.1, 2.0), tilt=st.floats(-1.0, 1.0))
def test_symmetrization_makes_any_kernel_even(amp, tilt):
    raw = lambda k, l: amp * np.exp(-np.abs(k) - np.abs(l)) * (1.0 + tilt * np.sign(k + 0.1 * l))
    model = W.covariance_model(raw, lambda k: 3 * amp * np.exp(-np.abs(k)),
                               lambda l: np.exp(-np.abs(l)), 9.0 * amp, 3.0)
    ks = np.arange(-6, 7)
    kk, ll = np.meshgrid(ks, ks, indexing="ij")
    assert np.array_equal(model.rj(kk, ll), model.rj(-kk, -ll))
