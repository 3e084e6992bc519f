import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pascal_sim.localizer import (LocationEstimate, SearchFailure, SearchSpec, error_statistics, mean_vector,
                                  mle_estimate, mle_estimate_batch, neg_log_likelihood, pack, refine_slots,
                                  unpack)
from pascal_sim.signal_model import (ArrayGeometry, DroneState, FrameConfig, channel_column, power_for_snr,
                                     steering_vector)

LAM = 1.6e-3


def reference(snr_db=9.0):
    p = power_for_snr(snr_db, LAM, 80.0)
    drones = (DroneState(math.radians(20), 80.0, 2000.0, p), DroneState(math.radians(40), 80.0, 4000.0, p))
    psi = pack([d.doa for d in drones], [d.range for d in drones], [d.doppler for d in drones])
    return drones, psi, [p, p]


def direct_mean(drones, geo, fs, l):
    """Elementwise stacked pilot mean written out from the model equations."""
    out = []
    for t in range(1, l + 1):
        for n in range(geo.num_antennas):
            v = 0j
            for d in drones:
                eta = LAM / (4 * math.pi * d.range)
                v += (math.sqrt(d.tx_power) * eta * np.exp(2j * math.pi * d.doppler * t / fs)
                      * np.exp(-2j * math.pi * n * (LAM / 2) * math.sin(d.doa) / LAM))
            out.append(v)
    return np.array(out)


class TestMeanVector:
    def test_single_pilot_single_drone(self):
        geo, cfg = ArrayGeometry(6, LAM), FrameConfig()
        d = DroneState(0.3, 70.0, 1500.0, 5.0)
        mu = mean_vector(pack([d.doa], [d.range], [d.doppler]), geo, cfg, [d.tx_power], 1)
        np.testing.assert_allclose(mu, math.sqrt(5.0) * channel_column(geo, d, 1, cfg), rtol=1e-14)

    def test_matches_direct_formula(self):
        geo, cfg = ArrayGeometry(6, LAM), FrameConfig()
        drones, psi, powers = reference()
        mu = mean_vector(psi, geo, cfg, powers, 5)
        ref = direct_mean(drones, geo, cfg.sampling_rate, 5)
        np.testing.assert_allclose(mu, ref, rtol=0, atol=1e-12 * np.abs(ref).max())

    def test_power_scaling(self):
        geo, cfg = ArrayGeometry(6, LAM), FrameConfig()
        _, psi, powers = reference()
        np.testing.assert_allclose(mean_vector(psi, geo, cfg, np.array(powers) * 4, 3),
                                   2 * mean_vector(psi, geo, cfg, powers, 3), rtol=1e-14)

    def test_needs_a_pilot(self):
        with pytest.raises(ValueError):
            mean_vector(reference()[1], ArrayGeometry(6, LAM), FrameConfig(), reference()[2], 0)


class TestObjective:
    geo, cfg = ArrayGeometry(6, LAM), FrameConfig()

    def test_zero_at_truth(self):
        _, psi, powers = reference()
        y = mean_vector(psi, self.geo, self.cfg, powers, 4)
        assert neg_log_likelihood(y, psi, self.geo, self.cfg, powers) == 0.0

    def test_unit_spike(self):
        _, psi, powers = reference()
        y = mean_vector(psi, self.geo, self.cfg, powers, 4).copy()
        y[7] += 1.0
        assert neg_log_likelihood(y, psi, self.geo, self.cfg, powers) == pytest.approx(1.0, rel=1e-12)

    @given(arrays(float, 6, elements=st.floats(-1e-3, 1e-3)))
    def test_truth_is_minimum_noiseless(self, delta):
        _, psi, powers = reference()
        y = mean_vector(psi, self.geo, self.cfg, powers, 3)
        pert = psi + delta * np.array([1, 1, 1e3, 1e3, 1e3, 1e3])
        assert neg_log_likelihood(y, psi, self.geo, self.cfg, powers) <= \
            neg_log_likelihood(y, pert, self.geo, self.cfg, powers)

    def test_length_check(self):
        _, psi, powers = reference()
        with pytest.raises(ValueError):
            neg_log_likelihood(np.zeros(7, complex), psi, self.geo, self.cfg, powers)


class TestPackUnpack:
    @given(arrays(float, 9, elements=st.floats(-1e6, 1e6)))
    def test_roundtrip(self, v):
        np.testing.assert_array_equal(pack(*unpack(v)), v)

    def test_bad_length(self):
        with pytest.raises(ValueError):
            unpack(np.zeros(4))


class TestEstimator:
    geo, cfg = ArrayGeometry(6, LAM), FrameConfig()

    def test_noiseless_grid_node_exact(self):
        spec = SearchSpec()
        # truth on coarse nodes: 0.5 deg angle grid, Doppler grid for l pilots
        l = 3
        fgrid = spec.doppler_grid(l, self.cfg.sampling_rate)
        tgrid = spec.theta_grid()
        th = [tgrid[np.argmin(abs(tgrid - math.radians(20)))], tgrid[np.argmin(abs(tgrid - math.radians(40)))]]
        fd = [fgrid[np.argmin(abs(fgrid - 2000))], fgrid[np.argmin(abs(fgrid - 4000))]]
        psi = pack(th, [80.0, 80.0], fd)
        powers = [1e12, 1e12]
        y = mean_vector(psi, self.geo, self.cfg, powers, l)
        est = mle_estimate(y, self.geo, self.cfg, powers, truth=psi)
        np.testing.assert_allclose(est.estimate, psi, rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("l", [1, 2, 5])
    def test_noiseless_off_grid(self, l):
        _, psi, powers = reference(30.0)
        y = mean_vector(psi, self.geo, self.cfg, powers, l)
        est = mle_estimate(y, self.geo, self.cfg, powers, truth=psi)
        np.testing.assert_allclose(est.estimate, psi, rtol=1e-7)
        assert est.objective < 1e-20 * np.vdot(y, y).real

    def test_batch_matches_single(self):
        _, psi, powers = reference(6.0)
        rng = np.random.default_rng(5)
        mu = mean_vector(psi, self.geo, self.cfg, powers, 3).reshape(3, 6)
        y = mu[None] + (rng.standard_normal((4, 3, 6)) + 1j * rng.standard_normal((4, 3, 6))) / math.sqrt(2)
        batch, _ = mle_estimate_batch(y, self.geo, self.cfg, powers, reference=psi)
        for b in range(4):
            single = mle_estimate(y[b].ravel(), self.geo, self.cfg, powers, truth=psi)
            np.testing.assert_allclose(single.estimate, batch[b], rtol=1e-9)

    def test_labels_follow_reference(self):
        _, psi, powers = reference(20.0)
        y = mean_vector(psi, self.geo, self.cfg, powers, 2)
        est = mle_estimate(y, self.geo, self.cfg, powers, truth=psi)
        assert est.doa[0] < est.doa[1]

    def test_properties(self):
        est = LocationEstimate(np.array([0.1, 0.2, 10.0, 20.0, 5.0, 6.0]), 2, 0.0)
        np.testing.assert_array_equal(est.doa, [0.1, 0.2])
        np.testing.assert_array_equal(est.range, [10.0, 20.0])
        np.testing.assert_array_equal(est.doppler, [5.0, 6.0])
        assert est.num_drones == 2

    def test_nonfinite_input(self):
        _, psi, powers = reference()
        y = np.full(12, np.nan, complex)
        with pytest.raises(SearchFailure):
            mle_estimate(y, self.geo, self.cfg, powers)

    def test_refine_slots_noiseless(self):
        _, psi, powers = reference(25.0)
        mu = mean_vector(psi, self.geo, self.cfg, powers, 4).reshape(1, 4, 6)
        start = psi + np.array([1e-3, -1e-3, 0.2, -0.2, 5.0, -5.0])
        out = refine_slots(mu, [1, 2, 3, 4], start, self.geo, self.cfg, powers)
        np.testing.assert_allclose(out[0], psi, rtol=1e-8)


class TestSearchSpec:
    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            SearchSpec(theta_bounds=(0.5, 0.1))
        with pytest.raises(ValueError):
            SearchSpec(range_bounds=(0.0, 10.0))

    def test_default_doppler_step(self):
        g = SearchSpec().doppler_grid(5, 1e5)
        assert np.diff(g)[0] == pytest.approx(1e5 / (20 * math.pi * 5), rel=1e-9)


class TestErrorStatistics:
    def test_zero(self):
        mean, rmse = error_statistics(np.zeros((5, 3)))
        np.testing.assert_array_equal(mean, 0)
        np.testing.assert_array_equal(rmse, 0)

    def test_symmetric_pair(self):
        mean, rmse = error_statistics(np.array([[0.3, -2.0], [-0.3, 2.0]]))
        np.testing.assert_allclose(mean, [0, 0], atol=1e-17)
        np.testing.assert_allclose(rmse, [0.3, 2.0])

    def test_one_pass_oracle(self):
        rng = np.random.default_rng(0)
        e = rng.normal(0.1, 2.0, size=(257, 6))
        mean, rmse = error_statistics(e)
        # one-pass accumulation, written independently
        s = [0.0] * 6
        s2 = [0.0] * 6
        for row in e:
            for j, v in enumerate(row):
                s[j] += v
                s2[j] += v * v
        np.testing.assert_allclose(mean, np.array(s) / 257, rtol=1e-12)
        np.testing.assert_allclose(rmse, np.sqrt(np.array(s2) / 257), rtol=1e-12)

    def test_from_estimates(self):
        trials = [LocationEstimate(np.zeros(3), 1, 0.0, errors=np.array([a, 2 * a, -a])) for a in (1.0, -1.0)]
        mean, rmse = error_statistics(trials)
        np.testing.assert_allclose(rmse, [1, 2, 1])

    def test_needs_two_trials(self):
        with pytest.raises(ValueError):
            error_statistics(np.zeros((1, 3)))
