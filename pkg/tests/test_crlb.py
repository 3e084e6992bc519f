import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pascal_sim.crlb import (CrlbResult, UnidentifiableError, crlb_bounds, crlb_for, fisher_information,
                             mu_partials, scaled_condition_number)
from pascal_sim.localizer import mean_vector, pack
from pascal_sim.signal_model import ArrayGeometry, FrameConfig, power_for_snr

LAM = 1.6e-3
GEO = ArrayGeometry(6, LAM)
CFG = FrameConfig()


def reference(snr_db=9.0):
    p = power_for_snr(snr_db, LAM, 80.0)
    psi = pack([math.radians(20), math.radians(40)], [80.0, 80.0], [2000.0, 4000.0])
    return psi, [p, p]


def fd_jacobian(psi, powers, l, rel=1e-6):
    cols = []
    for j in range(psi.size):
        h = rel * abs(psi[j])
        up, dn = psi.copy(), psi.copy()
        up[j] += h
        dn[j] -= h
        cols.append((mean_vector(up, GEO, CFG, powers, l) - mean_vector(dn, GEO, CFG, powers, l)) / (2 * h))
    return np.array(cols)


class TestPartials:
    def test_range_partial(self):
        psi, powers = reference()
        _, dd, _ = mu_partials(psi, 1, GEO, CFG, powers, 3)
        single = mean_vector(pack([psi[0]], [psi[2]], [psi[4]]), GEO, CFG, [powers[0]], 3)
        np.testing.assert_allclose(dd, -single / psi[2], rtol=1e-13)

    @pytest.mark.parametrize("l", [1, 3, 5])
    def test_finite_differences(self, l):
        psi, powers = reference()
        jac = fd_jacobian(psi, powers, l)
        for k in (1, 2):
            parts = mu_partials(psi, k, GEO, CFG, powers, l)
            for j, part in enumerate(parts):
                ref = jac[j * 2 + k - 1]
                assert np.linalg.norm(part - ref) / np.linalg.norm(part) < 1e-6

    def test_theta_partial_first_antenna_zero(self):
        psi, powers = reference()
        dth, _, _ = mu_partials(psi, 2, GEO, CFG, powers, 4)
        np.testing.assert_array_equal(dth.reshape(4, 6)[:, 0], 0)

    def test_index_check(self):
        psi, powers = reference()
        with pytest.raises(ValueError):
            mu_partials(psi, 3, GEO, CFG, powers, 1)


class TestFisher:
    def test_single_drone_doppler_entry(self):
        p = power_for_snr(6.0, LAM, 80.0)
        psi = pack([0.4], [80.0], [1000.0])
        l = 4
        f = fisher_information(psi, GEO, CFG, [p], l)
        eta = LAM / (4 * math.pi * 80.0)
        ref = 2.0 * 6 * p * eta ** 2 * sum((2 * math.pi * i / CFG.sampling_rate) ** 2 for i in range(1, l + 1))
        assert f[2, 2] == pytest.approx(ref, rel=1e-12)

    def test_noise_scaling(self):
        psi, powers = reference()
        f1 = fisher_information(psi, GEO, CFG, powers, 3, noise_variance=1.0)
        f3 = fisher_information(psi, GEO, CFG, powers, 3, noise_variance=3.0)
        np.testing.assert_allclose(f3, f1 / 3, rtol=1e-14)

    @pytest.mark.parametrize("l", [1, 2, 4])
    def test_additive_in_pilots(self, l):
        psi, powers = reference()
        jac_next = np.array(mu_partials(psi, 1, GEO, CFG, powers, l + 1) + mu_partials(psi, 2, GEO, CFG, powers, l + 1))
        # reorder (theta1, d1, f1, theta2, d2, f2) -> packed order
        jac_next = jac_next[[0, 3, 1, 4, 2, 5]]
        inc = jac_next[:, -6:]
        f_inc = 2 * (inc.conj() @ inc.T).real
        ref = fisher_information(psi, GEO, CFG, powers, l + 1)
        np.testing.assert_allclose(fisher_information(psi, GEO, CFG, powers, l) + f_inc, ref,
                                   rtol=1e-11, atol=1e-13 * np.abs(ref).max())

    def test_symmetric_psd(self):
        psi, powers = reference()
        f = fisher_information(psi, GEO, CFG, powers, 5)
        np.testing.assert_array_equal(f, f.T)
        assert np.all(np.linalg.eigvalsh(f / np.sqrt(np.outer(np.diag(f), np.diag(f)))) > 0)

    def test_noise_must_be_positive(self):
        psi, powers = reference()
        with pytest.raises(ValueError):
            fisher_information(psi, GEO, CFG, powers, 2, noise_variance=0.0)


class TestBounds:
    def test_diagonal(self):
        f = np.diag([4.0, 1e-6, 2.5e8])
        np.testing.assert_allclose(crlb_bounds(f).variances, [0.25, 1e6, 4e-9], rtol=1e-14)

    def test_zeroed_couplings(self):
        psi = pack([0.4], [80.0], [1000.0])
        f = fisher_information(psi, GEO, CFG, [1e12], 3)
        res = crlb_bounds(np.diag(np.diag(f)))
        np.testing.assert_allclose(res.variances, 1 / np.diag(f), rtol=1e-13)

    def test_against_finite_difference_fim(self):
        psi, powers = reference()
        jac = fd_jacobian(psi, powers, 5)
        f_fd = 2 * (jac.conj() @ jac.T).real
        ref = np.diag(np.linalg.inv(f_fd))
        np.testing.assert_allclose(crlb_for(psi, GEO, CFG, powers, 5).variances, ref, rtol=1e-4)

    def test_identical_drones_unidentifiable(self):
        psi = pack([0.3, 0.3], [80.0, 80.0], [1000.0, 1000.0])
        f = fisher_information(psi, GEO, CFG, [1e10, 1e10], 3)
        with pytest.raises(UnidentifiableError) as info:
            crlb_bounds(f)
        assert info.value.condition_number > 1e12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 30), st.integers(1, 6))
    def test_bound_scales_with_snr(self, snr, l):
        psi, powers = reference(snr)
        base = crlb_for(psi, GEO, CFG, powers, l).variances
        psi2, powers2 = reference(snr + 10)
        np.testing.assert_allclose(crlb_for(psi2, GEO, CFG, powers2, l).variances, base / 10, rtol=1e-9)

    def test_more_pilots_never_hurt(self):
        psi, powers = reference()
        v = [crlb_for(psi, GEO, CFG, powers, l).variances for l in range(1, 8)]
        assert all(np.all(b <= a * (1 + 1e-12)) for a, b in zip(v, v[1:]))

    def test_per_drone_layout(self):
        res = CrlbResult(np.arange(6.0))
        np.testing.assert_array_equal(res.per_drone(), [[0, 2, 4], [1, 3, 5]])
        assert res.num_drones == 2

    def test_condition_number_unit_free(self):
        f = np.array([[4.0, 1.0], [1.0, 9.0]])
        s = np.diag([1e6, 1e-3])
        assert scaled_condition_number(s @ f @ s) == pytest.approx(scaled_condition_number(f), rel=1e-12)
