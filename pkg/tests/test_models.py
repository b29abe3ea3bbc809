import math

import numpy as np
import pytest

from kamreduce.hamrep import reality_defect, tl_seminorm, vf_norm
from kamreduce.models import (
    Potential,
    geometric_potential,
    halfwave_hamiltonian,
    potential_from_config,
    random_analytic_potential,
    single_cosine_potential,
    verify_assumptions,
    wave_hamiltonian,
)

OMEGA = np.array([2.0 * math.pi * (math.sqrt(5.0) - 1.0) / 2.0])


def cosx_potential(a=0.25, p=1.0, width=1.0):
    """V = cos x: single theta-independent cosine mode."""
    return Potential(series=({}, {(0,): 1.0}), a=a, p=p, width=width)


class TestPotentials:
    def test_single_cosine_series(self):
        V = single_cosine_potential(1.0)
        assert V.J_V == 1
        assert V.mode(1) == {(0,): 1.0, (1,): 0.5, (-1,): 0.5}
        assert V.reality_defect() == 0.0

    def test_norm_formula(self):
        V = cosx_potential(a=0.25, p=1.0, width=0.5)
        # ||V|| = 1^p e^(2a*1) * 1
        assert V.norm() == pytest.approx(math.exp(0.5))

    def test_geometric_envelope(self):
        V = geometric_potential(2.0, J_V=12, a=0.2, p=1.0)
        norms = V.mode_norms()
        j = np.arange(1, 13)
        np.testing.assert_allclose(
            norms[1:], 2.0 * np.exp(-2 * 0.2 * j) * j**-1.0, rtol=1e-12
        )
        assert V.norm() == pytest.approx(2.0 * 13, rel=1e-12)
        assert V.norm() <= V.C_V() + 1e-12

    def test_random_analytic_under_declared(self, rng):
        V = random_analytic_potential(rng, 1.5, J_V=10, K_V=2, a=0.15, p=1.0)
        assert V.reality_defect() <= 1e-15
        j = np.arange(1, 11)
        envelopes = 1.5 * np.exp(-2 * 0.15 * j) * j**-1.0
        assert np.all(V.mode_norms()[1:] <= envelopes + 1e-15)
        assert V.norm() <= V.C_V() + 1e-12

    def test_config_round(self):
        V = potential_from_config({"preset": "single-cosine", "amplitude": 0.7})
        assert V.mode(1)[(0,)] == pytest.approx(0.7)
        with pytest.raises(ValueError):
            potential_from_config({"preset": "nope"})


class TestWaveModel:
    def test_zero_potential(self):
        V = Potential(series=({},), a=0.1, p=1.0, width=1.0)
        N, P = wave_hamiltonian(1.0, 1e-3, V, 4, 8, OMEGA)
        assert not P.coeffs

    def test_coupling_values_band(self):
        # Vt_1 = 1 theta-independent, m = 0: p_(i,i+1) = 1/2, p_ii = 0, p_(i,i+2) = 0
        V = cosx_potential()
        N, P = wave_hamiltonian(0.0, 1.0, V, 6, 8, OMEGA)
        h11 = P.coeffs[(0,)][1]
        for i in range(1, 6):
            assert h11[i - 1, i] == pytest.approx(0.5)
        assert np.max(np.abs(np.diagonal(h11))) == 0.0
        assert h11[0, 2] == 0.0

    def test_blocks_equal(self):
        V = single_cosine_potential()
        N, P = wave_hamiltonian(1.0, 2e-3, V, 5, 8, OMEGA)
        for k, b in P.coeffs.items():
            np.testing.assert_allclose(2.0 * b[0], b[1], atol=1e-300)
            np.testing.assert_allclose(2.0 * b[2], b[1], atol=1e-300)
            np.testing.assert_allclose(b[1], b[1].T, atol=1e-300)

    def test_frequencies(self):
        V = single_cosine_potential()
        N, P = wave_hamiltonian(1.0, 1e-3, V, 32, 8, OMEGA)
        assert N.Omega[0] == pytest.approx(math.sqrt(2.0))
        assert N.omega_breve[0] == pytest.approx(math.sqrt(2.0) - 1.0)
        # asymptote m/(2j)
        j = 32
        assert N.omega_breve[j - 1] == pytest.approx(1.0 / (2 * j), rel=1e-3)
        assert N.A0 == 2.0

    def test_toeplitz_structure_beyond_support(self):
        # for fixed d and i + j > J_V the entries are constant = (1/2) Vt_d
        V = geometric_potential(1.0, J_V=6, a=0.1, p=1.0)
        N, P = wave_hamiltonian(0.0, 1.0, V, 10, 8, OMEGA)
        h11 = P.coeffs[(0,)][1]
        d = 2
        vals = [h11[i - 1, i + d - 1] for i in range(5, 9)]  # i+j = 2i+d > 6
        assert np.ptp(np.abs(vals)) <= 1e-15
        assert vals[0] == pytest.approx(0.5 * V.mode(2)[(0,)])

    def test_reality(self):
        V = single_cosine_potential()
        N, P = wave_hamiltonian(1.0, 1e-3, V, 6, 8, OMEGA)
        assert reality_defect(P) <= 1e-15


class TestHalfWaveModel:
    def test_zero_potential(self):
        V = Potential(series=({},), a=0.1, p=1.0, width=1.0)
        N, P = halfwave_hamiltonian(1e-3, V, 4, 8, OMEGA)
        assert not P.coeffs

    def test_second_cosine_mode(self):
        # Vt_2 = 1 only: p_11 = -1/2 (from -Vt_2j at j=1), p_13 = 1/2
        V = Potential(series=({}, {}, {(0,): 1.0}), a=0.1, p=1.0, width=1.0)
        N, P = halfwave_hamiltonian(1.0, V, 4, 8, OMEGA)
        h11 = P.coeffs[(0,)][1]
        assert h11[0, 0] == pytest.approx(-0.5)
        assert h11[0, 2] == pytest.approx(0.5)
        assert h11[2, 0] == pytest.approx(0.5)

    def test_plus_blocks_vanish(self):
        V = single_cosine_potential()
        N, P = halfwave_hamiltonian(1e-3, V, 6, 8, OMEGA)
        for b in P.coeffs.values():
            assert np.max(np.abs(b[0])) == 0.0
            assert np.max(np.abs(b[2])) == 0.0

    def test_frequencies_integer(self):
        V = single_cosine_potential()
        N, P = halfwave_hamiltonian(1e-3, V, 8, 8, OMEGA)
        np.testing.assert_array_equal(N.omega_breve, np.zeros(8))
        np.testing.assert_allclose(N.Omega, np.arange(1, 9))

    def test_support_warning(self):
        V = single_cosine_potential()
        with pytest.warns(UserWarning):
            halfwave_hamiltonian(1e-3, V, 8, 8, OMEGA)


class TestVerifyAssumptions:
    def test_zero_potential_all_pass(self):
        V = Potential(series=({},), a=0.1, p=1.0, width=1.0)
        N, P = halfwave_hamiltonian(1e-3, V, 4, 8, OMEGA)
        rep = verify_assumptions(N, P, V, 1e-3, "halfwave")
        assert rep.all_ok
        assert rep.vf_value == 0.0 and rep.tl_value == 0.0

    def test_wave_cosx_bounds(self):
        # V = cos x, eps = 1e-3, r = 0.5, n = 1, p = 1, a = 0.25:
        # the additive constants are 4 + {16, 12} + 36
        eps = 1e-3
        V = cosx_potential(a=0.25, p=1.0, width=1.0)
        N, P = wave_hamiltonian(1.0, eps, V, 16, 8, OMEGA)
        rep = verify_assumptions(N, P, V, eps, "wave", m=1.0)
        C_V = V.C_V()
        assert rep.vf_bound_16 == pytest.approx((4 + 16 + 36) * C_V * eps)
        assert rep.vf_bound_12 == pytest.approx((4 + 12 + 36) * C_V * eps)
        assert rep.vf_ok and rep.vf_value <= rep.vf_bound_12
        assert rep.freq_bound_ok

    def test_wave_tl_with_analytic_limits(self):
        # small a keeps the anti-diagonal weights harmless at this J
        eps = 1e-3
        V = single_cosine_potential()
        V = Potential(series=V.series, a=0.02, p=1.0, width=1.0)
        N, P = wave_hamiltonian(1.0, eps, V, 32, 8, OMEGA)
        rep = verify_assumptions(N, P, V, eps, "wave", m=1.0)
        assert rep.tl_ok
        # the L3 reference must be the analytic limit: the exactly-Toeplitz
        # half-wave block gives zero against it
        N2, P2 = halfwave_hamiltonian(eps, V, 32, 8, OMEGA)
        rep2 = tl_seminorm(P2, 2 * 0.02)
        assert rep2.M3 <= 1e-15

    def test_halfwave_all_ok(self):
        eps = 1e-3
        V = single_cosine_potential()
        V = Potential(series=V.series, a=0.25, p=1.0, width=1.0)
        N, P = halfwave_hamiltonian(eps, V, 16, 8, OMEGA)
        rep = verify_assumptions(N, P, V, eps, "halfwave")
        assert rep.all_ok
        assert len(rep.rows()) == 5
