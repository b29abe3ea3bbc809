import math

import numpy as np
import pytest

from kamreduce.hamrep import (
    QuadHam,
    hessian_matrix,
    iteration_norm,
    load_quadham,
    matmul,
    omega_dtheta,
    poisson_bracket,
    reality_defect,
    save_quadham,
    series_norm,
    tl_identity,
    tl_matnorm,
    tl_seminorm,
    truncate_fourier,
    vf_norm,
    write_norm_report,
)
from kamreduce.randgen import random_quadham, random_tlmatrix


def single_coeff(n, J, k, which, i, j, value, K_cap=8, r=0.5, s=1.0, a=0.0, p=0.0):
    """QuadHam equal to value * (monomial at modes i, j), 1-based indices."""
    block = np.zeros((3, J, J), dtype=complex)
    if which == 1 or i == j:
        block[which, i - 1, j - 1] = value
    else:
        block[which, i - 1, j - 1] = block[which, j - 1, i - 1] = value / 2.0
    return QuadHam(n=n, J=J, K_cap=K_cap, r=r, s=s, a=a, p=p, coeffs={tuple(k): block})


class TestSeriesNorm:
    def test_constant_series(self):
        assert series_norm({(0,): 3.0 - 4.0j}, 0.7) == pytest.approx(5.0)

    def test_single_mode_weight(self):
        # |k|_1 = 3 at r = 0.5 weights by e^1.5
        assert series_norm({(2, -1): 1.0}, 0.5) == pytest.approx(
            math.exp(1.5), rel=1e-12
        )

    def test_l1_additivity_on_disjoint_support(self):
        s1, s2 = {(1,): 2.0}, {(3,): 1.5}
        r = 0.3
        assert series_norm({**s1, **s2}, r) == pytest.approx(
            series_norm(s1, r) + series_norm(s2, r)
        )


class TestVfNorm:
    def test_zero(self):
        P = QuadHam.zero(1, 4, 4, 0.5, 1.0, 0.0, 0.0)
        assert vf_norm(P) == 0.0

    def test_single_diagonal_h11(self):
        # P = z1 zbar1: both d/dz1 and d/dzbar1 contribute 1, no theta part
        P = single_coeff(1, 3, (0,), 1, 1, 1, 1.0)
        assert vf_norm(P) == pytest.approx(2.0)

    def test_single_offdiagonal_theta_mode(self):
        # hand evaluation of the definition on a one-term Hamiltonian:
        # z-part 2 e^(0.1), theta-part |k|_1 e^(0.1) with |k|_1 = 1
        P = single_coeff(1, 2, (1,), 1, 1, 2, 1.0, r=0.1)
        assert vf_norm(P) == pytest.approx(3.0 * math.exp(0.1), rel=1e-12)

    def test_weighted_column_sums(self, rng):
        # independent dense implementation of the definition
        P = random_quadham(rng, 1, 5, 2, 8, r=0.4, a=0.3, p=1.0)
        w = P.weights()
        norms = P.entry_norms()
        mz = 2 * norms[0] + norms[1].T
        mzb = norms[1] + 2 * norms[2]
        expected_z = max((w @ mz / w).max(), 0) + max((w @ mzb / w).max(), 0)
        th = 0.0
        for h in range(1):
            d = P.dtheta_entry_norms(h)
            th += (d[0] / np.outer(w, w)).max() + (d[1] / np.outer(w, w)).max() + (
                d[2] / np.outer(w, w)
            ).max()
        assert vf_norm(P) == pytest.approx(expected_z + th, rel=1e-12)

    def test_scale_homogeneity(self, rng):
        P = random_quadham(rng, 1, 4, 2, 8, r=0.4)
        assert vf_norm(P * 2.5) == pytest.approx(2.5 * vf_norm(P), rel=1e-12)


class TestTLSeminorm:
    def test_zero(self):
        P = QuadHam.zero(1, 6, 4, 0.5, 1.0, 0.0, 0.0)
        rep = tl_seminorm(P, 0.5)
        assert rep.M1 == 0.0 and rep.M3 == 0.0 and rep.combined == 0.0

    def test_constant_band_is_exactly_toeplitz(self):
        # H11 on |i-j| = 1 with constant theta-series (1 + cos)/2 per entry
        J, rho = 8, 0.5
        blocks = {}
        for k, c in {(0,): 0.5, (1,): 0.25, (-1,): 0.25}.items():
            b = np.zeros((3, J, J), dtype=complex)
            b[1] = np.diag(np.full(J - 1, c), 1) + np.diag(np.full(J - 1, c), -1)
            blocks[k] = b
        P = QuadHam(n=1, J=J, K_cap=4, r=0.5, s=1.0, a=0.0, p=0.0, coeffs=blocks)
        rep = tl_seminorm(P, rho)
        theta_weight = 0.5 + 2 * 0.25 * math.exp(0.5)  # series norm of the entry
        assert rep.M1 == pytest.approx(theta_weight * math.exp(rho), rel=1e-12)
        assert rep.M3 == 0.0  # constant along the diagonal

    def test_m1_from_dominating_pair_brute_force(self, rng):
        J, rho = 10, 0.4
        b = np.zeros((3, J, J), dtype=complex)
        i = np.arange(1, J + 1)
        mags = np.exp(-2 * rho * np.abs(i[:, None] - i[None, :]))
        phases = np.exp(2j * np.pi * rng.random((J, J)))
        b[1] = mags * phases
        P = QuadHam(n=1, J=J, K_cap=2, r=0.3, s=1.0, a=0.0, p=0.0, coeffs={(0,): b})
        rep = tl_seminorm(P, rho)
        brute = max(
            abs(b[1][ii, jj]) * math.exp(rho * abs(ii - jj))
            for ii in range(J)
            for jj in range(J)
        )
        assert rep.M1 == pytest.approx(brute, rel=1e-12)
        assert rep.M1 == pytest.approx(1.0, rel=1e-12)  # diagonal entries dominate

    def test_analytic_limits_override_empirical_reference(self):
        # entries 1/2 + 1/i along the first superdiagonal, limit 1/2
        J, rho = 12, 0.3
        b = np.zeros((3, J, J), dtype=complex)
        for i in range(1, J):
            b[1][i - 1, i] = 0.5 + 1.0 / i
        P = QuadHam(
            n=1, J=J, K_cap=2, r=0.2, s=1.0, a=0.0, p=0.0, coeffs={(0,): b},
            h11_limits={-1: {(0,): 0.5}},
        )
        rep = tl_seminorm(P, rho)
        # per-entry constant: |1/i| * depth(i) * e^(rho) = e^rho exactly
        assert rep.M3 == pytest.approx(math.exp(rho), rel=1e-12)

    def test_plus_block_shift_scaling(self):
        J, rho = 6, 0.4
        b = np.zeros((3, J, J), dtype=complex)
        b[0][4, 0] = b[0][0, 4] = 0.5  # S20 entry at (5,1): i+j = 6, shift 2
        P = QuadHam(n=1, J=J, K_cap=2, r=0.2, s=1.0, a=0.0, p=0.0, coeffs={(0,): b})
        rep = tl_seminorm(P, rho)
        assert rep.M1 == pytest.approx(math.exp(rho * 6), rel=1e-12)
        assert rep.M3 == pytest.approx(2.0 * math.exp(rho * 6), rel=1e-12)


class TestPoissonBracket:
    def test_self_bracket_vanishes(self, rng):
        P = random_quadham(rng, 1, 5, 2, 8, r=0.4)
        PP = poisson_bracket(P, P)
        assert all(np.max(np.abs(b)) <= 1e-13 for b in PP.coeffs.values()) or not PP.coeffs

    def test_two_mode_hand_computation(self):
        # R = z1 zbar2, F = z2 zbar1: {R, F} = i (z2 zbar2 - z1 zbar1)
        R = single_coeff(1, 2, (0,), 1, 1, 2, 1.0)
        F = single_coeff(1, 2, (0,), 1, 2, 1, 1.0)
        B = poisson_bracket(R, F)
        expected = np.diag([-1j, 1j])
        np.testing.assert_allclose(B.coeffs[(0,)][1], expected, atol=1e-15)
        assert np.max(np.abs(B.coeffs[(0,)][0])) == 0.0

    def test_plus_block_hand_computation(self):
        # R = z1^2, F = zbar1^2: {R, F} = 4i z1 zbar1
        R = single_coeff(1, 1, (0,), 0, 1, 1, 1.0)
        F = single_coeff(1, 1, (0,), 2, 1, 1, 1.0)
        B = poisson_bracket(R, F)
        assert B.coeffs[(0,)][1][0, 0] == pytest.approx(4j)

    def test_antisymmetry(self, rng):
        R = random_quadham(rng, 1, 4, 2, 10, r=0.4)
        F = random_quadham(rng, 1, 4, 2, 10, r=0.4)
        D = poisson_bracket(R, F) + poisson_bracket(F, R)
        worst = max((np.max(np.abs(b)) for b in D.coeffs.values()), default=0.0)
        assert worst <= 1e-13 * max(vf_norm(R) * vf_norm(F), 1.0)

    def test_jacobi_identity(self, rng):
        args = dict(n=1, J=6, K_supp=2, K_cap=24, r=0.4)
        R = random_quadham(rng, **args)
        F = random_quadham(rng, **args)
        G = random_quadham(rng, **args)
        cyc = (
            poisson_bracket(poisson_bracket(R, F), G)
            + poisson_bracket(poisson_bracket(F, G), R)
            + poisson_bracket(poisson_bracket(G, R), F)
        )
        prod = vf_norm(R) * vf_norm(F) * vf_norm(G)
        assert vf_norm(cyc) <= 1e-10 * prod

    def test_support_convolution(self):
        R = single_coeff(1, 2, (2,), 1, 1, 2, 1.0)
        F = single_coeff(1, 2, (1,), 1, 2, 1, 1.0)
        B = poisson_bracket(R, F)
        assert set(B.coeffs) <= {(3,)}

    def test_linearity(self, rng):
        args = dict(n=1, J=4, K_supp=1, K_cap=8, r=0.4)
        R1 = random_quadham(rng, **args)
        R2 = random_quadham(rng, **args)
        F = random_quadham(rng, **args)
        lhs = poisson_bracket(R1 * 2.0 + R2 * (-0.5), F)
        rhs = poisson_bracket(R1, F) * 2.0 + poisson_bracket(R2, F) * (-0.5)
        D = lhs - rhs
        worst = max((np.max(np.abs(b)) for b in D.coeffs.values()), default=0.0)
        assert worst <= 1e-13 * max(1.0, vf_norm(F))

    def test_reality_preserved(self, rng):
        R = random_quadham(rng, 1, 4, 2, 10, r=0.4)
        F = random_quadham(rng, 1, 4, 2, 10, r=0.4)
        assert reality_defect(R) <= 1e-14
        assert reality_defect(poisson_bracket(R, F)) <= 1e-12

    def test_overflow_goes_to_tail(self):
        R = single_coeff(1, 2, (2,), 1, 1, 2, 1.0, K_cap=3)
        F = single_coeff(1, 2, (2,), 1, 2, 1, 1.0, K_cap=3)
        B = poisson_bracket(R, F)  # support at k = 4 > K_cap
        assert not B.coeffs
        assert B.tail_norm > 0.0


class TestTruncate:
    def test_mean_only_no_remainder(self):
        P = single_coeff(1, 3, (0,), 1, 1, 1, 1.0)
        res = truncate_fourier(P, 2, 0.1)
        assert res.remainder_norm == 0.0 and res.within_bound

    def test_support_split(self):
        P = single_coeff(1, 3, (5,), 1, 1, 1, 1.0, K_cap=8)
        res = truncate_fourier(P, 3, 0.1)
        assert not res.truncated.coeffs
        assert res.remainder_norm > 0.0

    def test_remainder_bound_random(self, rng):
        P = random_quadham(rng, 1, 5, 12, 12, r=0.5)
        res = truncate_fourier(P, 8, P.r / 4)
        assert res.remainder_norm <= res.bound
        assert res.within_bound

    def test_reality_preserved(self, rng):
        P = random_quadham(rng, 1, 5, 6, 8, r=0.5)
        res = truncate_fourier(P, 3, 0.1)
        assert reality_defect(res.truncated) <= 1e-14

    def test_preconditions(self):
        P = single_coeff(1, 2, (0,), 1, 1, 1, 1.0)
        with pytest.raises(ValueError):
            truncate_fourier(P, 0, 0.1)
        with pytest.raises(ValueError):
            truncate_fourier(P, 2, 0.3)  # 2 sigma >= r


class TestHessianMatrix:
    def test_zero(self):
        A = hessian_matrix(QuadHam.zero(1, 3, 4, 0.5, 1.0, 0.0, 0.0))
        assert not A.coeffs

    def test_single_mode_block_layout(self):
        F = single_coeff(1, 2, (0,), 1, 1, 1, 2.0)
        A = hessian_matrix(F)
        m = A.coeffs[(0,)]
        # block (1,1): [[H11_11, 0], [0, -H11_11]]
        np.testing.assert_allclose(m[:2, :2], np.diag([2.0, -2.0]))
        assert tl_matnorm(A, 0.5).combined == pytest.approx(
            tl_seminorm(F, 0.5).combined
        )

    def test_norm_identity_random(self, rng):
        for _ in range(5):
            F = random_quadham(rng, 1, 6, 3, 8, r=0.4, decay_rho=0.3)
            lhs = tl_matnorm(hessian_matrix(F), 0.35)
            rhs = tl_seminorm(F, 0.35)
            assert lhs.M1 == pytest.approx(rhs.M1, rel=1e-12)
            assert lhs.M3 == pytest.approx(rhs.M3, rel=1e-12)

    def test_norm_identity_with_limits(self):
        J = 8
        b = np.zeros((3, J, J), dtype=complex)
        for i in range(1, J):
            b[1][i - 1, i] = 0.5 + 1.0 / i
            b[1][i, i - 1] = 0.5 + 1.0 / i
        F = QuadHam(
            n=1, J=J, K_cap=2, r=0.2, s=1.0, a=0.0, p=0.0, coeffs={(0,): b},
            h11_limits={-1: {(0,): 0.5}, 1: {(0,): 0.5}},
        )
        lhs = tl_matnorm(hessian_matrix(F), 0.3)
        rhs = tl_seminorm(F, 0.3)
        assert lhs.combined == pytest.approx(rhs.combined, rel=1e-12)


class TestMatmul:
    def test_identity(self, rng):
        A = random_tlmatrix(rng, 1, 4, 2, 8, r=0.4, rho=0.5)
        I = tl_identity(1, 4, 8, 0.4)
        assert tl_matnorm(I, 0.5).combined == pytest.approx(1.0)
        prod = matmul(I, A)
        for k in A.coeffs:
            np.testing.assert_allclose(prod.coeffs[k], A.coeffs[k], atol=1e-15)

    def test_single_block_selection(self):
        J = 3
        m1 = np.zeros((2 * J, 2 * J), dtype=complex)
        m2 = np.zeros((2 * J, 2 * J), dtype=complex)
        m1[0, 2] = 2.0  # block (1,2) component (0,0)
        m2[2, 4] = 3.0  # block (2,3) component (0,0)
        from kamreduce.hamrep import TLMatrix

        A = TLMatrix(n=1, J=J, K_cap=4, r=0.3, coeffs={(1,): m1})
        B = TLMatrix(n=1, J=J, K_cap=4, r=0.3, coeffs={(2,): m2})
        C = matmul(A, B)
        assert set(C.coeffs) == {(3,)}
        assert C.coeffs[(3,)][0, 4] == pytest.approx(6.0)

    def test_product_bound_smoke(self, rng):
        rho, delta = 0.6, 0.3
        for _ in range(5):
            A = random_tlmatrix(rng, 1, 8, 2, 16, r=0.3, rho=rho)
            B = random_tlmatrix(rng, 1, 8, 2, 16, r=0.3, rho=rho)
            lhs = tl_matnorm(matmul(A, B), rho - delta).combined
            rhs = 4.0 / delta * tl_matnorm(A, rho).combined * tl_matnorm(B, rho).combined
            assert lhs <= rhs


class TestMisc:
    def test_omega_dtheta(self):
        P = single_coeff(2, 2, (1, -2), 1, 1, 2, 1.0)
        D = omega_dtheta(P, np.array([0.3, 0.7]))
        expected = 1j * (0.3 - 1.4)
        assert D.coeffs[(1, -2)][1][0, 1] == pytest.approx(expected)

    def test_iteration_norm_combines(self, rng):
        P = random_quadham(rng, 1, 4, 2, 8, r=0.4)
        assert iteration_norm(P, 0.5) == pytest.approx(
            vf_norm(P) + tl_seminorm(P, 0.5).combined
        )

    def test_serialization_round_trip(self, rng, tmp_path):
        P = random_quadham(rng, 2, 4, 2, 6, r=0.4, a=0.1, p=1.0)
        path = str(tmp_path / "ham.json")
        save_quadham(P, path)
        Q = load_quadham(path)
        assert (Q.n, Q.J, Q.K_cap, Q.r, Q.s, Q.a, Q.p) == (
            P.n, P.J, P.K_cap, P.r, P.s, P.a, P.p,
        )
        for k in P.coeffs:
            np.testing.assert_allclose(Q.coeffs[k], P.coeffs[k], atol=1e-300)

    def test_norm_report_csv(self, rng, tmp_path):
        P = random_quadham(rng, 1, 4, 2, 8, r=0.4)
        path = str(tmp_path / "norms.csv")
        write_norm_report(path, [("P", P), ("2P", P * 2.0)], rho=0.5)
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "name,vf_norm,tl_M1,tl_M3,tail_norm"
        assert len(lines) == 3
        v1 = float(lines[1].split(",")[1])
        v2 = float(lines[2].split(",")[1])
        assert v2 == pytest.approx(2 * v1, rel=1e-12)

    def test_symmetrisation_on_construction(self):
        b = np.zeros((3, 2, 2), dtype=complex)
        b[0][0, 1] = 1.0  # not symmetric as given
        P = QuadHam(n=1, J=2, K_cap=2, r=0.3, s=1.0, a=0.0, p=0.0, coeffs={(0,): b})
        np.testing.assert_allclose(P.coeffs[(0,)][0], [[0, 0.5], [0.5, 0]])

    def test_tail_norm_grows_only(self, rng):
        P = random_quadham(rng, 1, 4, 2, 8, r=0.4)
        assert P.tail_norm == 0.0
        assert (P + P).tail_norm == 0.0
