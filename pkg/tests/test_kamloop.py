import math

import numpy as np
import pytest

from kamreduce.approxfn import ApproximationFunction
from kamreduce.flow import flow_map
from kamreduce.hamrep import QuadHam, iteration_norm, vf_norm
from kamreduce.homological import DivisorViolation
from kamreduce.kamloop import (
    build_schedule,
    compose_transform,
    kam_step,
    reduce,
    write_convergence_csv,
)
from kamreduce.models import Potential, halfwave_hamiltonian, single_cosine_potential
from kamreduce.randgen import random_quadham

POWER = ApproximationFunction("power", alpha=0.5)
GOLDEN = np.array([2.0 * math.pi * (math.sqrt(5.0) - 1.0) / 2.0])


def desk_setup(eps=1e-3, J=32, K_cap=16, a=0.25):
    V = single_cosine_potential(1.0)
    V = Potential(series=V.series, a=a, p=1.0, width=2.0)
    N, P = halfwave_hamiltonian(eps, V, J=J, K_cap=K_cap, omega=GOLDEN)
    sched = build_schedule(
        POWER, gamma0=0.05, rho0=2 * a, r0=P.r, s0=1.0,
        eps0=iteration_norm(P, 2 * a), nu_max=6, k_start=8,
    )
    return N, P, sched


class TestSchedule:
    def test_gamma_sequence(self):
        _, _, sched = desk_setup()
        sched2 = build_schedule(
            POWER, gamma0=0.1, rho0=0.5, r0=1.0, s0=1.0, eps0=1e-3, nu_max=3, k_start=8
        )
        np.testing.assert_allclose(sched2.gamma, [0.1, 0.075, 0.0625, 0.05625])

    def test_rho_and_r_sequences(self):
        sched = build_schedule(
            POWER, gamma0=0.1, rho0=0.8, r0=1.0, s0=2.0, eps0=1e-3, nu_max=5, k_start=4
        )
        # delta-sum: rho_inf = rho0/2, so every level stays above it
        assert np.all(sched.rho > 0.4 - 1e-12)
        np.testing.assert_allclose(np.diff(sched.rho), -4.0 * sched.delta[:-1])
        np.testing.assert_allclose(np.diff(sched.r), -3.0 * sched.sigma[:-1])
        assert np.all(sched.r > 1.0 - 3.0 * sched.sigma_total - 1e-12)
        np.testing.assert_allclose(sched.s, 2.0 * 0.25 ** np.arange(sched.levels))

    def test_eps_recursion(self):
        sched = build_schedule(
            POWER, gamma0=0.1, rho0=0.5, r0=1.0, s0=1.0, eps0=1e-3, nu_max=3, k_start=8
        )
        # eps_(nu+1) = Gamma_nu eps_nu^(4/3) in log space
        for nu in range(sched.levels - 1):
            expected = sched.log_Gamma[nu] + (4.0 / 3.0) * sched.log_eps[nu]
            assert sched.log_eps[nu + 1] == pytest.approx(expected)

    def test_eps_arithmetic_example(self):
        # Gamma = 10, eps0 = 1e-3: eps1 = 10 * (1e-3)^(4/3) = 1e-3
        assert 10.0 * (1e-3) ** (4.0 / 3.0) == pytest.approx(1e-3, rel=1e-12)

    def test_K_override(self):
        sched = build_schedule(
            POWER, gamma0=0.1, rho0=0.5, r0=1.0, s0=1.0, eps0=1e-3,
            nu_max=3, K_list=[8, 10, 12],
        )
        assert list(sched.K_effective[:3]) == [8, 10, 12]
        assert sched.K_effective[-1] == 12  # last entry repeats

    def test_smallness_gate_reported(self):
        sched = build_schedule(
            POWER, gamma0=0.05, rho0=0.5, r0=1.0, s0=1.0, eps0=1e-3, nu_max=3, k_start=8
        )
        assert not sched.smallness_gate["passed"]  # desk scale sits above the gate
        assert set(sched.smallness_gate["terms"]) == {
            "gamma_quarter_sqrt_delta1", "cstar_gamma_2pow5",
            "delta0_pow12", "gamma_delta0_pow_9_2",
        }
        assert not sched.contraction_certified

    def test_manifest_round_trip(self):
        sched = build_schedule(
            POWER, gamma0=0.1, rho0=0.5, r0=1.0, s0=1.0, eps0=1e-3, nu_max=2, k_start=8
        )
        d = sched.to_dict()
        assert d["af"] == {"family": "power", "alpha": 0.5}
        assert len(d["sigma"]) == sched.levels


class TestKamStep:
    def test_zero_perturbation_identity_step(self):
        N, P, sched = desk_setup()
        P0 = P.zero_like()
        N1, P1, smap, rep = kam_step(N, P0, sched, 0)
        assert rep.post_total == 0.0
        assert np.max(np.abs(N1.omega_breve - N.omega_breve)) == 0.0
        assert smap.symplectic_defect <= 1e-12

    def test_diagonal_perturbation_absorbed_first_order(self):
        # P with only k=0 diagonal entries: N_hat takes all of it at first order
        N, P, sched = desk_setup()
        diag = P.zero_like()
        block = np.zeros((3, P.J, P.J), dtype=complex)
        block[1] = np.diag(np.linspace(1e-4, 3e-4, P.J))
        diag.coeffs = {(0,): block}
        N1, P1, smap, rep = kam_step(N, diag, sched, 0)
        assert rep.omega_update == pytest.approx(3e-4)
        assert rep.post_total <= 1e-8  # second order (and grid floor)

    def test_resonant_frequency_aborts(self):
        N, P, sched = desk_setup()
        from kamreduce.hamrep import NormalForm

        breve = N.omega_breve.copy()
        breve[2] = -1.25  # Omega_3 = 1.75: exact minus resonance at k = 1
        Nres = NormalForm(np.array([0.75]), breve, A0=2.0)
        with pytest.raises(DivisorViolation):
            kam_step(Nres, P, sched, 0)

    def test_contraction_bound_vs_schedule(self):
        N, P, sched = desk_setup()
        N1, P1, smap, rep = kam_step(N, P, sched, 0)
        # the certified worst-case factor dominates the observed contraction
        log_ratio = math.log(rep.post_total) - (4.0 / 3.0) * math.log(rep.pre_total)
        assert log_ratio <= sched.log_Gamma[0]

    def test_near_identity(self):
        N, P, sched = desk_setup()
        N1, P1, smap, rep = kam_step(N, P, sched, 0)
        assert rep.phi_dev <= rep.pre_total ** (5.0 / 6.0)


class TestReduce:
    def test_zero_perturbation(self):
        N, P, sched = desk_setup()
        res = reduce(N, P.zero_like(), sched, nu_max=4)
        assert res.converged
        assert not res.reports
        np.testing.assert_array_equal(res.N_inf.omega_breve, N.omega_breve)

    def test_desk_halfwave_contraction(self):
        N, P, sched = desk_setup()
        res = reduce(N, P, sched, nu_max=4, stop_tol=1e-12)
        assert res.converged
        assert res.final_norm <= 1e-9
        ratios = res.contraction_ratios()
        assert all(r >= 1.2 for r in ratios)
        # normal-form drift dominated by the step sizes
        sizes = [res.reports[0].pre_total] + [r.post_total for r in res.reports]
        drift = sum(r.omega_update for r in res.reports)
        assert drift <= sum(sizes)
        # gamma budget: every level uses at least gamma0/2
        assert np.all(sched.gamma >= 0.05 / 2.0)

    def test_convergence_csv(self, tmp_path):
        N, P, sched = desk_setup()
        res = reduce(N, P, sched, nu_max=2)
        path = str(tmp_path / "conv.csv")
        write_convergence_csv(path, res.reports)
        lines = open(path).read().strip().split("\n")
        assert lines[0].startswith("nu,P_vf_norm,P_tl,K_nu,worst_margin")
        assert len(lines) == len(res.reports) + 1


class TestCompose:
    def test_single_element(self, rng):
        F = random_quadham(rng, 1, 4, 2, 4, r=0.4, scale=0.02)
        smap = flow_map(F, G=9)
        comp = compose_transform([smap])
        np.testing.assert_allclose(comp.L, smap.L, atol=1e-14)
        np.testing.assert_allclose(comp.M, smap.M, atol=1e-14)

    def test_inverse_flow_gives_identity(self, rng):
        F = random_quadham(rng, 1, 4, 2, 4, r=0.4, scale=0.02)
        fw = flow_map(F, G=9)
        bw = flow_map(F * (-1.0), G=9)
        comp = compose_transform([fw, bw])
        for Lg in comp.L:
            assert np.max(np.abs(Lg - np.eye(8))) <= 1e-10
        assert np.max(np.abs(comp.M)) <= 1e-10

    def test_composition_symplectic(self, rng):
        maps = []
        for _ in range(3):
            F = random_quadham(rng, 1, 4, 2, 4, r=0.4, scale=0.05)
            maps.append(flow_map(F, G=9))
        comp = compose_transform(maps)
        assert comp.symplectic_defect <= 1e-9

    def test_action_pullback_against_direct_composition(self, rng):
        # compare I-shift of the composition with the algebraic pullback
        F1 = random_quadham(rng, 1, 3, 1, 2, r=0.4, scale=0.03)
        F2 = random_quadham(rng, 1, 3, 1, 2, r=0.4, scale=0.03)
        m1, m2 = flow_map(F1, G=5), flow_map(F2, G=5)
        comp = compose_transform([m1, m2])
        for g in range(5):
            expected = m2.M[0, g] + m2.L[g].T @ m1.M[0, g] @ m2.L[g]
            np.testing.assert_allclose(comp.M[0, g], expected, atol=1e-12)

    def test_grid_mismatch_rejected(self, rng):
        F = random_quadham(rng, 1, 4, 2, 4, r=0.4, scale=0.02)
        with pytest.raises(ValueError):
            compose_transform([flow_map(F, G=9), flow_map(F, G=13)])
