"""Seeded property suite runnable outside pytest.

Each check draws its own instances from a seeded generator, evaluates
one module invariant or estimate, and reports the worst observed metric
against its tolerance.  The registry keeps the checks enumerable for the
listing mode, and tolerances can be overridden (a tolerance forced to
zero is the canonical way to watch the harness fail honestly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .approxfn import ApproximationFunction, GammaQuery, log_gamma_ab, xi_schedule
from .flow import flow_map, transform_flow, transform_lie
from .hamrep import (
    NormalForm,
    QuadHam,
    hessian_matrix,
    matmul,
    poisson_bracket,
    reality_defect,
    tl_matnorm,
    tl_seminorm,
    truncate_fourier,
    vf_norm,
)
from .homological import residual, solve
from .randgen import draw_nonresonant, random_quadham, random_tlmatrix
from .smalldiv import ResonanceQuery, excluded_fraction, min_margin, russmann_check

__all__ = ["CheckResult", "CHECKS", "run_suite", "check_names"]

POWER = ApproximationFunction("power", alpha=0.5)


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: float  # worst observed value, compared against tolerance
    tolerance: float
    instances: int


def _result(name, metric, tol, n):
    return CheckResult(name=name, passed=metric <= tol, metric=float(metric),
                       tolerance=float(tol), instances=n)


# each check: f(rng, n_instances, tol) -> CheckResult


def check_delta_normalisation(rng, n, tol):
    fams = [POWER, ApproximationFunction("logdamped", alpha=2.0),
            ApproximationFunction("logpower", alpha=1.5), ApproximationFunction("constant")]
    worst = max(abs(float(af.delta(0.0)) - 1.0) for af in fams)
    return _result("delta_normalisation", worst, tol, len(fams))


def check_delta_monotone(rng, n, tol):
    fams = [POWER, ApproximationFunction("logdamped", alpha=2.0),
            ApproximationFunction("logpower", alpha=1.5)]
    grid = np.geomspace(1e-6, 1e9, 600)
    worst = 0.0
    for af in fams:
        ld = af.log_delta(grid)
        worst = max(worst, float(np.max(-np.diff(ld), initial=0.0)))
    return _result("delta_monotone", worst, tol, len(fams) * len(grid))


def check_gamma_lemma(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(1, 4))
        ell = int(rng.integers(0, 3))
        sigma = float(rng.uniform(0.02, 2.0))
        lhs = log_gamma_ab(POWER, GammaQuery(k, 3, sigma))
        rhs = ell * math.log(sigma) + log_gamma_ab(POWER, GammaQuery(k + ell, 3, sigma))
        worst = max(worst, (lhs - rhs) / max(abs(rhs), 1.0))
    return _result("gamma_lemma_inequality", worst, tol, n)


def check_xi_certificate(rng, n, tol):
    from .approxfn import find_feasible_T

    kappa = 4.0 / 3.0
    worst = -math.inf
    for sigma in (0.2, 0.35, 0.5):
        T = find_feasible_T(POWER, sigma, kappa)
        res = xi_schedule(POWER, sigma, kappa, T)
        kappa_nu = kappa ** -(np.arange(len(res.sigmas)) + 1.0)
        log_prod = sum(
            kn * log_gamma_ab(POWER, GammaQuery(2, 3, float(s)))
            for kn, s in zip(kappa_nu, res.sigmas)
        )
        worst = max(worst, log_prod - (res.log_xi_bound + math.log1p(1e-6)))
    return _result("xi_product_certificate", worst, tol, 3)


def check_exponential_sum(rng, n, tol):
    ks = np.arange(-10_000, 10_001)
    worst = 0.0
    for delta in (0.05, 0.1, 0.25, 0.5, 1.0):
        for _ in range(max(n // 5, 4)):
            i = int(rng.integers(-50, 51))
            j = int(rng.integers(-50, 51))
            s = float(np.sum(np.exp(-delta * (np.abs(i - ks) + np.abs(ks - j)))))
            worst = max(worst, s * delta / 4.0 - 1.0)
    return _result("exponential_sum_lemma", worst, tol, n)


def check_bracket_antisymmetry(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        R = random_quadham(rng, 1, 5, 2, 10, r=0.4)
        F = random_quadham(rng, 1, 5, 2, 10, r=0.4)
        D = poisson_bracket(R, F) + poisson_bracket(F, R)
        dmax = max((np.max(np.abs(b)) for b in D.coeffs.values()), default=0.0)
        worst = max(worst, dmax / max(vf_norm(R) * vf_norm(F), 1e-30))
    return _result("bracket_antisymmetry", worst, tol, n)


def check_jacobi_identity(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        args = dict(n=1, J=6, K_supp=2, K_cap=24, r=0.4)
        R, F, G = (random_quadham(rng, **args) for _ in range(3))
        cyc = (
            poisson_bracket(poisson_bracket(R, F), G)
            + poisson_bracket(poisson_bracket(F, G), R)
            + poisson_bracket(poisson_bracket(G, R), F)
        )
        worst = max(worst, vf_norm(cyc) / max(vf_norm(R) * vf_norm(F) * vf_norm(G), 1e-30))
    return _result("jacobi_identity", worst, tol, n)


def check_bracket_seminorm_bound(rng, n, tol):
    rho, delta = 0.6, 0.3
    worst = 0.0
    for _ in range(n):
        R = random_quadham(rng, 1, 8, 2, 16, r=0.3, decay_rho=rho)
        F = random_quadham(rng, 1, 8, 2, 16, r=0.3, decay_rho=rho)
        lhs = tl_seminorm(poisson_bracket(R, F), rho - delta).combined
        rhs = 4.0 / delta * tl_seminorm(R, rho).combined * tl_seminorm(F, rho).combined
        worst = max(worst, lhs / rhs - 1.0 if rhs > 0 else 0.0)
    return _result("bracket_seminorm_bound_C4", worst, tol, n)


def check_product_bound(rng, n, tol):
    rho, delta = 0.6, 0.3
    worst = 0.0
    for _ in range(n):
        A = random_tlmatrix(rng, 1, 8, 2, 16, r=0.3, rho=rho)
        B = random_tlmatrix(rng, 1, 8, 2, 16, r=0.3, rho=rho)
        lhs = tl_matnorm(matmul(A, B), rho - delta).combined
        rhs = 4.0 / delta * tl_matnorm(A, rho).combined * tl_matnorm(B, rho).combined
        worst = max(worst, lhs / rhs - 1.0)
    return _result("matrix_product_bound_C4", worst, tol, n)


def check_hessian_norm_identity(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        F = random_quadham(rng, 1, 6, 3, 8, r=0.4, decay_rho=0.3)
        lhs = tl_matnorm(hessian_matrix(F), 0.35).combined
        rhs = tl_seminorm(F, 0.35).combined
        worst = max(worst, abs(lhs - rhs) / max(rhs, 1e-30))
    return _result("hessian_norm_identity", worst, tol, n)


def check_fourier_remainder(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        P = random_quadham(rng, 1, 5, 12, 12, r=0.5)
        K = int(rng.integers(2, 10))
        res = truncate_fourier(P, K, P.r / 4.0)
        worst = max(worst, res.remainder_norm / res.bound - 1.0 if res.bound > 0 else 0.0)
    return _result("fourier_remainder_32", worst, tol, n)


def check_russmann(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        c = float(rng.uniform(0.5, 2.0))
        d = float(rng.uniform(-0.5, 0.5))
        eps = float(rng.uniform(0.01, 0.1))
        rep = russmann_check(lambda t: c * t + d, -2.0, 2.0, q=1, beta=c, eps=eps,
                             samples=20000)
        if not rep.precondition_ok:
            worst = max(worst, 1.0)
        worst = max(worst, rep.measured - (rep.bound + rep.slack))
    return _result("russmann_measure_bound", worst, tol, n)


def check_homological_exactness(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        N = draw_nonresonant(rng, 1, 8, 4, POWER, 1e-3)
        R = random_quadham(rng, 1, 8, 4, 8, r=0.4)
        sol = solve(N, R, POWER, 1e-3, 4)
        worst = max(worst, sol.residual_norm / max(vf_norm(R), 1e-30))
    return _result("homological_exactness", worst, tol, n)


def check_homological_zero_mean(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        N = draw_nonresonant(rng, 1, 6, 3, POWER, 1e-3)
        R = random_quadham(rng, 1, 6, 3, 8, r=0.4)
        sol = solve(N, R, POWER, 1e-3, 3)
        k0 = (0,)
        if k0 in sol.F.coeffs:
            worst = max(worst, float(np.max(np.abs(np.diagonal(sol.F.coeffs[k0][1])))))
    return _result("homological_zero_mean", worst, tol, n)


def check_flow_symplectic(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        F = random_quadham(rng, 1, 5, 2, 6, r=0.4, scale=0.1)
        smap = flow_map(F)
        worst = max(worst, smap.symplectic_defect)
    return _result("flow_symplecticity", worst, tol, n)


def check_transform_equivalence(rng, n, tol):
    worst = 0.0
    N = NormalForm(np.array([1.3]), np.zeros(4))
    for _ in range(n):
        P = random_quadham(rng, 1, 4, 2, 16, r=0.4, scale=2e-3)
        F = random_quadham(rng, 1, 4, 2, 16, r=0.4, scale=2e-3)
        smap = flow_map(F)
        via_flow = transform_flow(N, P, smap)
        via_lie = transform_lie(N, P, F, M_max=24, tol=1e-15)
        diff = vf_norm(via_flow - via_lie.P_new)
        budget = max(
            10.0 * (1e-12 + via_lie.tail_bound + via_flow.tail_norm), 1e-11
        )
        worst = max(worst, diff / budget)
    return _result("transform_equivalence", worst, tol, n)


def check_canonical_bound(rng, n, tol):
    rho, delta = 0.5, 0.1
    zeroN = NormalForm(np.zeros(1), np.zeros(5), A0=1.0)
    worst = 0.0
    for _ in range(n):
        R = random_quadham(rng, 1, 5, 2, 12, r=0.4, scale=1e-3, decay_rho=rho)
        F = random_quadham(rng, 1, 5, 2, 12, r=0.4, scale=1e-3, decay_rho=rho)
        smap = flow_map(F)
        RF = transform_flow(zeroN, R, smap)
        lhs = tl_seminorm(RF, rho - 3 * delta).combined
        rhs = 16.0 / delta**2 * tl_seminorm(R, rho).combined
        worst = max(worst, lhs / rhs - 1.0)
    return _result("canonical_transform_bound_C16", worst, tol, n)


def check_jacobian_tl_bound(rng, n, tol):
    from .hamrep import TLMatrix

    rho, delta = 0.5, 0.1
    worst = 0.0
    for _ in range(n):
        F = random_quadham(rng, 1, 5, 2, 10, r=0.4, scale=1e-3, decay_rho=rho)
        smap = flow_map(F)
        keys, stack = smap.fourier_modes()
        coeffs = {k: m.copy() for k, m in zip(keys, stack)}
        k0 = (0,)
        coeffs[k0] = coeffs.get(k0, np.zeros((10, 10))) - np.eye(10)
        Bmat = TLMatrix(n=1, J=5, K_cap=smap.K_cap, r=F.r, coeffs=coeffs)
        lhs = tl_matnorm(Bmat, rho - delta).combined
        rhs = 4.0 * tl_seminorm(F, rho).combined
        worst = max(worst, lhs / rhs - 1.0 if rhs > 0 else 0.0)
    return _result("flow_jacobian_tl_bound", worst, tol, n)


def check_reality_preservation(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        R = random_quadham(rng, 1, 5, 2, 10, r=0.4)
        F = random_quadham(rng, 1, 5, 2, 10, r=0.4)
        worst = max(worst, reality_defect(poisson_bracket(R, F)))
        worst = max(worst, reality_defect(truncate_fourier(R, 2, 0.05).truncated))
    return _result("reality_preservation", worst, tol, n)


def check_margin_relabel(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        N = draw_nonresonant(rng, 1, 6, 4, POWER, 1e-4)
        q = ResonanceQuery(af=POWER, gamma=1e-4, K=4, J=6)
        m1 = min_margin(N.omega, N, q)
        m2 = min_margin(-N.omega, N, q)
        worst = max(worst, abs(m1.worst - m2.worst) / max(m1.worst, 1e-30))
    return _result("margin_relabel_invariance", worst, tol, n)


def check_excluded_monotone(rng, n, tol):
    def builder(omega):
        return NormalForm(np.atleast_1d(omega), np.zeros(6), A0=1.0)

    fractions = []
    for g in (0.002, 0.01, 0.05):
        q = ResonanceQuery(af=ApproximationFunction("constant"), gamma=g, K=4, J=6)
        fractions.append(excluded_fraction(q, builder, 4000))
    worst = max(
        max(a - b for a, b in zip(fractions, fractions[1:])), 0.0
    )
    return _result("excluded_fraction_monotone", worst, tol, 3)


CHECKS = [
    ("delta_normalisation", check_delta_normalisation, 0.0, 1),
    ("delta_monotone", check_delta_monotone, 1e-12, 1),
    ("gamma_lemma_inequality", check_gamma_lemma, 1e-9, 40),
    ("xi_product_certificate", check_xi_certificate, 0.0, 3),
    ("exponential_sum_lemma", check_exponential_sum, 0.0, 20),
    ("bracket_antisymmetry", check_bracket_antisymmetry, 1e-13, 10),
    ("jacobi_identity", check_jacobi_identity, 1e-10, 5),
    ("bracket_seminorm_bound_C4", check_bracket_seminorm_bound, 0.0, 10),
    ("matrix_product_bound_C4", check_product_bound, 0.0, 10),
    ("hessian_norm_identity", check_hessian_norm_identity, 1e-12, 10),
    ("fourier_remainder_32", check_fourier_remainder, 0.0, 10),
    ("russmann_measure_bound", check_russmann, 0.0, 10),
    ("homological_exactness", check_homological_exactness, 1e-12, 10),
    ("homological_zero_mean", check_homological_zero_mean, 0.0, 10),
    ("flow_symplecticity", check_flow_symplectic, 1e-10, 5),
    ("transform_equivalence", check_transform_equivalence, 1.0, 5),
    ("canonical_transform_bound_C16", check_canonical_bound, 0.0, 5),
    ("flow_jacobian_tl_bound", check_jacobian_tl_bound, 0.0, 5),
    ("reality_preservation", check_reality_preservation, 1e-12, 10),
    ("margin_relabel_invariance", check_margin_relabel, 1e-12, 5),
    ("excluded_fraction_monotone", check_excluded_monotone, 0.0, 3),
]


def check_names():
    return [name for name, *_ in CHECKS]


def run_suite(
    seed: int,
    tolerances: Optional[dict] = None,
    instance_scale: float = 1.0,
    only: Optional[list] = None,
):
    """Run every registered check with a deterministic per-check stream."""
    import zlib

    tolerances = tolerances or {}
    results = []
    for name, fn, tol, n in CHECKS:
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        tol_eff = float(tolerances.get(name, tol))
        n_eff = max(1, int(round(n * instance_scale)))
        results.append(fn(rng, n_eff, tol_eff))
    return results
