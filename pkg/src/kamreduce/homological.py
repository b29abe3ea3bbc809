"""Solver for the linearised conjugacy (homological) equation.

Given a normal form N with frequencies (omega, Omega_j) and a truncated
quadratic perturbation R, the generator F and normal-form correction
N_hat solve {N, F} + R = N_hat.  Fourier coefficientwise the solution is
explicit, one division per coefficient:

    F20_kij = R20_kij / (i (k.omega + Omega_i + Omega_j))
    F11_kij = (R11_kij - [R11_jj] at k = 0, i = j) / (i (k.omega + Omega_i - Omega_j))
    F02_kij = R02_kij / (i (k.omega - Omega_i - Omega_j))

with F11_0jj = 0, and N_hat the theta-mean of the z-zbar diagonal.  The
solution has zero theta-mean on its diagonal and is unique with that
normalisation.

Every touched divisor is screened against gamma/Delta(|k|) first; a dip
below the threshold raises DivisorViolation, which in fixed-frequency
runs aborts the step and in measure sweeps marks the sample excluded.
Dot products k.omega use compensated summation since divisor
cancellation is the dominant error source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .approxfn import ApproximationFunction, GammaQuery, gamma_ab
from .hamrep import NormalForm, QuadHam, tl_seminorm, vf_norm

__all__ = [
    "DivisorViolation",
    "HomologicalSolution",
    "EstimateReport",
    "solve",
    "residual",
    "verify_estimate",
    "write_divisor_csv",
]


class DivisorViolation(ArithmeticError):
    """A small divisor fell below gamma/Delta(|k|): the frequency is resonant."""

    def __init__(self, k, i, j, value, threshold, family):
        self.k, self.i, self.j = k, i, j
        self.value, self.threshold, self.family = value, threshold, family
        super().__init__(
            f"divisor {value:.6e} below threshold {threshold:.6e} at "
            f"k={k}, i={i}, j={j} ({family})"
        )


@dataclass
class HomologicalSolution:
    F: QuadHam
    N_hat_diag: np.ndarray  # real theta-means, the normal-form corrections
    residual_norm: float
    worst_divisor: float  # min |divisor| Delta(|k|)/gamma over touched entries
    divisor_records: list = field(repr=False, default_factory=list)


def _kdot(k, omega) -> float:
    return math.fsum(ki * wi for ki, wi in zip(k, omega))


def _touched_minus_mask(J: int, k_is_zero: bool) -> np.ndarray:
    mask = np.ones((J, J), dtype=bool)
    if k_is_zero:
        np.fill_diagonal(mask, False)
    return mask


def solve(
    N: NormalForm,
    R: QuadHam,
    af: ApproximationFunction,
    gamma: float,
    K: int,
) -> HomologicalSolution:
    """Solve {N, F} + R = N_hat for R truncated at Fourier order K."""
    J = R.J
    if N.J < J:
        raise ValueError("normal form carries fewer modes than the perturbation")
    Om = N.Omega[:J]
    plus = Om[:, None] + Om[None, :]
    diff = Om[:, None] - Om[None, :]
    k0 = (0,) * R.n

    n_hat = R.h11_mean_diagonal()
    coeffs = {}
    records = []
    worst = math.inf
    for k, block in R.coeffs.items():
        kabs = sum(abs(c) for c in k)
        if kabs > K:
            raise ValueError("R carries Fourier modes beyond the truncation order K")
        thr = gamma / float(af.delta(kabs))
        kw = _kdot(k, N.omega)

        d20 = kw + plus
        d11 = kw + diff
        d02 = kw - plus
        is_k0 = k == k0

        for dmat, family, mask in (
            (d20, "plus", np.ones((J, J), dtype=bool)),
            (d11, "minus", _touched_minus_mask(J, is_k0)),
            (d02, "plus", np.ones((J, J), dtype=bool)),
        ):
            vals = np.abs(dmat)
            bad = (vals < thr) & mask
            if bad.any():
                i, j = map(int, np.unravel_index(np.argmin(np.where(bad, vals, np.inf)), vals.shape))
                raise DivisorViolation(k, i + 1, j + 1, float(vals[i, j]), thr, family)
            masked = np.where(mask, vals, np.inf)
            worst = min(worst, float(np.min(masked)) / thr) if np.isfinite(masked).any() else worst

        out = np.empty_like(block)
        out[0] = block[0] / (1j * d20)
        rhs11 = block[1].copy()
        if is_k0:
            rhs11[np.diag_indices(J)] -= n_hat
            d11_safe = d11.copy()
            np.fill_diagonal(d11_safe, 1.0)  # rhs diagonal is exactly zero here
            out[1] = rhs11 / (1j * d11_safe)
            np.fill_diagonal(out[1], 0.0)
        else:
            out[1] = rhs11 / (1j * d11)
        out[2] = block[2] / (1j * d02)
        coeffs[k] = out

        mags = np.abs(block)
        for dmat, bi in ((d20, 0), (d11, 1), (d02, 2)):
            vals = np.abs(dmat)
            if bi == 1 and is_k0:
                vals = vals.copy()
                np.fill_diagonal(vals, np.inf)
            flat = np.argsort(vals, axis=None)[: max(0, 8)]
            for idx in flat:
                i, j = np.unravel_index(idx, vals.shape)
                if np.isfinite(vals[i, j]):
                    records.append(
                        (k, int(i) + 1, int(j) + 1, float(dmat[i, j]), float(mags[bi, i, j]))
                    )

    limits = None
    if R.h11_limits is not None:
        limits = {}
        for d, series in R.h11_limits.items():
            out_ser = {}
            for k, c in series.items():
                kabs = sum(abs(x) for x in k)
                thr = gamma / float(af.delta(kabs))
                div = _kdot(k, N.omega) + d  # Toeplitz limit of the minus divisors
                if d == 0 and kabs == 0:
                    continue  # mean diagonal, absorbed by N_hat
                if abs(div) < thr:
                    raise DivisorViolation(k, 0, 0, abs(div), thr, "minus-limit")
                out_ser[k] = c / (1j * div)
            limits[d] = out_ser

    F = QuadHam(
        n=R.n, J=J, K_cap=R.K_cap, r=R.r, s=R.s, a=R.a, p=R.p,
        coeffs=coeffs, tail_norm=R.tail_norm, h11_limits=limits,
    )
    records.sort(key=lambda rec: abs(rec[3]))
    sol = HomologicalSolution(
        F=F,
        N_hat_diag=n_hat,
        residual_norm=0.0,
        worst_divisor=worst,
        divisor_records=records[:100],
    )
    sol.residual_norm = residual(N, F, R, n_hat)
    return sol


def residual(N: NormalForm, F: QuadHam, R: QuadHam, N_hat_diag: np.ndarray) -> float:
    """Defect norm of the conjugacy equation, assembled coefficientwise."""
    J = R.J
    Om = N.Omega[:J]
    plus = Om[:, None] + Om[None, :]
    diff = Om[:, None] - Om[None, :]
    k0 = (0,) * R.n
    res = R.zero_like()
    coeffs = {}
    for k in set(F.coeffs) | set(R.coeffs):
        kw = _kdot(k, N.omega)
        fb = F.coeffs.get(k)
        rb = R.coeffs.get(k)
        out = np.zeros((3, J, J), dtype=complex)
        if fb is not None:
            out[0] = 1j * (kw + plus) * fb[0]
            out[1] = 1j * (kw + diff) * fb[1]
            out[2] = 1j * (kw - plus) * fb[2]
        if rb is not None:
            out -= rb
        if k == k0:
            out[1][np.diag_indices(J)] += N_hat_diag
        coeffs[k] = out
    res.coeffs = {k: b for k, b in coeffs.items() if np.any(b)}
    return vf_norm(res)


@dataclass
class EstimateReport:
    ratio_vf: float
    ratio_tl: float
    C0: float

    @property
    def within(self) -> bool:
        return max(self.ratio_vf, self.ratio_tl) <= 1.0 + self.C0


def verify_estimate(
    sol: HomologicalSolution,
    N: NormalForm,
    R: QuadHam,
    af: ApproximationFunction,
    gamma: float,
    sigma: float,
    rho: float,
    dOmega_sup: float = 0.0,
    C0: Optional[float] = None,
) -> EstimateReport:
    """Solution-size ratios against the divisor-counting bounds.

    ratio_vf compares ||X_F|| on the strip narrowed by sigma with
    gamma^-2 Gamma_12(sigma) ||X_R||; ratio_tl compares the TL seminorm
    with gamma^-3 Gamma_13(sigma) <R>.  Both are expected at or below
    1 + C0 where C0 defaults to n|omega| + 2 sup|dOmega/domega|.
    """
    if not 0 < 5 * sigma < R.r:
        raise ValueError("need 0 < 5 sigma < r")
    if C0 is None:
        C0 = len(N.omega) * float(np.max(np.abs(N.omega))) + 2.0 * dOmega_sup
    vf_R = vf_norm(R)
    tl_R = tl_seminorm(R, rho).combined
    g12 = gamma_ab(af, GammaQuery(1, 2, sigma))
    g13 = gamma_ab(af, GammaQuery(1, 3, sigma))
    ratio_vf = (
        vf_norm(sol.F, R.r - sigma) / (gamma**-2 * g12 * vf_R) if vf_R > 0 else 0.0
    )
    ratio_tl = (
        tl_seminorm(sol.F, rho, R.r - sigma).combined / (gamma**-3 * g13 * tl_R)
        if tl_R > 0
        else 0.0
    )
    return EstimateReport(ratio_vf=float(ratio_vf), ratio_tl=float(ratio_tl), C0=C0)


def write_divisor_csv(path: str, records) -> None:
    """The 100 smallest divisors with their coefficient magnitudes."""
    from .ioutil import write_csv

    rows = [[" ".join(str(c) for c in k), i, j, d, mag] for k, i, j, d, mag in records]
    write_csv(path, ["k", "i", "j", "divisor", "coeff_magnitude"], rows)
