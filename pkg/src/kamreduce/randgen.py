"""Seeded random instances for property checks.

Generators produce reality-respecting quadratic Hamiltonians and
Toeplitz-Lipschitz block matrices whose entries sit inside the decay
envelopes the semi-norms measure, so that estimate checks exercise the
generic case rather than degenerate corners.
"""

from __future__ import annotations

import itertools

import numpy as np

from .hamrep import NormalForm, QuadHam, TLMatrix

__all__ = ["half_lattice", "random_quadham", "random_tlmatrix", "random_normalform"]


def half_lattice(n: int, K: int):
    """Lattice points with |k|_1 <= K, split into (zero, positive half).

    The positive half contains one representative of each +-k pair
    (first nonzero component positive).
    """
    zero = (0,) * n
    half = []
    for k in itertools.product(range(-K, K + 1), repeat=n):
        if sum(abs(c) for c in k) > K or k == zero:
            continue
        nz = next(c for c in k if c != 0)
        if nz > 0:
            half.append(k)
    return zero, half


def _envelope(J: int, rho: float):
    i = np.arange(1, J + 1)
    minus = np.exp(-rho * np.abs(i[:, None] - i[None, :]))
    plus = np.exp(-rho * (i[:, None] + i[None, :]))
    return minus, plus


def _cplx(rng, J):
    return rng.standard_normal((J, J)) + 1j * rng.standard_normal((J, J))


def random_quadham(
    rng: np.random.Generator,
    n: int,
    J: int,
    K_supp: int,
    K_cap: int,
    r: float,
    s: float = 1.0,
    a: float = 0.0,
    p: float = 0.0,
    scale: float = 1.0,
    decay_rho: float = 0.5,
    k_decay: float = None,
    with_plus_blocks: bool = True,
) -> QuadHam:
    """Real-valued random QuadHam inside the TL decay envelopes."""
    k_decay = 2.0 * r if k_decay is None else k_decay
    minus, plus = _envelope(J, decay_rho)
    zero, half = half_lattice(n, K_supp)

    def blocks(kabs):
        damp = scale * np.exp(-k_decay * kabs)
        b = np.zeros((3, J, J), dtype=complex)
        if with_plus_blocks:
            s20 = _cplx(rng, J) * plus * damp
            b[0] = 0.5 * (s20 + s20.T)
        b[1] = _cplx(rng, J) * minus * damp
        return b

    coeffs = {}
    b0 = blocks(0)
    b0[1] = 0.5 * (b0[1] + np.conj(b0[1]).T)  # Hermitian at k = 0
    b0[2] = np.conj(b0[0])
    coeffs[zero] = b0
    for k in half:
        kabs = sum(abs(c) for c in k)
        b = blocks(kabs)
        b[2] = _cplx(rng, J) * plus * scale * np.exp(-k_decay * kabs)
        b[2] = 0.5 * (b[2] + b[2].T) if with_plus_blocks else np.zeros((J, J))
        mb = np.zeros((3, J, J), dtype=complex)
        mb[0] = np.conj(b[2])
        mb[1] = np.conj(b[1]).T
        mb[2] = np.conj(b[0])
        coeffs[k] = b
        coeffs[tuple(-c for c in k)] = mb
    return QuadHam(n=n, J=J, K_cap=K_cap, r=r, s=s, a=a, p=p, coeffs=coeffs)


def random_tlmatrix(
    rng: np.random.Generator,
    n: int,
    J: int,
    K_supp: int,
    K_cap: int,
    r: float,
    rho: float,
    scale: float = 1.0,
) -> TLMatrix:
    """Random block matrix saturating the component decay envelopes."""
    minus, plus = _envelope(J, rho)
    zero, half = half_lattice(n, K_supp)
    coeffs = {}
    for k in [zero] + half + [tuple(-c for c in kk) for kk in half]:
        kabs = sum(abs(c) for c in k)
        damp = scale * np.exp(-2.0 * r * kabs)
        m = np.zeros((2 * J, 2 * J), dtype=complex)
        m[0::2, 0::2] = _cplx(rng, J) * minus * damp
        m[1::2, 1::2] = _cplx(rng, J) * minus * damp
        m[0::2, 1::2] = _cplx(rng, J) * plus * damp
        m[1::2, 0::2] = _cplx(rng, J) * plus * damp
        coeffs[k] = m
    return TLMatrix(n=n, J=J, K_cap=K_cap, r=r, coeffs=coeffs)


def random_normalform(
    rng: np.random.Generator, n: int, J: int, breve_scale: float = 0.3
) -> NormalForm:
    """Normal form with omega in [0, 2pi)^n and decaying corrections."""
    omega = rng.uniform(0.0, 2.0 * np.pi, size=n)
    j = np.arange(1, J + 1)
    breve = breve_scale * rng.uniform(-1.0, 1.0, size=J) / j
    return NormalForm(omega=omega, omega_breve=breve, A0=max(breve_scale, 1.0))


def draw_nonresonant(rng, n, J, K, af, gamma, breve_scale=0.3, max_tries=200):
    """Rejection-sample a normal form passing every margin at level gamma."""
    from .smalldiv import ResonanceQuery, min_margin

    q = ResonanceQuery(af=af, gamma=gamma, K=K, J=J)
    for _ in range(max_tries):
        N = random_normalform(rng, n, J, breve_scale)
        if min_margin(N.omega, N, q).non_resonant:
            return N
    raise RuntimeError(
        f"no non-resonant draw in {max_tries} tries at gamma = {gamma:g}"
    )
