"""Theta-Fourier-truncated quadratic Hamiltonians and their calculus.

A QuadHam stores a Hamiltonian

    P(theta, z, zbar) = sum_k e^(i k.theta) [ <S20(k) z, z> + <H11(k) z, zbar>
                                              + <S02(k) zbar, zbar> ]

on modes 1..J with Fourier support |k|_1 <= K_cap, together with its
analyticity data: theta-strip width r, phase-ball radius s, and the mode
weights w_j = e^(a j) j^p.  S20 and S02 are kept symmetric; real-valued
Hamiltonians satisfy S02(k) = conj(S20(-k)) and H11(k) = H11(-k)^H.

Norm conventions (used consistently by every consumer in this package):

* series norm  ||f||_r = sum_k |f_hat(k)| e^(|k|_1 r);
* vf_norm is the weighted first-derivative (vector-field) norm.  Its z
  and zbar parts are exact suprema of the derivative majorants over the
  weighted l1 ball; the theta part uses the product upper bound
  max_ij ||.||/(w_i w_j), which is tight within a factor 2;
* tl_seminorm quantifies exponentially off-diagonal decay (constant M1)
  and Lipschitz convergence along shifted diagonals (constant M3) of the
  second-derivative matrices: zz and zbar-zbar entries are measured
  against e^(-rho(i+j)), z-zbar entries against e^(-rho|i-j|).  The M3
  reference along each z-zbar diagonal is a model-supplied analytic
  limit when available and the deepest stored entry otherwise; zz/zbar
  diagonals always have limit 0 (entries leave the mode quadrant).

Fourier products are truncated convolutions: support growing past K_cap
is never dropped silently but accumulated into tail_norm, measured in
the same combined norm the iteration uses.

TLMatrix carries the matching block matrix J.Hess(F) whose J x J grid of
2x2 blocks is stored interleaved as a 2J x 2J matrix per Fourier index;
tl_matnorm mirrors tl_seminorm exactly, which makes the norm identity
tl_matnorm(hessian_matrix(F)) == tl_seminorm(F) hold to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "QuadHam",
    "NormalForm",
    "TLMatrix",
    "TLReport",
    "TruncationResult",
    "series_norm",
    "vf_norm",
    "tl_seminorm",
    "tl_matnorm",
    "iteration_norm",
    "poisson_bracket",
    "omega_dtheta",
    "truncate_fourier",
    "hessian_matrix",
    "matmul",
    "tl_identity",
    "reality_defect",
    "save_quadham",
    "load_quadham",
    "write_norm_report",
]

Key = tuple

_BLOCK_NAMES = ("20", "11", "02")


def _k_abs(k: Key) -> int:
    return sum(abs(c) for c in k)


def series_norm(series: dict, r: float) -> float:
    """Weighted l1 Fourier norm sum_k |c_k| e^(|k|_1 r) of a scalar series."""
    if r < 0:
        raise ValueError("strip width r must be non-negative")
    return float(sum(abs(c) * math.exp(_k_abs(k) * r) for k, c in series.items()))


# ---------------------------------------------------------------------------
# normal form


@dataclass(frozen=True)
class NormalForm:
    """Tangential frequencies omega and normal frequencies Omega_j = j + breve_j."""

    omega: np.ndarray
    omega_breve: np.ndarray
    A0: float = 1.0
    breve_limit: float = 0.0  # Toeplitz limit of breve_j along the diagonal

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "omega_breve", np.asarray(self.omega_breve, dtype=float))
        if np.max(np.abs(self.omega_breve), initial=0.0) > self.A0 + 1e-12:
            raise ValueError("normal-frequency corrections exceed the declared A0")

    @property
    def n(self) -> int:
        return len(self.omega)

    @property
    def J(self) -> int:
        return len(self.omega_breve)

    @property
    def Omega(self) -> np.ndarray:
        return np.arange(1, self.J + 1, dtype=float) + self.omega_breve

    def shifted(self, breve_delta: np.ndarray, A0: Optional[float] = None) -> "NormalForm":
        breve = self.omega_breve + np.asarray(breve_delta, dtype=float)
        new_A0 = A0 if A0 is not None else max(self.A0, float(np.max(np.abs(breve))))
        return NormalForm(self.omega, breve, new_A0, self.breve_limit)


# ---------------------------------------------------------------------------
# QuadHam


@dataclass
class QuadHam:
    """Quadratic Hamiltonian with truncated theta-Fourier coefficients."""

    n: int
    J: int
    K_cap: int
    r: float
    s: float
    a: float
    p: float
    coeffs: dict = field(default_factory=dict)  # k -> complex (3, J, J)
    tail_norm: float = 0.0
    h11_limits: Optional[dict] = None  # diagonal offset d -> {k: limit coeff}

    def __post_init__(self):
        clean = {}
        for k, block in self.coeffs.items():
            k = tuple(int(c) for c in k)
            if len(k) != self.n:
                raise ValueError("Fourier index dimension mismatch")
            if _k_abs(k) > self.K_cap:
                raise ValueError("stored Fourier index beyond K_cap")
            block = np.asarray(block, dtype=complex)
            if block.shape != (3, self.J, self.J):
                raise ValueError("coefficient block must have shape (3, J, J)")
            block = block.copy()
            block[0] = 0.5 * (block[0] + block[0].T)
            block[2] = 0.5 * (block[2] + block[2].T)
            if np.any(block):
                clean[k] = block
        self.coeffs = clean

    # -- basic algebra ---------------------------------------------------

    @classmethod
    def zero(cls, n, J, K_cap, r, s, a, p) -> "QuadHam":
        return cls(n=n, J=J, K_cap=K_cap, r=r, s=s, a=a, p=p, coeffs={})

    def zero_like(self) -> "QuadHam":
        return QuadHam.zero(self.n, self.J, self.K_cap, self.r, self.s, self.a, self.p)

    def weights(self) -> np.ndarray:
        j = np.arange(1, self.J + 1, dtype=float)
        return np.exp(self.a * j) * j**self.p

    def _require_compatible(self, other: "QuadHam"):
        if (self.n, self.J, self.a, self.p) != (other.n, other.J, other.a, other.p):
            raise ValueError("incompatible quadratic Hamiltonians")

    def __add__(self, other: "QuadHam") -> "QuadHam":
        self._require_compatible(other)
        coeffs = {k: b.copy() for k, b in self.coeffs.items()}
        for k, b in other.coeffs.items():
            coeffs[k] = coeffs[k] + b if k in coeffs else b.copy()
        return QuadHam(
            n=self.n, J=self.J, K_cap=max(self.K_cap, other.K_cap),
            r=min(self.r, other.r), s=min(self.s, other.s), a=self.a, p=self.p,
            coeffs=coeffs, tail_norm=self.tail_norm + other.tail_norm,
            h11_limits=self.h11_limits,
        )

    def __sub__(self, other: "QuadHam") -> "QuadHam":
        return self + (other * (-1.0))

    def __mul__(self, scalar) -> "QuadHam":
        coeffs = {k: b * scalar for k, b in self.coeffs.items()}
        return replace(
            self, coeffs=coeffs, tail_norm=self.tail_norm * abs(scalar),
            h11_limits=None if self.h11_limits is None else {
                d: {k: c * scalar for k, c in ser.items()}
                for d, ser in self.h11_limits.items()
            },
        )

    __rmul__ = __mul__

    def with_analyticity(self, r=None, s=None) -> "QuadHam":
        return replace(self, r=self.r if r is None else r, s=self.s if s is None else s)

    def block(self, k: Key, which: int) -> np.ndarray:
        zero = np.zeros((self.J, self.J), dtype=complex)
        return self.coeffs.get(tuple(k), None)[which] if tuple(k) in self.coeffs else zero

    def h11_mean_diagonal(self) -> np.ndarray:
        """Theta-mean of the z-zbar diagonal (the normal-form direction)."""
        k0 = (0,) * self.n
        if k0 not in self.coeffs:
            return np.zeros(self.J)
        return np.real(np.diagonal(self.coeffs[k0][1])).copy()

    def entry_norms(self, r: Optional[float] = None) -> np.ndarray:
        """(3, J, J) matrix of per-entry series norms at strip width r."""
        r = self.r if r is None else r
        out = np.zeros((3, self.J, self.J))
        for k, block in self.coeffs.items():
            out += np.abs(block) * math.exp(_k_abs(k) * r)
        return out

    def dtheta_entry_norms(self, h: int, r: Optional[float] = None) -> np.ndarray:
        """Entry norms of the theta_h derivative (factor |k_h| per mode)."""
        r = self.r if r is None else r
        out = np.zeros((3, self.J, self.J))
        for k, block in self.coeffs.items():
            out += abs(k[h]) * np.abs(block) * math.exp(_k_abs(k) * r)
        return out

    def support(self) -> list:
        return sorted(self.coeffs.keys())


def normal_part_quadham(N: NormalForm, template: QuadHam) -> QuadHam:
    """The z-part of the normal form, sum_j Omega_j z_j zbar_j, as a QuadHam."""
    block = np.zeros((3, template.J, template.J), dtype=complex)
    block[1] = np.diag(N.Omega[: template.J])
    return replace(
        template, coeffs={(0,) * template.n: block}, tail_norm=0.0, h11_limits=None
    )


def reality_defect(P: QuadHam) -> float:
    """Max deviation from S02(k) = conj(S20(-k)), H11(k) = H11(-k)^H."""
    worst = 0.0
    keys = set(P.coeffs)
    for k in keys:
        mk = tuple(-c for c in k)
        blk = P.coeffs[k]
        opp = P.coeffs.get(mk)
        s20_opp = opp[0] if opp is not None else 0.0
        h11_opp = opp[1] if opp is not None else np.zeros_like(blk[1])
        worst = max(worst, float(np.max(np.abs(blk[2] - np.conj(s20_opp)))))
        worst = max(worst, float(np.max(np.abs(blk[1] - np.conj(h11_opp).T))))
    return worst


# ---------------------------------------------------------------------------
# norms


def vf_norm(P: QuadHam, r: Optional[float] = None) -> float:
    """Weighted vector-field norm of the Hamiltonian flow of P.

    The z/zbar component is the exact supremum of the first-derivative
    majorant over the weighted l1 ball; the theta component (the action
    derivative) uses the certified product upper bound (factor-2 tight).
    """
    if not P.coeffs:
        return 0.0
    w = P.weights()
    norms = P.entry_norms(r)
    m_z = 2.0 * norms[0] + norms[1].T  # multiplies |z_j| in d/dz_i, d/dzbar_i
    m_zb = norms[1] + 2.0 * norms[2]  # multiplies |zbar_j|
    z_comp = float(np.max(w @ m_z / w) + np.max(w @ m_zb / w))
    ww = np.outer(w, w)
    th_comp = 0.0
    for h in range(P.n):
        d = P.dtheta_entry_norms(h, r)
        th_comp += float(np.max(d[0] / ww) + np.max(d[1] / ww) + np.max(d[2] / ww))
    return z_comp + th_comp


@dataclass
class TLReport:
    M1: float
    M3: float

    @property
    def combined(self) -> float:
        return max(self.M1, self.M3)


def _minus_weight(J: int, rho: float) -> np.ndarray:
    i = np.arange(1, J + 1)
    return np.exp(rho * np.abs(i[:, None] - i[None, :]))


def _plus_weight(J: int, rho: float) -> np.ndarray:
    i = np.arange(1, J + 1)
    return np.exp(rho * (i[:, None] + i[None, :]))


def _plus_shift(J: int) -> np.ndarray:
    """Anti-diagonal shift depth: distance from the centre of i+j = const."""
    i = np.arange(1, J + 1)
    s = i[:, None] + i[None, :]
    return np.maximum(i[:, None], i[None, :]) - np.ceil(s / 2.0)


def _diag_norms(P: QuadHam, which: int, d: int, r: float):
    """Per-depth series data of block `which` along diagonal i - j = d.

    Returns (keys, C, depths) where C[ki, t] is the coefficient of the
    entry at depth t+1 for Fourier key keys[ki].
    """
    J = P.J
    L = J - abs(d)
    keys = P.support()
    C = np.zeros((len(keys), L), dtype=complex)
    t = np.arange(1, L + 1)
    ii = t + d - 1 if d >= 0 else t - 1
    jj = t - 1 if d >= 0 else t - d - 1
    for ki, k in enumerate(keys):
        C[ki] = P.coeffs[k][which][ii, jj]
    return keys, C, t


def tl_seminorm(P: QuadHam, rho: float, r: Optional[float] = None) -> TLReport:
    """Off-diagonal decay constant M1 and diagonal Lipschitz constant M3.

    M1 is exact on the truncation.  M3 measures each z-zbar diagonal
    against its Toeplitz reference (analytic limit if the model supplied
    one, else the deepest stored entry), scaling differences by the
    depth min(i, j); zz/zbar-zbar entries are measured against limit 0
    with the anti-diagonal shift as depth.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    r = P.r if r is None else r
    if not P.coeffs:
        return TLReport(0.0, 0.0)
    J = P.J
    norms = P.entry_norms(r)
    d20, d11, d02 = 2.0 * norms[0], norms[1], 2.0 * norms[2]
    wm, wp = _minus_weight(J, rho), _plus_weight(J, rho)
    M1 = float(max(np.max(d11 * wm), np.max(d20 * wp), np.max(d02 * wp)))

    M3 = 0.0
    # plus blocks: limit 0, depth = anti-diagonal shift
    shift = _plus_shift(J)
    M3 = max(M3, float(np.max(d20 * wp * shift)), float(np.max(d02 * wp * shift)))
    # z-zbar diagonals against their references
    limits = P.h11_limits or {}
    for d in range(-(J - 1), J):
        keys, C, depths = _diag_norms(P, 1, d, r)
        kw = np.array([math.exp(_k_abs(k) * r) for k in keys])
        if d in limits:
            ref = np.array([limits[d].get(k, 0.0) for k in keys], dtype=complex)
            extra = sum(
                abs(c) * math.exp(_k_abs(k) * r)
                for k, c in limits[d].items()
                if k not in P.coeffs
            )
            diff_norms = np.abs(C - ref[:, None]).T @ kw + extra
            consts = diff_norms * depths
        else:
            ref = C[:, -1]
            diff_norms = np.abs(C - ref[:, None]).T @ kw
            consts = diff_norms * depths
        M3 = max(M3, float(np.max(consts * math.exp(rho * abs(d)), initial=0.0)))
    return TLReport(M1=M1, M3=M3)


def iteration_norm(P: QuadHam, rho: float, r: Optional[float] = None) -> float:
    """The combined norm [P] = vf_norm + tl_seminorm driving the iteration."""
    return vf_norm(P, r) + tl_seminorm(P, rho, r).combined


# ---------------------------------------------------------------------------
# bracket, truncation, theta derivative


def _convolve(pairs, n, J, K_cap, make_block):
    """Truncated Fourier convolution; returns (kept coeffs, overflow coeffs)."""
    kept, overflow = {}, {}
    for (k1, b1), (k2, b2) in pairs:
        k = tuple(x + y for x, y in zip(k1, k2))
        target = kept if _k_abs(k) <= K_cap else overflow
        block = make_block(b1, b2)
        if k in target:
            target[k] = target[k] + block
        else:
            target[k] = block
    return kept, overflow


def poisson_bracket(R: QuadHam, F: QuadHam) -> QuadHam:
    """Phase-space part of {R, F} for quadratic R, F (no action/angle part).

    Orientation: {R, F} = i sum_m (dR/dz_m dF/dzbar_m - dR/dzbar_m dF/dz_m).
    Fourier support grows to the sum of supports; overflow past K_cap is
    accumulated into tail_norm of the result.
    """
    R._require_compatible(F)
    K_cap = max(R.K_cap, F.K_cap)

    def make_block(bA, bB):
        A20, A11, A02 = bA
        B20, B11, B02 = bB
        c20f = 2j * (B11 @ A20 - A11 @ B20)
        c02f = 2j * (B02 @ A11 - A02 @ B11)
        c11 = 1j * (4.0 * (A20 @ B02) + B11 @ A11 - A11 @ B11 - 4.0 * (B20 @ A02))
        out = np.empty((3, R.J, R.J), dtype=complex)
        out[0] = 0.5 * (c20f + c20f.T)
        out[1] = c11
        out[2] = 0.5 * (c02f + c02f.T)
        return out

    pairs = [
        ((k1, b1), (k2, b2))
        for k1, b1 in R.coeffs.items()
        for k2, b2 in F.coeffs.items()
    ]
    kept, overflow = _convolve(pairs, R.n, R.J, K_cap, make_block)
    result = QuadHam(
        n=R.n, J=R.J, K_cap=K_cap, r=min(R.r, F.r), s=min(R.s, F.s),
        a=R.a, p=R.p, coeffs=kept, tail_norm=R.tail_norm + F.tail_norm,
    )
    if overflow:
        lost = QuadHam(
            n=R.n, J=R.J, K_cap=max(_k_abs(k) for k in overflow),
            r=result.r, s=result.s, a=R.a, p=R.p, coeffs=overflow,
        )
        result.tail_norm += iteration_norm(lost, rho=1e-6)
    return result


def omega_dtheta(P: QuadHam, omega: np.ndarray) -> QuadHam:
    """The angle derivative omega . d_theta P (coefficients i(k.omega) c_k)."""
    omega = np.asarray(omega, dtype=float)
    coeffs = {
        k: (1j * math.fsum(ki * wi for ki, wi in zip(k, omega))) * b
        for k, b in P.coeffs.items()
    }
    return replace(P, coeffs=coeffs, h11_limits=None)


@dataclass
class TruncationResult:
    truncated: QuadHam
    remainder_norm: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.remainder_norm <= self.bound * (1.0 + 1e-12) + 1e-300


def truncate_fourier(P: QuadHam, K: int, sigma: float) -> TruncationResult:
    """Split P at Fourier order K and check the exponential remainder bound.

    Keeps |k|_1 <= K; the remainder norm is evaluated on the strip
    narrowed by 2 sigma and compared against 32 sigma^-2 e^(-K sigma)
    times the norm of P on the full strip.  The comparison is reported,
    never enforced.
    """
    if K <= 0:
        raise ValueError("truncation order K must be positive")
    if not 0 < 2 * sigma < P.r:
        raise ValueError("need 0 < 2 sigma < r")
    low = {k: b for k, b in P.coeffs.items() if _k_abs(k) <= K}
    high = {k: b for k, b in P.coeffs.items() if _k_abs(k) > K}
    kept = replace(P, coeffs={k: b.copy() for k, b in low.items()})
    rem = replace(
        P, coeffs={k: b.copy() for k, b in high.items()}, r=P.r - 2 * sigma,
        tail_norm=0.0, h11_limits=None,
    )
    rem_norm = vf_norm(rem)
    bound = 32.0 * sigma**-2 * math.exp(-K * sigma) * vf_norm(P)
    return TruncationResult(truncated=kept, remainder_norm=rem_norm, bound=bound)


# ---------------------------------------------------------------------------
# Toeplitz-Lipschitz block matrices


@dataclass
class TLMatrix:
    """J x J grid of 2x2 blocks, stored interleaved as 2J x 2J per Fourier key.

    Block (i, j) is M[2i-2:2i, 2j-2:2j]; component (c1, c2) of all blocks
    is the slice M[c1::2, c2::2].  Components (1,1) and (2,2) decay off
    the main diagonal, components (1,2) and (2,1) off the anti-diagonal.
    """

    n: int
    J: int
    K_cap: int
    r: float
    coeffs: dict = field(default_factory=dict)  # k -> complex (2J, 2J)
    tail_norm: float = 0.0
    limits11: Optional[dict] = None  # diagonal d -> {k: limit}
    limits22: Optional[dict] = None

    def __post_init__(self):
        clean = {}
        for k, m in self.coeffs.items():
            k = tuple(int(c) for c in k)
            m = np.asarray(m, dtype=complex)
            if m.shape != (2 * self.J, 2 * self.J):
                raise ValueError("TLMatrix blocks must be 2J x 2J")
            if np.any(m):
                clean[k] = m.copy()
        self.coeffs = clean

    def component(self, k: Key, c1: int, c2: int) -> np.ndarray:
        m = self.coeffs.get(tuple(k))
        if m is None:
            return np.zeros((self.J, self.J), dtype=complex)
        return m[c1::2, c2::2]

    def component_norms(self, c1: int, c2: int, r: Optional[float] = None) -> np.ndarray:
        r = self.r if r is None else r
        out = np.zeros((self.J, self.J))
        for k, m in self.coeffs.items():
            out += np.abs(m[c1::2, c2::2]) * math.exp(_k_abs(k) * r)
        return out

    def support(self) -> list:
        return sorted(self.coeffs.keys())


def tl_identity(n: int, J: int, K_cap: int, r: float) -> TLMatrix:
    return TLMatrix(n=n, J=J, K_cap=K_cap, r=r, coeffs={(0,) * n: np.eye(2 * J)})


def hessian_matrix(F: QuadHam) -> TLMatrix:
    """The block matrix J.Hess(F) pairing with tl_seminorm.

    Per Fourier key the 2x2 block at (i, j) is
        [[ H11(k)_ji, 2 S02(k)_ij ], [ -2 S20(k)_ij, -H11(k)_ij ]].
    """
    coeffs = {}
    for k, b in F.coeffs.items():
        m = np.zeros((2 * F.J, 2 * F.J), dtype=complex)
        m[0::2, 0::2] = b[1].T
        m[0::2, 1::2] = 2.0 * b[2]
        m[1::2, 0::2] = -2.0 * b[0]
        m[1::2, 1::2] = -b[1]
        coeffs[k] = m
    lim11 = lim22 = None
    if F.h11_limits is not None:
        lim11 = {-d: dict(ser) for d, ser in F.h11_limits.items()}
        lim22 = {d: {k: -c for k, c in ser.items()} for d, ser in F.h11_limits.items()}
    return TLMatrix(
        n=F.n, J=F.J, K_cap=F.K_cap, r=F.r, coeffs=coeffs,
        tail_norm=F.tail_norm, limits11=lim11, limits22=lim22,
    )


def _tl_mat_diag_consts(A: TLMatrix, c1: int, c2: int, limits, rho, r) -> float:
    J = A.J
    keys = A.support()
    kw = np.array([math.exp(_k_abs(k) * r) for k in keys])
    worst = 0.0
    for d in range(-(J - 1), J):
        L = J - abs(d)
        t = np.arange(1, L + 1)
        ii = t + d - 1 if d >= 0 else t - 1
        jj = t - 1 if d >= 0 else t - d - 1
        C = np.zeros((len(keys), L), dtype=complex)
        for ki, k in enumerate(keys):
            C[ki] = A.coeffs[k][c1::2, c2::2][ii, jj]
        if limits is not None and d in limits:
            ref = np.array([limits[d].get(k, 0.0) for k in keys], dtype=complex)
            extra = sum(
                abs(c) * math.exp(_k_abs(k) * r)
                for k, c in limits[d].items()
                if k not in A.coeffs
            )
            diff = np.abs(C - ref[:, None]).T @ kw + extra
        else:
            diff = np.abs(C - C[:, -1][:, None]).T @ kw
        worst = max(worst, float(np.max(diff * t * math.exp(rho * abs(d)), initial=0.0)))
    return worst


def tl_matnorm(A: TLMatrix, rho: float, r: Optional[float] = None) -> TLReport:
    """Matrix analogue of tl_seminorm with the same depth conventions."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    r = A.r if r is None else r
    if not A.coeffs:
        return TLReport(0.0, 0.0)
    J = A.J
    wm, wp = _minus_weight(J, rho), _plus_weight(J, rho)
    n11 = A.component_norms(0, 0, r)
    n12 = A.component_norms(0, 1, r)
    n21 = A.component_norms(1, 0, r)
    n22 = A.component_norms(1, 1, r)
    M1 = float(max(np.max(n11 * wm), np.max(n22 * wm), np.max(n12 * wp), np.max(n21 * wp)))
    shift = _plus_shift(J)
    M3 = float(max(np.max(n12 * wp * shift), np.max(n21 * wp * shift)))
    M3 = max(M3, _tl_mat_diag_consts(A, 0, 0, A.limits11, rho, r))
    M3 = max(M3, _tl_mat_diag_consts(A, 1, 1, A.limits22, rho, r))
    return TLReport(M1=M1, M3=M3)


def matmul(A: TLMatrix, B: TLMatrix) -> TLMatrix:
    """Blockwise matrix product with truncated Fourier convolution."""
    if (A.n, A.J) != (B.n, B.J):
        raise ValueError("TLMatrix dimension mismatch")
    K_cap = max(A.K_cap, B.K_cap)
    kept, overflow = {}, {}
    for k1, m1 in A.coeffs.items():
        for k2, m2 in B.coeffs.items():
            k = tuple(x + y for x, y in zip(k1, k2))
            target = kept if _k_abs(k) <= K_cap else overflow
            prod = m1 @ m2
            if k in target:
                target[k] += prod
            else:
                target[k] = prod
    result = TLMatrix(
        n=A.n, J=A.J, K_cap=K_cap, r=min(A.r, B.r), coeffs=kept,
        tail_norm=A.tail_norm + B.tail_norm,
    )
    if overflow:
        lost = TLMatrix(
            n=A.n, J=A.J, K_cap=max(_k_abs(k) for k in overflow),
            r=result.r, coeffs=overflow,
        )
        result.tail_norm += tl_matnorm(lost, rho=1e-6).combined
    return result


# ---------------------------------------------------------------------------
# serialization


def save_quadham(P: QuadHam, path: str) -> None:
    """Self-describing container: header plus sparse (k, block, i, j, re, im)."""
    from .ioutil import write_json

    entries = []
    for k in P.support():
        block = P.coeffs[k]
        for bi, bname in enumerate(_BLOCK_NAMES):
            nz = np.argwhere(block[bi] != 0)
            for i, j in nz:
                c = block[bi, i, j]
                entries.append([list(k), bname, int(i) + 1, int(j) + 1, c.real, c.imag])
    write_json(
        path,
        {
            "kind": "quadham",
            "n": P.n, "J": P.J, "K_cap": P.K_cap,
            "r": P.r, "s": P.s, "a": P.a, "p": P.p,
            "tail_norm": P.tail_norm,
            "entries": entries,
        },
    )


def load_quadham(path: str) -> QuadHam:
    from .ioutil import read_json

    doc = read_json(path)
    if doc.get("kind") != "quadham":
        raise ValueError(f"{path} is not a quadham container")
    P = QuadHam.zero(doc["n"], doc["J"], doc["K_cap"], doc["r"], doc["s"], doc["a"], doc["p"])
    coeffs = {}
    for k, bname, i, j, re, im in doc["entries"]:
        k = tuple(k)
        if k not in coeffs:
            coeffs[k] = np.zeros((3, P.J, P.J), dtype=complex)
        coeffs[k][_BLOCK_NAMES.index(bname), i - 1, j - 1] = complex(re, im)
    P.coeffs = {k: b for k, b in coeffs.items() if np.any(b)}
    P.tail_norm = float(doc["tail_norm"])
    return P


def write_norm_report(path: str, items, rho: float) -> None:
    """CSV of (name, vf_norm, tl_M1, tl_M3, tail_norm) per named Hamiltonian."""
    from .ioutil import write_csv

    rows = []
    for name, P in items:
        rep = tl_seminorm(P, rho)
        rows.append([name, vf_norm(P), rep.M1, rep.M3, P.tail_norm])
    write_csv(path, ["name", "vf_norm", "tl_M1", "tl_M3", "tail_norm"], rows)
