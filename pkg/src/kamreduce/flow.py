"""Time-1 flows of quadratic Hamiltonians and the induced transforms.

The flow of a quadratic generator F is linear in phase space and shifts
the auxiliary actions by a quadratic form: on the interleaved vector
Z = (z_1, zbar_1, z_2, zbar_2, ...) it reads

    Z(1)   = L(theta) Z(0),        L(theta) = exp(i J Hess F(theta)),
    I_h(1) = I_h(0) + (1/2) Z(0)^T M_h(theta) Z(0),

with M_h = -int_0^1 exp(tau A)^T (d Hess F / d theta_h) exp(tau A) dtau,
A = i J Hess F.  The generator i J Hess F satisfies A^T J + J A = 0, so
every L is symplectic; the defect max_g ||L^T J L - J|| is recorded on
the map.  Everything is evaluated on an equispaced theta grid of G
points per angle; G defaults to 4 K_cap + 1 so that products of two
capacity-limited series are recovered alias-free.

Two independent implementations of the transformed Hamiltonian
(N + P) o flow are provided: a grid transform conjugating the Hessian
pointwise (transform_flow) and a Lie series summing iterated brackets
(transform_lie).  They agree within their truncation tolerances and
cross-validate each other.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .hamrep import (
    NormalForm,
    QuadHam,
    iteration_norm,
    normal_part_quadham,
    omega_dtheta,
    poisson_bracket,
    vf_norm,
)

__all__ = [
    "FlowDomainError",
    "LieDivergence",
    "SymplecticMap",
    "LieResult",
    "default_grid_size",
    "flow_map",
    "transform_flow",
    "transform_lie",
    "symplectic_form",
    "save_symplectic_map",
    "load_symplectic_map",
    "write_condition_report",
]


class FlowDomainError(RuntimeError):
    """Generator too large for the flow to stay in the analyticity domain."""


class LieDivergence(RuntimeError):
    """Iterated bracket norms stopped decreasing before the cutoff."""


def symplectic_form(J: int) -> np.ndarray:
    """Block-diagonal [[0, 1], [-1, 0]] on interleaved (z_j, zbar_j) pairs."""
    Jm = np.zeros((2 * J, 2 * J))
    for j in range(J):
        Jm[2 * j, 2 * j + 1] = 1.0
        Jm[2 * j + 1, 2 * j] = -1.0
    return Jm


def default_grid_size(K_cap: int) -> int:
    return 4 * K_cap + 1


def theta_grid(n: int, G: int) -> np.ndarray:
    """(G^n, n) array of grid angles, row-major over np.ndindex((G,)*n)."""
    axes = [2.0 * math.pi * np.arange(G) / G] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _hessian_stack(P: QuadHam):
    """Fourier keys and the matching symmetric Hessian matrices (2J x 2J)."""
    J = P.J
    keys = P.support()
    stack = np.zeros((len(keys), 2 * J, 2 * J), dtype=complex)
    for idx, k in enumerate(keys):
        b = P.coeffs[k]
        stack[idx, 0::2, 0::2] = 2.0 * b[0]
        stack[idx, 0::2, 1::2] = b[1]
        stack[idx, 1::2, 0::2] = b[1].T
        stack[idx, 1::2, 1::2] = 2.0 * b[2]
    return keys, stack


def _phases(keys, thetas: np.ndarray) -> np.ndarray:
    """(n_keys, n_points) matrix of e^(i k.theta)."""
    if not keys:
        return np.zeros((0, len(thetas)))
    karr = np.array(keys, dtype=float)
    return np.exp(1j * karr @ thetas.T)


def hessian_on_grid(P: QuadHam, thetas: np.ndarray, derivative: Optional[int] = None):
    """Hess P (or its theta_h derivative) at each grid angle."""
    keys, stack = _hessian_stack(P)
    ph = _phases(keys, thetas)
    if derivative is not None:
        factors = np.array([1j * k[derivative] for k in keys])
        ph = ph * factors[:, None]
    return np.tensordot(ph.T, stack, axes=1)


@dataclass
class SymplecticMap:
    """Linear phase map plus action-shift quadratic forms on a theta grid.

    B = L - Id is stored separately: in the small-generator regime it is
    summed as a Taylor series, so products against the large normal-form
    Hessian keep absolute accuracy at the size of the step rather than
    the size of the frequencies.
    """

    n: int
    J: int
    K_cap: int
    G: int
    r: float
    L: np.ndarray  # (G^n, 2J, 2J)
    B: np.ndarray  # (G^n, 2J, 2J), L - Id to near machine accuracy
    M: np.ndarray  # (n, G^n, 2J, 2J), symmetric in the matrix indices
    symplectic_defect: float = 0.0

    def thetas(self) -> np.ndarray:
        return theta_grid(self.n, self.G)

    def check_symplectic(self) -> float:
        Jm = symplectic_form(self.J)
        worst = 0.0
        for Lg in self.L:
            worst = max(worst, float(np.max(np.abs(Lg.T @ Jm @ Lg - Jm))))
        return worst

    def fourier_modes(self):
        """Trig-interpolation coefficients of L over the grid."""
        shape = (self.G,) * self.n
        V = self.L.reshape(shape + self.L.shape[1:])
        Vhat = np.fft.fftn(V, axes=tuple(range(self.n))) / self.G**self.n
        freqs = np.fft.fftfreq(self.G, d=1.0 / self.G).astype(int)
        keys, stack = [], []
        for idx in np.ndindex(shape):
            keys.append(tuple(int(freqs[i]) for i in idx))
            stack.append(Vhat[idx])
        return keys, np.array(stack)

    def interpolation_defect(self) -> float:
        """Relative size of the extreme trig modes (aliasing indicator)."""
        keys, stack = self.fourier_modes()
        top = max(abs(f) for k in keys for f in k)
        mags = np.array([np.max(np.abs(m)) for m in stack])
        extreme = max(
            (mags[i] for i, k in enumerate(keys) if max(abs(f) for f in k) == top),
            default=0.0,
        )
        return float(extreme / max(np.max(mags), 1e-300))

    def L_at(self, theta: np.ndarray, modes=None) -> np.ndarray:
        keys, stack = modes if modes is not None else self.fourier_modes()
        ph = _phases(keys, np.atleast_2d(theta))
        return np.tensordot(ph[:, 0], stack, axes=1)


_GL_CACHE = {}


def _gl_nodes(m: int):
    if m not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(m)
        _GL_CACHE[m] = (0.5 * (x + 1.0), 0.5 * w)  # mapped to [0, 1]
    return _GL_CACHE[m]


def _taylor_powers(A: np.ndarray, tol: float):
    """[A/1!, A^2/2!, ...] until the next term falls below tol relatively."""
    terms = [A.copy()]
    scale = max(float(np.max(np.abs(A))), 1e-300)
    m = 1
    while m < 40:
        nxt = terms[-1] @ A / (m + 1)
        terms.append(nxt)
        if np.max(np.abs(nxt)) <= 1e-18 * scale:
            break
        m += 1
    return terms


def flow_map(
    F: QuadHam,
    G: Optional[int] = None,
    tol: float = 1e-12,
    smallness: Optional[float] = None,
    rho: Optional[float] = None,
) -> SymplecticMap:
    """Per-grid-point time-1 map of the quadratic generator F.

    For small generators (the iteration regime, ||A||_inf <= 0.5) the
    exponential is summed as a Taylor series so that B = L - Id carries
    absolute errors at the scale of B itself; otherwise scaling-and-
    squaring (Pade order 13) is used.  Action-shift integrals use
    Gauss-Legendre quadrature starting at 8 nodes, doubling until two
    successive estimates agree within tol.  When `smallness` is given,
    the combined norm of F must stay below it or FlowDomainError is
    raised (the flow may leave the domain).
    """
    if smallness is not None:
        size = iteration_norm(F, rho) if rho is not None else vf_norm(F)
        if not size < smallness:
            raise FlowDomainError(
                f"generator norm {size:.3e} exceeds the flow threshold {smallness:.3e}"
            )
    G = default_grid_size(F.K_cap) if G is None else G
    thetas = theta_grid(F.n, G)
    Jm = symplectic_form(F.J)
    H = hessian_on_grid(F, thetas)
    dH = [hessian_on_grid(F, thetas, derivative=h) for h in range(F.n)]

    npts, dim = H.shape[0], 2 * F.J
    eye = np.eye(dim)
    L = np.empty((npts, dim, dim), dtype=complex)
    B = np.empty((npts, dim, dim), dtype=complex)
    M = np.zeros((F.n, npts, dim, dim), dtype=complex)

    def flow_factors(A):
        """(B, powers) with B = e^A - Id; powers drive the tau quadrature."""
        if float(np.max(np.abs(A).sum(axis=1), initial=0.0)) <= 0.5:
            powers = _taylor_powers(A, tol)
            return sum(powers), powers
        return expm(A) - eye, None

    def action_shift(A, powers, dHg, m):
        taus, ws = _gl_nodes(m)
        out = np.zeros((F.n, dim, dim), dtype=complex)
        for tau, w in zip(taus, ws):
            if powers is not None:
                Btau = sum(t * tau ** (i + 1) for i, t in enumerate(powers))
            else:
                Btau = expm(tau * A) - eye
            for h in range(F.n):
                d = dHg[h]
                out[h] -= w * (d + Btau.T @ d + d @ Btau + Btau.T @ d @ Btau)
        return out

    # pick the quadrature order on the first grid point, then reuse it
    m_nodes = 8
    if npts > 0:
        A0 = 1j * (Jm @ H[0])
        _, pw0 = flow_factors(A0)
        dH0 = [dH[h][0] for h in range(F.n)]
        est = action_shift(A0, pw0, dH0, m_nodes)
        while m_nodes < 64:
            est2 = action_shift(A0, pw0, dH0, 2 * m_nodes)
            if np.max(np.abs(est2 - est)) <= tol * max(1.0, np.max(np.abs(est2))):
                break
            m_nodes *= 2
            est = est2

    for g in range(npts):
        A = 1j * (Jm @ H[g])
        Bg, powers = flow_factors(A)
        B[g] = Bg
        L[g] = eye + Bg
        shift = action_shift(A, powers, [dH[h][g] for h in range(F.n)], m_nodes)
        for h in range(F.n):
            M[h, g] = 0.5 * (shift[h] + shift[h].T)

    smap = SymplecticMap(
        n=F.n, J=F.J, K_cap=F.K_cap, G=G, r=F.r, L=L, B=B, M=M
    )
    smap.symplectic_defect = smap.check_symplectic()
    return smap


def _grid_to_quadham(
    values: np.ndarray, template: QuadHam, G: int, noise_floor: float = 0.0
) -> QuadHam:
    """Inverse DFT of gridded Hessians into a QuadHam, overflow to tail.

    Coefficients below noise_floor (the roundoff scale of the grid
    arithmetic that produced `values`) are dropped; dropped mass and
    genuine modes past K_cap are accounted into tail_norm.  Lost modes
    are weighted at strip width 0: the grid cannot certify analytic
    growth factors past its resolution, and e^(|k| r) weights would
    amplify roundoff into phantom tail mass.
    """
    n, J, K_cap = template.n, template.J, template.K_cap
    shape = (G,) * n
    V = values.reshape(shape + values.shape[1:])
    Vhat = np.fft.fftn(V, axes=tuple(range(n))) / G**n
    freqs = np.fft.fftfreq(G, d=1.0 / G).astype(int)

    kept, overflow = {}, {}
    dropped = 0.0
    for idx in np.ndindex(shape):
        k = tuple(int(freqs[i]) for i in idx)
        Hk = Vhat[idx]
        mags = np.abs(Hk)
        if noise_floor > 0.0:
            small = mags <= noise_floor
            dropped += float(mags[small].sum())
            Hk = np.where(small, 0.0, Hk)
            mags = np.where(small, 0.0, mags)
        if not np.any(mags > 0.0):
            continue
        block = np.zeros((3, J, J), dtype=complex)
        block[0] = 0.5 * Hk[0::2, 0::2]
        block[1] = 0.5 * (Hk[0::2, 1::2] + Hk[1::2, 0::2].T)
        block[2] = 0.5 * Hk[1::2, 1::2]
        target = kept if sum(abs(c) for c in k) <= K_cap else overflow
        target[k] = block

    out = QuadHam(
        n=n, J=J, K_cap=K_cap, r=template.r, s=template.s,
        a=template.a, p=template.p, coeffs=kept,
    )
    out.tail_norm += dropped
    if overflow:
        lost = QuadHam(
            n=n, J=J, K_cap=max(sum(abs(c) for c in k) for k in overflow),
            r=0.0, s=template.s, a=template.a, p=template.p, coeffs=overflow,
        )
        out.tail_norm += iteration_norm(lost, rho=1e-6)
    return out


def transform_flow(N: NormalForm, P: QuadHam, smap: SymplecticMap) -> QuadHam:
    """Quadratic part of (N + P) o flow, relative to the unchanged N.

    Conjugates the full Hessian pointwise, Q+ = L^T Q L + sum_h omega_h M_h,
    and converts the grid back to Fourier coefficients; support beyond
    K_cap accumulates into tail_norm.  The returned QuadHam P+ satisfies
    (N + P) o flow = N + P+ as quadratic Hamiltonians.

    The normal part is conjugated in the cancellation-free arrangement
    L^T Qn L - Qn = B^T Qn + Qn B + B^T Qn B, so the output noise floor
    scales with the step, not with the frequency size.
    """
    if (smap.n, smap.J) != (P.n, P.J):
        raise ValueError("map and Hamiltonian dimensions differ")
    thetas = smap.thetas()
    Qn = np.zeros((2 * P.J, 2 * P.J), dtype=complex)
    Om = N.Omega[: P.J]
    Qn[0::2, 1::2] = np.diag(Om)
    Qn[1::2, 0::2] = np.diag(Om)

    B = smap.B
    QnB = np.einsum("jk,gkl->gjl", Qn, B)
    out = np.einsum("gji,gjl->gil", B, QnB)  # B^T Qn B
    out += QnB
    out += np.einsum("gji,jk->gik", B, Qn)  # B^T Qn
    Qp = hessian_on_grid(P, thetas)
    out += np.einsum("gji,gjk,gkl->gil", smap.L, Qp, smap.L)
    for h in range(P.n):
        out += N.omega[h] * smap.M[h]
    # roundoff scale of the products above: dims * eps * largest intermediate
    inter = max(
        float(np.max(np.abs(QnB), initial=0.0)),
        float(np.max(np.abs(Qp), initial=0.0)),
        float(np.max(np.abs(smap.M), initial=0.0)) * float(np.max(np.abs(N.omega), initial=1.0)),
    )
    floor = 8.0 * np.finfo(float).eps * 2 * P.J * inter
    result = _grid_to_quadham(out, P, smap.G, noise_floor=floor)
    result.tail_norm += P.tail_norm
    return result


@dataclass
class LieResult:
    P_new: QuadHam
    tail_bound: float
    terms: int


def transform_lie(
    N: NormalForm,
    P: QuadHam,
    F: QuadHam,
    M_max: int = 20,
    tol: float = 1e-14,
) -> LieResult:
    """(N + P) o flow via the Lie series sum_m ad_F^m (N + P) / m!.

    The action part contributes only through the first bracket,
    ad_F(omega . I) = -omega . dP/dtheta of F; all later terms stay in
    the quadratic algebra.  Term norms must decrease once past m = 2 or
    LieDivergence is raised; the reported tail bound is the geometric
    extrapolation of the last retained term.
    """
    term = normal_part_quadham(N, P) + P  # m = 0 quadratic part
    acc = P  # returned relative to N, so drop the N_z of the m = 0 term
    scale = max(vf_norm(P) + vf_norm(F), 1e-300)
    prev = math.inf
    tail = 0.0
    m = 0
    ratio = 0.0
    while m < M_max:
        m += 1
        term = poisson_bracket(term, F)
        if m == 1:
            term = term + omega_dtheta(F, N.omega) * (-1.0)
        contrib = term * (1.0 / math.factorial(m))
        size = vf_norm(contrib)
        acc = acc + contrib
        if size <= tol * scale:
            ratio = size / prev if prev < math.inf else 0.0
            tail = size * ratio / max(1.0 - ratio, 0.5)
            break
        if m >= 3 and size >= prev:
            raise LieDivergence(
                f"bracket norms stopped decreasing at order {m} "
                f"({size:.3e} after {prev:.3e})"
            )
        prev = size
    else:
        ratio = size / prev if prev not in (0.0, math.inf) else 0.5
        tail = size * min(ratio, 0.9) / max(1.0 - min(ratio, 0.9), 0.1)
    return LieResult(P_new=acc, tail_bound=float(tail), terms=m)


# ---------------------------------------------------------------------------
# serialization and reports


def save_symplectic_map(smap: SymplecticMap, path: str) -> None:
    from .ioutil import write_json

    def pack(mat):
        return [[float(x.real), float(x.imag)] for x in mat.ravel()]

    write_json(
        path,
        {
            "kind": "symplectic_map",
            "n": smap.n, "J": smap.J, "K_cap": smap.K_cap,
            "G": smap.G, "r": smap.r,
            "symplectic_defect": smap.symplectic_defect,
            "B": [pack(m) for m in smap.B],
            "M": [[pack(m) for m in smap.M[h]] for h in range(smap.n)],
        },
    )


def load_symplectic_map(path: str) -> SymplecticMap:
    from .ioutil import read_json

    doc = read_json(path)
    if doc.get("kind") != "symplectic_map":
        raise ValueError(f"{path} is not a symplectic map container")
    dim = 2 * doc["J"]

    def unpack(flat):
        arr = np.array([complex(re, im) for re, im in flat])
        return arr.reshape(dim, dim)

    B = np.array([unpack(m) for m in doc["B"]])
    M = np.array([[unpack(m) for m in row] for row in doc["M"]])
    return SymplecticMap(
        n=doc["n"], J=doc["J"], K_cap=doc["K_cap"], G=doc["G"], r=doc["r"],
        L=B + np.eye(dim), B=B, M=M,
        symplectic_defect=float(doc["symplectic_defect"]),
    )


def write_condition_report(smap: SymplecticMap, path: str) -> None:
    """CSV of the condition number of L at every grid point."""
    from .ioutil import write_csv

    rows = []
    for g, Lg in enumerate(smap.L):
        rows.append([g, float(np.linalg.cond(Lg))])
    write_csv(path, ["point", "cond_L"], rows)
