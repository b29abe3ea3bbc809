"""Non-resonance margins and excluded-set measure over the frequency box.

The non-resonance condition asks |k.omega + l.Omega| >= gamma/Delta(|k|)
for 0 < |k|_1 <= K (l = 0), for all mode pairs with l = e_i + e_j, and
for pairs i != j with l = e_i - e_j.  Margins are reported in units of
the threshold, so a configuration is non-resonant exactly when the worst
margin is >= 1.

The difference family is restricted to pairs |i - j| <= A2 |k| with
A2 = (1 + 2 A1 + 2 A0)/A1, A1 the empirical minimal gap slope
min |Omega_i - Omega_j| / |i - j|: outside that range the divisor is
bounded below by (1 + A0 + A1)|k| and can never dip under the threshold.

Measure estimation is grid-based for reproducibility.  When the normal
form does not depend on omega (both PDE models), each |k| <= K
contributes a fixed target list and the grid scan reduces to sorted
nearest-neighbour lookups, which keeps 1e5-point sweeps cheap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .approxfn import ApproximationFunction
from .hamrep import NormalForm

__all__ = [
    "ResonanceQuery",
    "MarginReport",
    "RussmannReport",
    "MeasureScan",
    "min_margin",
    "excluded_fraction",
    "measure_scan",
    "russmann_check",
    "pair_range_constant",
]


@dataclass(frozen=True)
class ResonanceQuery:
    af: ApproximationFunction
    gamma: float
    K: int
    J: int
    A2: Optional[float] = None  # None: derive from the normal form

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.K < 1 or self.J < 1:
            raise ValueError("K and J must be at least 1")
        if self.A2 is not None and self.A2 < 1.0:
            raise ValueError("A2 must be at least 1")


@dataclass
class MarginReport:
    worst: float
    k: tuple
    i: int  # 1-based modes; 0 when the family carries no pair
    j: int
    family: str  # "frequency" | "plus" | "minus"

    @property
    def non_resonant(self) -> bool:
        return self.worst >= 1.0


def pair_range_constant(N: NormalForm, A2_override: Optional[float] = None) -> float:
    """A2 = (1 + 2 A1 + 2 A0)/A1 with the empirical minimal gap slope A1."""
    if A2_override is not None:
        return A2_override
    Om = N.Omega
    d = np.abs(Om[:, None] - Om[None, :])
    sep = np.abs(np.arange(N.J)[:, None] - np.arange(N.J)[None, :])
    mask = sep > 0
    slopes = d[mask] / sep[mask]
    A1 = float(np.min(slopes)) if slopes.size else 0.0
    if A1 <= 0.0:
        return math.inf
    return (1.0 + 2.0 * A1 + 2.0 * N.A0) / A1


def _lattice(n: int, K: int):
    out = []
    for k in itertools.product(range(-K, K + 1), repeat=n):
        if 0 < sum(abs(c) for c in k) <= K:
            out.append(k)
    return out


def min_margin(omega: np.ndarray, N: NormalForm, q: ResonanceQuery) -> MarginReport:
    """Exhaustive worst margin over 0 < |k| <= K and mode pairs up to J.

    Dot products k.omega use compensated summation: divisor cancellation
    is the dominant error source near resonances.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    J = min(q.J, N.J)
    Om = N.Omega[:J]
    A2 = pair_range_constant(N, q.A2)
    plus = Om[:, None] + Om[None, :]
    diff = Om[:, None] - Om[None, :]
    sep = np.abs(np.arange(J)[:, None] - np.arange(J)[None, :])

    best = MarginReport(math.inf, (0,) * len(omega), 0, 0, "frequency")
    delta_cache = {}
    for k in _lattice(len(omega), q.K):
        kabs = sum(abs(c) for c in k)
        if kabs not in delta_cache:
            delta_cache[kabs] = float(q.af.delta(kabs))
        scale = delta_cache[kabs] / q.gamma
        kw = math.fsum(ki * wi for ki, wi in zip(k, omega))

        m = abs(kw) * scale
        if m < best.worst:
            best = MarginReport(m, k, 0, 0, "frequency")

        vals = np.abs(kw + plus) * scale
        ij = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[ij] < best.worst:
            best = MarginReport(float(vals[ij]), k, ij[0] + 1, ij[1] + 1, "plus")

        mask = (sep > 0) & (sep <= A2 * kabs)
        if mask.any():
            vals = np.where(mask, np.abs(kw + diff) * scale, math.inf)
            ij = np.unravel_index(np.argmin(vals), vals.shape)
            if vals[ij] < best.worst:
                best = MarginReport(float(vals[ij]), k, ij[0] + 1, ij[1] + 1, "minus")
    # k = 0 pair families: the plus family has no small divisor for
    # Omega_j ~ j >= 1 but is checked for completeness; minus pairs are
    # excluded by the A2 range at k = 0.
    vals = np.abs(plus) / q.gamma
    ij = np.unravel_index(np.argmin(vals), vals.shape)
    if vals[ij] < best.worst:
        best = MarginReport(float(vals[ij]), (0,) * len(omega), ij[0] + 1, ij[1] + 1, "plus")
    return best


def _targets_per_k(N: NormalForm, q: ResonanceQuery, J: int, A2: float):
    """Fixed target lists: |k.omega - target| < threshold means excluded."""
    Om = N.Omega[:J]
    plus = (Om[:, None] + Om[None, :]).ravel()
    sep = np.abs(np.arange(J)[:, None] - np.arange(J)[None, :])
    targets = []
    for kabs in range(1, q.K + 1):
        mask = (sep > 0) & (sep <= A2 * kabs)
        diffs = (Om[None, :] - Om[:, None])[mask]
        t = np.concatenate(([0.0], diffs, plus, -plus))
        targets.append(np.unique(t))
    return targets


def excluded_fraction(
    q: ResonanceQuery,
    N_builder: Callable[[np.ndarray], NormalForm],
    grid: int,
    A2_override: Optional[float] = None,
) -> float:
    """Fraction of a deterministic omega grid with worst margin < 1 (n = 1).

    Midpoint grid on [0, 2pi).  When the normal form is omega-independent
    the scan vectorises over the grid; otherwise each sample is scored
    with min_margin directly.
    """
    if grid < 2:
        raise ValueError("grid must have at least 2 points")
    h = 2.0 * math.pi / grid
    omegas = (np.arange(grid) + 0.5) * h

    N_probe = N_builder(np.array([omegas[0]]))
    N_probe2 = N_builder(np.array([omegas[-1]]))
    omega_independent = np.array_equal(N_probe.omega_breve, N_probe2.omega_breve)

    if not omega_independent:
        excluded = 0
        for w in omegas:
            if not min_margin(np.array([w]), N_builder(np.array([w])), q).non_resonant:
                excluded += 1
        return excluded / grid

    N = N_probe
    J = min(q.J, N.J)
    A2 = pair_range_constant(N, A2_override if A2_override is not None else q.A2)
    targets = _targets_per_k(N, q, J, A2)
    bad = np.zeros(grid, dtype=bool)
    for kabs in range(1, q.K + 1):
        thr = q.gamma / float(q.af.delta(kabs))
        t = targets[kabs - 1]
        x = kabs * omegas
        pos = np.searchsorted(t, x)
        dist = np.full(grid, math.inf)
        inside = pos < len(t)
        dist[inside] = np.abs(t[pos[inside]] - x[inside])
        left = pos > 0
        dist[left] = np.minimum(dist[left], np.abs(x[left] - t[pos[left] - 1]))
        bad |= dist < thr
    return float(np.count_nonzero(bad)) / grid


@dataclass
class MeasureScan:
    gammas: list
    fractions: list
    grid: int
    slope: Optional[float]  # log-log fit over the positive-fraction rows

    def rows(self):
        out = [
            [g, self.grid, f, ""] for g, f in zip(self.gammas, self.fractions)
        ]
        if self.slope is not None:
            out.append(["slope_fit", self.grid, "", self.slope])
        return out


def measure_scan(
    af: ApproximationFunction,
    gammas,
    grid: int,
    K: int,
    J: int,
    N_builder: Callable[[np.ndarray], NormalForm],
    A2_override: Optional[float] = None,
) -> MeasureScan:
    """Excluded fraction per gamma plus the fitted log-log scaling slope."""
    fractions = []
    for g in gammas:
        q = ResonanceQuery(af=af, gamma=float(g), K=K, J=J, A2=A2_override)
        fractions.append(excluded_fraction(q, N_builder, grid))
    pts = [(g, f) for g, f in zip(gammas, fractions) if f > 0.0]
    slope = None
    if len(pts) >= 2:
        lg = np.log([p[0] for p in pts])
        lf = np.log([p[1] for p in pts])
        slope = float(np.polyfit(lg, lf, 1)[0])
    return MeasureScan(list(map(float, gammas)), fractions, grid, slope)


# ---------------------------------------------------------------------------
# Russmann measure bound


@dataclass
class RussmannReport:
    measured: float
    bound: float
    slack: float
    precondition_ok: bool

    @property
    def ok(self) -> bool:
        return self.precondition_ok and self.measured <= self.bound + self.slack


def russmann_check(
    f: Callable,
    a: float,
    b: float,
    q: int,
    beta: float,
    eps: float,
    samples: int = 100_000,
) -> RussmannReport:
    """Grid measure of {|f| <= eps} against 4 (q! eps / (2 beta))^(1/q).

    The derivative hypothesis |f^(q)| >= beta is re-checked by finite
    differences on the grid; when it fails the report carries
    precondition_ok = False and the bound comparison is not meaningful.
    Grid resolution contributes 2h per sub-level crossing, reported as
    slack.
    """
    if samples < 10 * (q + 2):
        raise ValueError("too few samples for the requested derivative order")
    h = (b - a) / samples
    t = a + (np.arange(samples) + 0.5) * h
    try:
        vals = np.asarray(f(t), dtype=float)
        if vals.shape != t.shape:
            raise TypeError
    except Exception:
        vals = np.array([float(f(x)) for x in t])

    below = np.abs(vals) <= eps
    measured = float(np.count_nonzero(below)) * h
    crossings = int(np.count_nonzero(np.diff(below.astype(int)) != 0)) + 2
    slack = 2.0 * crossings * h

    deriv = vals
    for _ in range(q):
        deriv = np.gradient(deriv, h)
    pad = 2 * q + 1  # gradient endpoints are one-sided, trim them
    interior = np.abs(deriv[pad:-pad]) if samples > 2 * pad + 4 else np.abs(deriv)
    precondition_ok = bool(np.min(interior) >= beta * (1.0 - 5e-2))

    bound = 4.0 * (math.factorial(q) * eps / (2.0 * beta)) ** (1.0 / q)
    return RussmannReport(
        measured=measured, bound=bound, slack=slack, precondition_ok=precondition_ok
    )
