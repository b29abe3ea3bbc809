"""Approximation-function calculus.

An approximation function Delta maps [0, inf) to [1, inf), is
non-decreasing with Delta(0) = 1, grows subexponentially in the sense
that log Delta(t)/t decreases to zero, and has a finite Brjuno integral
int_1^inf log Delta(t)/t^2 dt.  Such functions quantify how slowly small
divisors |k.omega + l.Omega| may decay with |k|; the built-in families are

    power      Delta(t) = exp(t^alpha / alpha),          0 < alpha < 1
    logdamped  Delta(t) = exp(t / (1 + log^alpha(1+t))), alpha > 1
    logpower   Delta(t) = exp(t / log^alpha t),          alpha > 1
    constant   Delta(t) = 1
    tabulated  monotone piecewise-linear interpolation of (t, log Delta)

The logpower exponent t/log^alpha t is not monotone near t = 1; it is
regularised by clamping log t from below at alpha, which leaves the
family unchanged for t >= e^alpha and makes Delta non-decreasing with
Delta(0) = 1.

Note on the decay conditions: the ratio condition is implemented on
log Delta(t)/t (non-increasing beyond a family-specific onset), and the
Brjuno integral uses the exponent-2 integrand log Delta(t)/t^2.  Both
are required for the built-in families to qualify at all; the onset is
0 for every built-in family and the first grid point for tabulated data.

Besides evaluation and validation this module provides the three derived
quantities the iteration needs: the suprema
Gamma_ab(sigma) = sup_t (1+t)^a Delta(t)^b e^(-t sigma), the schedule
sigma_nu with certified product bound Xi <= e^(sigma T), and partial
Brjuno sums sum_k Delta(|k|)^(-1/2) over Z^n with integral tail bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "ApproximationFunction",
    "ApproxFnError",
    "InfeasibleScheduleError",
    "GammaQuery",
    "ValidationReport",
    "XiScheduleResult",
    "BrjunoSumResult",
    "gamma_ab",
    "log_gamma_ab",
    "xi_schedule",
    "find_feasible_T",
    "brjuno_sum",
    "validate_af",
    "shell_count",
]

_FAMILIES = ("power", "logdamped", "logpower", "constant", "tabulated")


class ApproxFnError(ValueError):
    """Domain or overflow error in approximation-function arithmetic."""


class InfeasibleScheduleError(ApproxFnError):
    """The requested sigma budget cannot be met from the given tail start T."""


@dataclass(frozen=True)
class ApproximationFunction:
    """One approximation function from the families listed in the module docs."""

    family: str
    alpha: float = 0.0
    table: tuple = ()  # ((t0, delta0), ...) for the tabulated family

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ApproxFnError(f"unknown family {self.family!r}")
        if self.family == "power" and not 0.0 < self.alpha < 1.0:
            raise ApproxFnError("power family needs 0 < alpha < 1")
        if self.family in ("logdamped", "logpower") and not self.alpha > 1.0:
            raise ApproxFnError(f"{self.family} family needs alpha > 1")
        if self.family == "tabulated":
            ts = [row[0] for row in self.table]
            ds = [row[1] for row in self.table]
            if len(ts) < 2 or ts[0] != 0.0 or ds[0] != 1.0:
                raise ApproxFnError("tabulated family needs a grid starting at (0, 1)")
            if any(t1 >= t2 for t1, t2 in zip(ts, ts[1:])):
                raise ApproxFnError("tabulated grid must be strictly increasing in t")
            if any(d2 < d1 for d1, d2 in zip(ds, ds[1:])) or min(ds) < 1.0:
                raise ApproxFnError("tabulated values must be non-decreasing and >= 1")

    # -- evaluation ------------------------------------------------------

    def log_delta(self, t):
        """log Delta(t), vectorised over numpy arrays."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ApproxFnError("Delta is defined for t >= 0 only")
        if self.family == "constant":
            return np.zeros_like(t)
        if self.family == "power":
            return t**self.alpha / self.alpha
        if self.family == "logdamped":
            return t / (1.0 + np.log1p(t) ** self.alpha)
        if self.family == "logpower":
            ell = np.maximum(np.log(np.maximum(t, 1e-300)), self.alpha)
            return t / ell**self.alpha
        # tabulated: piecewise linear in (t, log Delta), last slope extrapolated
        ts = np.array([row[0] for row in self.table])
        ls = np.log([row[1] for row in self.table])
        out = np.interp(t, ts, ls)
        beyond = t > ts[-1]
        if np.any(beyond):
            slope = (ls[-1] - ls[-2]) / (ts[-1] - ts[-2])
            out = np.where(beyond, ls[-1] + slope * (t - ts[-1]), out)
        return out

    def dlog_delta(self, t):
        """d/dt log Delta(t); analytic per family, finite differences for tables."""
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return np.zeros_like(t)
        if self.family == "power":
            return np.maximum(t, 1e-300) ** (self.alpha - 1.0)
        if self.family == "logdamped":
            L = np.log1p(t)
            denom = 1.0 + L**self.alpha
            return (denom - t * self.alpha * L ** (self.alpha - 1.0) / (1.0 + t)) / denom**2
        if self.family == "logpower":
            ell = np.maximum(np.log(np.maximum(t, 1e-300)), self.alpha)
            live = np.log(np.maximum(t, 1e-300)) > self.alpha
            return ell**-self.alpha * np.where(live, 1.0 - self.alpha / ell, 1.0)
        h = np.maximum(1e-6 * np.maximum(t, 1.0), 1e-9)
        return (self.log_delta(t + h) - self.log_delta(np.maximum(t - h, 0.0))) / (
            h + np.minimum(t, h)
        )

    def delta(self, t):
        """Delta(t) as a float or array; raises on overflow past float64."""
        ld = self.log_delta(t)
        if np.any(ld > 700.0):
            raise ApproxFnError("Delta(t) overflows float64; work with log_delta")
        return np.exp(ld)

    def __call__(self, t):
        return self.delta(t)

    # -- config round trip ----------------------------------------------

    def to_config(self) -> dict:
        cfg = {"family": self.family}
        if self.family in ("power", "logdamped", "logpower"):
            cfg["alpha"] = self.alpha
        if self.family == "tabulated":
            cfg["table"] = [list(row) for row in self.table]
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "ApproximationFunction":
        return cls(
            family=cfg["family"],
            alpha=float(cfg.get("alpha", 0.0)),
            table=tuple(tuple(row) for row in cfg.get("table", ())),
        )


@dataclass(frozen=True)
class GammaQuery:
    """Query for Gamma_ab(sigma) = sup_t (1+t)^a Delta(t)^b e^(-t sigma)."""

    a: int
    b: int
    sigma: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ApproxFnError("exponents a, b must be non-negative integers")
        if not self.sigma > 0:
            raise ApproxFnError("sigma must be positive")


# ---------------------------------------------------------------------------
# Gamma suprema


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, lo, hi, reltol=1e-12, maxit=200):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxit):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
        if b - a <= reltol * max(1.0, abs(a)):
            break
    t = 0.5 * (a + b)
    return t, f(t)


def log_gamma_ab(af: ApproximationFunction, q: GammaQuery) -> float:
    """log of Gamma_ab(sigma), by log-grid bracketing plus golden refinement."""
    a, b, sigma = q.a, q.b, q.sigma

    def phi(t):
        return a * math.log1p(t) + b * float(af.log_delta(t)) - sigma * t

    t_hi = 1e9
    while True:
        grid = np.concatenate(([0.0], np.geomspace(1e-9, t_hi, 4096)))
        vals = a * np.log1p(grid) + b * af.log_delta(grid) - sigma * grid
        i = int(np.argmax(vals))
        if i < len(grid) - 1:
            break
        if t_hi >= 1e40:
            raise ApproxFnError(
                f"Gamma_{a}{b}({sigma:g}) bracketing failed: objective still "
                "increasing at t = 1e40 (Delta grows too fast for this sigma)"
            )
        t_hi *= 1e3
    lo = grid[i - 1] if i > 0 else 0.0
    hi = grid[i + 1]
    _, best = _golden_max(phi, lo, hi)
    return max(best, phi(0.0))


def gamma_ab(af: ApproximationFunction, q: GammaQuery) -> float:
    """Gamma_ab(sigma) as a float; raises if the supremum overflows float64."""
    lg = log_gamma_ab(af, q)
    if lg > 700.0:
        raise ApproxFnError(
            f"Gamma_{q.a}{q.b}({q.sigma:g}) = exp({lg:.3g}) overflows float64"
        )
    return math.exp(lg)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    delta_at_zero_ok: bool
    nondecreasing_ok: bool
    ratio_decay_ok: bool
    ratio_onset: float
    brjuno_partial: float
    brjuno_tail: float
    brjuno_convergent: bool
    integrand_exponent: int

    @property
    def brjuno_total(self) -> float:
        return self.brjuno_partial + self.brjuno_tail

    @property
    def all_ok(self) -> bool:
        return (
            self.delta_at_zero_ok
            and self.nondecreasing_ok
            and self.ratio_decay_ok
            and self.brjuno_convergent
        )


def _ratio_onset(af: ApproximationFunction) -> float:
    return af.table[1][0] if af.family == "tabulated" else 0.0


def validate_af(
    af: ApproximationFunction, t_max: float, n_grid: int, integrand_exponent: int = 2
) -> ValidationReport:
    """Check the defining properties of Delta on a log grid up to t_max.

    Monotonicity and the decay of log Delta(t)/t are checked pointwise on
    the grid; the Brjuno integral int_1^t_max log Delta(t)/t^q dt
    (q = integrand_exponent, default 2) is evaluated numerically and a
    tail estimate is attached by fitting the local growth exponent of
    log Delta at t_max.  A fitted exponent too large for convergence sets
    the divergence flag instead of a finite tail.
    """
    if not t_max > 1:
        raise ApproxFnError("t_max must exceed 1")
    if n_grid < 16:
        raise ApproxFnError("n_grid must be at least 16")

    grid = np.geomspace(1e-6, t_max, n_grid)
    ld = af.log_delta(grid)
    delta0_ok = float(af.log_delta(0.0)) == 0.0
    nondec = bool(np.all(np.diff(ld) >= -1e-15 * np.maximum(np.abs(ld[:-1]), 1.0)))

    onset = _ratio_onset(af)
    mask = grid >= max(onset, 1e-6)
    ratio = ld[mask] / grid[mask]
    ratio_ok = bool(np.all(np.diff(ratio) <= 1e-12 * np.maximum(np.abs(ratio[:-1]), 1e-300)))

    q = integrand_exponent
    u_grid = np.linspace(0.0, math.log(t_max), max(n_grid, 256))
    t_int = np.exp(u_grid)
    integrand = af.log_delta(t_int) * np.exp(u_grid * (1 - q))  # dt = e^u du
    partial = float(np.trapezoid(integrand, u_grid))

    # local power fit log Delta ~ c t^g on the last decade
    t1, t2 = t_max / 10.0, t_max
    l1, l2 = float(af.log_delta(t1)), float(af.log_delta(t2))
    if l2 <= 0.0:  # constant family
        g = 0.0
        tail = 0.0
        convergent = True
    else:
        g = (math.log(max(l2, 1e-300)) - math.log(max(l1, 1e-300))) / math.log(10.0)
        convergent = g < q - 1 - 1e-9
        tail = l2 * t_max ** (1 - q) / (q - 1 - g) if convergent else math.inf

    return ValidationReport(
        delta_at_zero_ok=delta0_ok,
        nondecreasing_ok=nondec,
        ratio_decay_ok=ratio_ok,
        ratio_onset=onset,
        brjuno_partial=partial,
        brjuno_tail=tail,
        brjuno_convergent=convergent,
        integrand_exponent=q,
    )


# ---------------------------------------------------------------------------
# the sigma_nu schedule and the Xi certificate


@dataclass
class XiScheduleResult:
    sigmas: np.ndarray
    log_xi_bound: float  # Xi <= exp(sigma * T)
    sigma_budget: float
    sigma_sum: float
    T: float
    kappa: float
    precond_integral: float
    t_points: np.ndarray = field(default=None, repr=False)

    @property
    def xi_bound(self) -> float:
        return math.exp(self.log_xi_bound) if self.log_xi_bound <= 700 else math.inf


def _schedule_weight(af: ApproximationFunction, t):
    """delta(t) = log((1+t)^2 Delta(t)^3), the exponent controlling Gamma_23."""
    t = np.asarray(t, dtype=float)
    return 2.0 * np.log1p(t) + 3.0 * af.log_delta(t)


def _tail_integral(af: ApproximationFunction, T: float) -> float:
    """int_T^inf [2 log(1+t) + 3 log Delta(t)] / t^2 dt, tail included."""
    # the 2 log(1+t) part in closed form
    part_log = 2.0 * (math.log1p(T) / T + math.log((1.0 + T) / T))
    # the 3 log Delta part on u = log t with a fitted power tail
    U0, U1 = math.log(T), math.log(T) + 60.0
    h = lambda u: 3.0 * float(af.log_delta(math.exp(u))) * math.exp(-u)
    val, _ = integrate.quad(h, U0, U1, limit=400)
    hU = h(U1)
    if hU > 1e-300:
        du = 0.5
        slope = (math.log(max(h(U1 + du), 1e-300)) - math.log(hU)) / du
        if slope < -1e-3:
            val += hU / (-slope)
        else:
            val = math.inf
    return part_log + val


def xi_schedule(
    af: ApproximationFunction, sigma: float, kappa: float, T: float
) -> XiScheduleResult:
    """Construct the non-increasing sequence sigma_nu with sum <= sigma.

    Takes t_nu = kappa^(nu+1) T and sigma_nu = delta(t_nu)/t_nu with
    delta(t) = log((1+t)^2 Delta^3(t)).  Feasibility requires
    (1/log kappa) int_T^inf delta(t)/t^2 dt < sigma, checked numerically;
    on success the product of Gamma_23(sigma_nu)^(kappa^-(nu+1)) is
    certified to stay below e^(sigma T).  The sequence is truncated once
    sigma_nu < 1e-15 sigma and the estimated remainder of the series is
    folded into the last retained term.
    """
    if not (sigma > 0 and kappa > 1 and T > 0):
        raise ApproxFnError("need sigma > 0, kappa > 1, T > 0")
    integral = _tail_integral(af, T) / math.log(kappa)
    if not integral < sigma:
        raise InfeasibleScheduleError(
            f"schedule infeasible: precondition integral {integral:.6g} >= sigma "
            f"{sigma:.6g}; enlarge sigma or T"
        )

    sigmas, t_points = [], []
    nu = 0
    while True:
        t_nu = kappa ** (nu + 1) * T
        s_nu = float(_schedule_weight(af, t_nu)) / t_nu
        if s_nu < 1e-15 * sigma or nu > 20000:
            # fold the series remainder into the first (largest) term so the
            # sequence stays non-increasing; the remainder is below machine
            # relevance by the stopping rule
            remainder = _tail_integral(af, t_nu / kappa) / math.log(kappa)
            if sigmas and math.isfinite(remainder):
                sigmas[0] += min(remainder, 1e-12 * sigma)
            break
        sigmas.append(s_nu)
        t_points.append(t_nu)
        nu += 1

    sigmas = np.array(sigmas)
    total = float(np.sum(sigmas))
    if total > sigma * (1.0 + 1e-9):
        raise InfeasibleScheduleError(
            f"constructed sum {total:.6g} exceeds sigma {sigma:.6g}"
        )
    return XiScheduleResult(
        sigmas=sigmas,
        log_xi_bound=sigma * T,
        sigma_budget=sigma,
        sigma_sum=total,
        T=T,
        kappa=kappa,
        precond_integral=integral,
        t_points=np.array(t_points),
    )


def find_feasible_T(
    af: ApproximationFunction, sigma: float, kappa: float, margin: float = 0.999
) -> float:
    """Smallest power-of-two T whose tail integral fits the sigma budget."""
    T = 1.0
    while T <= 1e12:
        if _tail_integral(af, T) / math.log(kappa) < margin * sigma:
            return T
        T *= 2.0
    raise InfeasibleScheduleError(
        f"no feasible T up to 1e12 for sigma = {sigma:g}; enlarge sigma"
    )


# ---------------------------------------------------------------------------
# Brjuno sums over Z^n


def shell_count(n: int, m: int) -> int:
    """Number of lattice points k in Z^n with |k|_1 = m."""
    if m == 0:
        return 1
    return sum(
        2**j * math.comb(n, j) * math.comb(m - 1, j - 1) for j in range(1, min(n, m) + 1)
    )


@dataclass
class BrjunoSumResult:
    partial: float
    tail_bound: float
    summable: bool

    @property
    def total_bound(self) -> float:
        return self.partial + self.tail_bound


def brjuno_sum(af: ApproximationFunction, n: int, K_max: int) -> BrjunoSumResult:
    """Partial sum of Delta(|k|)^(-1/2) over |k|_1 <= K_max plus a tail bound.

    The partial sum is exact via lattice-shell counting.  The tail is
    bounded by 2^n int_K^inf binom(n+t, n) d(log sqrt(Delta)) / sqrt(Delta),
    valid when t^n/Delta(t) decays; when it does not (e.g. the constant
    family) the result carries tail_bound = inf and summable = False.
    """
    if n < 1 or K_max < 1:
        raise ApproxFnError("need n >= 1 and K_max >= 1")
    ms = np.arange(K_max + 1)
    counts = np.array([shell_count(n, int(m)) for m in ms], dtype=float)
    partial = float(np.sum(counts * np.exp(-0.5 * af.log_delta(ms))))

    # proviso: t^n / Delta(t) must decay at infinity
    probes = np.array([max(K_max, 10.0) * 1e3, max(K_max, 10.0) * 1e6])
    vals = n * np.log(probes) - af.log_delta(probes)
    if not (vals[1] < vals[0] and vals[1] < 0.0):
        return BrjunoSumResult(partial=partial, tail_bound=math.inf, summable=False)

    lognfact = math.lgamma(n + 1)

    def f(u):
        t = math.exp(u)
        logbinom = sum(math.log(t + i) for i in range(1, n + 1)) - lognfact
        dld = 0.5 * float(af.dlog_delta(t))
        logval = n * math.log(2.0) + logbinom - 0.5 * float(af.log_delta(t))
        return dld * math.exp(logval + u)  # du measure

    U0, U1 = math.log(K_max), math.log(K_max) + 40.0
    tail, _ = integrate.quad(f, U0, U1, limit=400)
    if f(U1) > 1e-250:
        return BrjunoSumResult(partial=partial, tail_bound=math.inf, summable=False)
    return BrjunoSumResult(partial=partial, tail_bound=float(tail), summable=True)
