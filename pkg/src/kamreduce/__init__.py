"""Numerical KAM reducibility for quasi-periodic linear Hamiltonian systems.

Reduces finite truncations of linear quasi-periodic Hamiltonian systems
(derivative wave and half-wave models) to constant coefficients by
iterated canonical conjugation under Brjuno-Russmann non-resonance
conditions, and checks every quantitative estimate involved at desk
scale: norms and Toeplitz-Lipschitz semi-norms, homological solutions,
flow transforms, measure of excluded frequencies, and an independent
integration cross-check.
"""

from .approxfn import ApproximationFunction, GammaQuery, brjuno_sum, gamma_ab, xi_schedule
from .hamrep import NormalForm, QuadHam, TLMatrix, iteration_norm, tl_seminorm, vf_norm
from .homological import DivisorViolation, solve as solve_homological
from .kamloop import KamSchedule, build_schedule, compose_transform, kam_step, reduce
from .models import halfwave_hamiltonian, wave_hamiltonian
from .smalldiv import ResonanceQuery, excluded_fraction, min_margin

__version__ = "0.1.0"

__all__ = [
    "ApproximationFunction",
    "GammaQuery",
    "NormalForm",
    "QuadHam",
    "TLMatrix",
    "KamSchedule",
    "ResonanceQuery",
    "DivisorViolation",
    "brjuno_sum",
    "gamma_ab",
    "xi_schedule",
    "iteration_norm",
    "tl_seminorm",
    "vf_norm",
    "solve_homological",
    "build_schedule",
    "kam_step",
    "reduce",
    "compose_transform",
    "halfwave_hamiltonian",
    "wave_hamiltonian",
    "excluded_fraction",
    "min_margin",
    "__version__",
]
