"""Three-body critical-coupling spectral toolkit."""

from .core import (
    GaussianTerm,
    JacobiFrame,
    MassConfig,
    PairPotential,
    admissibility_witness,
    evaluate_potential,
    jacobi_frame,
    pair_scale,
)
from .twobody import (
    BSKernel,
    RadialGrid,
    ResonantPair,
    bound_state_energy,
    bs_matrix,
    fiber_bs_resolvent,
    grid_for_potential,
    klaus_simon_check,
    radial_grid,
    radial_grid_gauss,
    top_eigenpair,
    tune_resonance,
)

__version__ = "0.1.0"
