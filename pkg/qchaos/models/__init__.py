from .potential import (
    COEFF_NAMES,
    ActionParams,
    PhaseState,
    PotentialCoeffs,
    eval_potential,
    grad_potential,
    hamiltonian,
    hessian_potential,
    potential_minimum,
)
from .fields import Grid2D, Point, ScalarField2D, TransitionRecord

__all__ = [
    'COEFF_NAMES', 'ActionParams', 'PhaseState', 'PotentialCoeffs',
    'eval_potential', 'grad_potential', 'hamiltonian', 'hessian_potential',
    'potential_minimum', 'Grid2D', 'Point', 'ScalarField2D', 'TransitionRecord',
]
