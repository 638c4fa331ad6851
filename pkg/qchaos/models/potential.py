"""Polynomial 2-D potential, actions and the phase space point type.

Units: hbar = 1 throughout, lengths and times are dimensionless.
"""
import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Tuple

import numba as nb
import numpy as np
from scipy.optimize import minimize

from ..errors import ModelError

# Storage order of the coefficient vector handed to the compiled kernels.
COEFF_NAMES = ('v0', 'v11', 'v2', 'v22', 'v13', 'v4', 'v24', 'v44')


@dataclass(frozen=True)
class PotentialCoeffs:
    """Coefficients of

    V = v0 + v11 xy + v2 (x^2+y^2) + v22 x^2 y^2 + v13 (xy^3 + x^3 y)
        + v4 (x^4+y^4) + v24 (x^2 y^4 + x^4 y^2) + v44 x^4 y^4
    """
    v0: float = 0.0
    v11: float = 0.0
    v2: float = 0.0
    v22: float = 0.0
    v13: float = 0.0
    v4: float = 0.0
    v24: float = 0.0
    v44: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value):
                raise ModelError(f"Coefficient {f.name} must be finite, got {value}")
            object.__setattr__(self, f.name, value)

    @classmethod
    def classical(cls, v2: float, v22: float) -> 'PotentialCoeffs':
        """Pullen-Edmonds potential v2 (x^2+y^2) + v22 x^2 y^2"""
        if v2 <= 0 or v22 < 0:
            raise ModelError(f"Pullen-Edmonds needs v2 > 0 and v22 >= 0, got v2={v2}, v22={v22}")
        return cls(v2=v2, v22=v22)

    @classmethod
    def from_array(cls, values) -> 'PotentialCoeffs':
        return cls(**dict(zip(COEFF_NAMES, (float(v) for v in values))))

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> 'PotentialCoeffs':
        return cls(**{name: float(data.get(name, 0.0)) for name in COEFF_NAMES})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in COEFF_NAMES], dtype=np.float64)

    def to_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in COEFF_NAMES}

    @property
    def is_parity_even(self) -> bool:
        return self.v11 == 0.0 and self.v13 == 0.0

    def shifted(self, delta_v0: float) -> 'PotentialCoeffs':
        return replace(self, v0=self.v0 + delta_v0)


@dataclass(frozen=True)
class ActionParams:
    """Mass, log normalization and potential of a (classical or quantum) action."""
    mass: float = 1.0
    log_norm: float = 0.0
    coeffs: PotentialCoeffs = field(default_factory=PotentialCoeffs)

    def __post_init__(self):
        mass = float(self.mass)
        if not math.isfinite(mass) or mass <= 0:
            raise ModelError(f"Mass must be positive and finite, got {mass}")
        if not math.isfinite(float(self.log_norm)):
            raise ModelError(f"log_norm must be finite, got {self.log_norm}")
        object.__setattr__(self, 'mass', mass)
        object.__setattr__(self, 'log_norm', float(self.log_norm))

    @classmethod
    def classical(cls, v2: float = 0.5, v22: float = 0.25, mass: float = 1.0) -> 'ActionParams':
        return cls(mass=mass, log_norm=0.0, coeffs=PotentialCoeffs.classical(v2, v22))

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> 'ActionParams':
        return cls(
            mass=float(data.get('mass', 1.0)),
            log_norm=float(data.get('log_norm', 0.0)),
            coeffs=PotentialCoeffs.from_dict(data),
        )

    def to_dict(self) -> Dict[str, float]:
        data = self.coeffs.to_dict()
        data['mass'] = self.mass
        data['log_norm'] = self.log_norm
        return data


@dataclass(frozen=True)
class PhaseState:
    """One point (x, y, px, py) of phase space at time t."""
    x: float
    y: float
    px: float
    py: float
    t: float = 0.0

    def __post_init__(self):
        for name in ('x', 'y', 'px', 'py', 't'):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ModelError(f"Phase state component {name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.px, self.py], dtype=np.float64)

    @classmethod
    def from_array(cls, values, t: float = 0.0) -> 'PhaseState':
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]), float(t))


# --- kernels ----------------------------------------------------------------
# c is the coefficient vector in COEFF_NAMES order. The plain functions work on
# numpy arrays; the *_nb twins are their compiled versions for inner loops.

def _potential(c, x, y):
    x2 = x * x
    y2 = y * y
    return (c[0] + c[1] * x * y + c[2] * (x2 + y2) + c[3] * x2 * y2
            + c[4] * (x * y2 * y + x2 * x * y) + c[5] * (x2 * x2 + y2 * y2)
            + c[6] * (x2 * y2 * y2 + x2 * x2 * y2) + c[7] * x2 * x2 * y2 * y2)


def _gradient(c, x, y):
    x2 = x * x
    y2 = y * y
    gx = (c[1] * y + 2.0 * c[2] * x + 2.0 * c[3] * x * y2 + c[4] * (y2 * y + 3.0 * x2 * y)
          + 4.0 * c[5] * x2 * x + c[6] * (2.0 * x * y2 * y2 + 4.0 * x2 * x * y2)
          + 4.0 * c[7] * x2 * x * y2 * y2)
    gy = (c[1] * x + 2.0 * c[2] * y + 2.0 * c[3] * x2 * y + c[4] * (3.0 * x * y2 + x2 * x)
          + 4.0 * c[5] * y2 * y + c[6] * (4.0 * x2 * y2 * y + 2.0 * x2 * x2 * y)
          + 4.0 * c[7] * x2 * x2 * y2 * y)
    return gx, gy


def _hessian(c, x, y):
    x2 = x * x
    y2 = y * y
    hxx = (2.0 * c[2] + 2.0 * c[3] * y2 + 6.0 * c[4] * x * y + 12.0 * c[5] * x2
           + c[6] * (2.0 * y2 * y2 + 12.0 * x2 * y2) + 12.0 * c[7] * x2 * y2 * y2)
    hyy = (2.0 * c[2] + 2.0 * c[3] * x2 + 6.0 * c[4] * x * y + 12.0 * c[5] * y2
           + c[6] * (12.0 * x2 * y2 + 2.0 * x2 * x2) + 12.0 * c[7] * x2 * x2 * y2)
    hxy = (c[1] + 4.0 * c[3] * x * y + 3.0 * c[4] * (x2 + y2)
           + 8.0 * c[6] * (x * y2 * y + x2 * x * y) + 16.0 * c[7] * x2 * x * y2 * y)
    return hxx, hxy, hyy


potential_nb = nb.njit(cache=True, nogil=True)(_potential)
gradient_nb = nb.njit(cache=True, nogil=True)(_gradient)
hessian_nb = nb.njit(cache=True, nogil=True)(_hessian)


# --- public operations ------------------------------------------------------

def eval_potential(c: PotentialCoeffs, x, y):
    """Evaluate V at (x, y); scalars or numpy arrays of matching shape."""
    value = _potential(c.as_array(), np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return float(value) if np.ndim(value) == 0 else value


def grad_potential(c: PotentialCoeffs, x, y) -> Tuple:
    """Analytic (dV/dx, dV/dy)."""
    gx, gy = _gradient(c.as_array(), np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    if np.ndim(gx) == 0:
        return float(gx), float(gy)
    return gx, gy


def hessian_potential(c: PotentialCoeffs, x: float, y: float) -> np.ndarray:
    """Analytic 2x2 matrix of second derivatives (symmetric)."""
    hxx, hxy, hyy = _hessian(c.as_array(), float(x), float(y))
    return np.array([[hxx, hxy], [hxy, hyy]])


def hamiltonian(action: ActionParams, state: PhaseState) -> float:
    """H = (px^2 + py^2) / 2m + V(x, y)"""
    kinetic = (state.px ** 2 + state.py ** 2) / (2.0 * action.mass)
    return kinetic + eval_potential(action.coeffs, state.x, state.y)


def potential_minimum(c: PotentialCoeffs, start: Tuple[float, float] = (0.0, 0.0)) -> Tuple[float, float, float]:
    """Local minimum of V nearest to `start`; returns (x, y, V_min)."""
    arr = c.as_array()
    result = minimize(
        lambda p: potential_nb(arr, p[0], p[1]),
        np.asarray(start, dtype=np.float64),
        jac=lambda p: np.array(gradient_nb(arr, p[0], p[1])),
        method='BFGS',
        options={'gtol': 1e-12},
    )
    x, y = result.x
    return float(x), float(y), float(result.fun)
