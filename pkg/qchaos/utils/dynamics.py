"""Real-time Hamiltonian flow H = |p|^2/2m + V for classical or fitted actions.

Fourth-order symplectic composition (Yoshida) of the drift-kick splitting,
Poincare sections, energy-shell sampling and finite-time maximal Lyapunov
exponents from the tangent map of the same integrator.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numba as nb
import numpy as np
from scipy.optimize import root
from tqdm import tqdm

from ..errors import ModelError, NumericalError, ShellSamplingError, TrajectoryEscapeError
from ..models import ActionParams, PhaseState, eval_potential, hamiltonian, potential_minimum
from ..models.potential import _potential, gradient_nb, hessian_nb

logger = logging.getLogger(__name__)

ESCAPE_BOX = 50.0

_CBRT2 = 2.0 ** (1.0 / 3.0)
_W1 = 1.0 / (2.0 - _CBRT2)
_W0 = -_CBRT2 / (2.0 - _CBRT2)
# drift and kick weights of the composition
DRIFT = np.array([0.5 * _W1, 0.5 * (_W0 + _W1), 0.5 * (_W0 + _W1), 0.5 * _W1])
KICK = np.array([_W1, _W0, _W1])

# integration status codes returned by the kernels
_OK, _ESCAPED, _TIME_CAP, _RANGE = 0, 1, 2, 3

Seed = Union[int, np.random.SeedSequence]


# --- compiled kernels -------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _step(c, mass, s, dt, drift, kick):
    for i in range(3):
        s[0] += drift[i] * dt * s[2] / mass
        s[1] += drift[i] * dt * s[3] / mass
        gx, gy = gradient_nb(c, s[0], s[1])
        s[2] -= kick[i] * dt * gx
        s[3] -= kick[i] * dt * gy
    s[0] += drift[3] * dt * s[2] / mass
    s[1] += drift[3] * dt * s[3] / mass


@nb.njit(cache=True, nogil=True)
def _tangent_step(c, mass, s, v, dt, drift, kick):
    """One step of the flow and of its linearization (the exact tangent map of _step)."""
    for i in range(3):
        s[0] += drift[i] * dt * s[2] / mass
        s[1] += drift[i] * dt * s[3] / mass
        v[0] += drift[i] * dt * v[2] / mass
        v[1] += drift[i] * dt * v[3] / mass
        gx, gy = gradient_nb(c, s[0], s[1])
        hxx, hxy, hyy = hessian_nb(c, s[0], s[1])
        s[2] -= kick[i] * dt * gx
        s[3] -= kick[i] * dt * gy
        v2 = v[2] - kick[i] * dt * (hxx * v[0] + hxy * v[1])
        v3 = v[3] - kick[i] * dt * (hxy * v[0] + hyy * v[1])
        v[2] = v2
        v[3] = v3
    s[0] += drift[3] * dt * s[2] / mass
    s[1] += drift[3] * dt * s[3] / mass
    v[0] += drift[3] * dt * v[2] / mass
    v[1] += drift[3] * dt * v[3] / mass


@nb.njit(cache=True, nogil=True)
def _outside(s, box):
    return abs(s[0]) > box or abs(s[1]) > box


@nb.njit(cache=True, nogil=True)
def _integrate_kernel(c, mass, s0, dt, n_steps, stride, box, drift, kick):
    n_out = n_steps // stride + 1
    out = np.empty((n_out, 4))
    s = s0.copy()
    out[0] = s
    k = 1
    for step in range(1, n_steps + 1):
        _step(c, mass, s, dt, drift, kick)
        if _outside(s, box):
            return out[:k], _ESCAPED
        if step % stride == 0:
            out[k] = s
            k += 1
    return out[:k], _OK


@nb.njit(cache=True, nogil=True)
def _lyapunov_kernel(c, mass, s0, v0, dt, n_steps, renorm_every, trace_every, box, drift, kick):
    s = s0.copy()
    v = v0 / np.sqrt(np.sum(v0 * v0))
    log_growth = 0.0
    n_trace = n_steps // (renorm_every * trace_every) + 1
    trace = np.empty((n_trace, 2))
    k = 0
    renorms = 0
    for step in range(1, n_steps + 1):
        _tangent_step(c, mass, s, v, dt, drift, kick)
        if _outside(s, box):
            return log_growth, trace[:k], _ESCAPED
        if step % renorm_every == 0 or step == n_steps:
            norm = np.sqrt(np.sum(v * v))
            if not (norm > 0.0 and norm < 1e300):
                return log_growth, trace[:k], _RANGE
            log_growth += np.log(norm)
            v /= norm
            renorms += 1
            if renorms % trace_every == 0 and k < n_trace:
                trace[k, 0] = step * dt
                trace[k, 1] = log_growth / (step * dt)
                k += 1
    return log_growth, trace[:k], _OK


@nb.njit(cache=True, nogil=True)
def _two_trajectory_kernel(c, mass, s0, direction, dt, n_steps, d0, threshold, box, drift, kick):
    s = s0.copy()
    u = direction / np.sqrt(np.sum(direction * direction))
    q = s0 + d0 * u
    log_growth = 0.0
    for step in range(1, n_steps + 1):
        _step(c, mass, s, dt, drift, kick)
        _step(c, mass, q, dt, drift, kick)
        if _outside(s, box) or _outside(q, box):
            return log_growth, _ESCAPED
        diff = q - s
        distance = np.sqrt(np.sum(diff * diff))
        if distance > threshold or step == n_steps:
            log_growth += np.log(distance / d0)
            q = s + diff * (d0 / distance)
    return log_growth, _OK


@nb.njit(cache=True, nogil=True)
def _section_kernel(c, mass, s0, dt, axis, value, direction, n_crossings, max_steps, box, drift, kick):
    """Crossings of coordinate `axis` through `value` with momentum sign `direction`.

    Each crossing is refined by bisecting the sub-step from the state before
    the crossing; integration then continues from the unrefined state.
    Rows are (q, p, normal momentum, t).
    """
    other = 1 - axis
    points = np.empty((n_crossings, 4))
    s = s0.copy()
    found = 0
    for step in range(1, max_steps + 1):
        prev = s.copy()
        _step(c, mass, s, dt, drift, kick)
        if _outside(s, box):
            return points[:found], _ESCAPED
        g_prev = direction * (prev[axis] - value)
        g_next = direction * (s[axis] - value)
        if g_prev < 0.0 and g_next >= 0.0:
            lo = 0.0
            mid = dt
            hi = dt
            trial = s.copy()
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                trial = prev.copy()
                _step(c, mass, trial, mid, drift, kick)
                g = direction * (trial[axis] - value)
                if abs(g) < 1e-10:
                    break
                if g < 0.0:
                    lo = mid
                else:
                    hi = mid
            if direction * trial[2 + axis] > 0.0:
                points[found, 0] = trial[other]
                points[found, 1] = trial[2 + other]
                points[found, 2] = trial[2 + axis]
                points[found, 3] = (step - 1) * dt + mid
                found += 1
                if found == n_crossings:
                    return points, _OK
    return points[:found], _TIME_CAP


# --- domain types -----------------------------------------------------------

@dataclass(frozen=True)
class SectionSpec:
    """Section plane coordinate = value, crossed with the sign of its momentum equal to direction."""
    coordinate: str = 'y'
    value: float = 0.0
    direction: int = 1

    def __post_init__(self):
        if self.coordinate not in ('x', 'y'):
            raise ModelError(f"Section coordinate must be 'x' or 'y', got {self.coordinate!r}")
        if self.direction not in (1, -1):
            raise ModelError(f"Section direction must be +1 or -1, got {self.direction}")

    @property
    def axis(self) -> int:
        return 0 if self.coordinate == 'x' else 1


@dataclass
class PoincareSection:
    """(q, p) of the free coordinate at each crossing; `partial` when the time cap was hit."""
    points: np.ndarray            # (k, 2)
    times: np.ndarray
    energy: float
    partial: bool = False
    normal_momenta: np.ndarray = field(default_factory=lambda: np.empty(0))
    spec: SectionSpec = SectionSpec()

    def states(self) -> List[PhaseState]:
        """Full phase states at the crossings."""
        states = []
        for (q, p), normal, t in zip(self.points, self.normal_momenta, self.times):
            if self.spec.axis == 1:
                states.append(PhaseState(q, self.spec.value, p, normal, t))
            else:
                states.append(PhaseState(self.spec.value, q, normal, p, t))
        return states


@dataclass
class LyapunovRecord:
    initial: PhaseState
    energy: float
    horizon: float
    lam: float
    trace: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    seed_index: int = 0


@dataclass
class LyapunovEnsemble:
    """Finite-time Lyapunov exponents of one (system, energy) configuration."""
    system: str
    action: ActionParams
    energy: float
    v22: float
    horizon: float
    records: List[LyapunovRecord] = field(default_factory=list)
    failures: List[Tuple[int, str]] = field(default_factory=list)
    energy_absolute: Optional[float] = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])


@dataclass(frozen=True)
class FixedPoint:
    x: float
    px: float
    trace: float

    @property
    def kind(self) -> str:
        return 'hyperbolic' if abs(self.trace) > 2.0 else 'elliptic'


# --- helpers ------------------------------------------------------------------

def _n_steps(T: float, dt: float) -> int:
    if not dt > 0:
        raise ModelError(f"Time step must be positive, got {dt}")
    if not T > 0:
        raise ModelError(f"Integration time must be positive, got {T}")
    return max(1, int(round(T / dt)))


def absolute_energy(action: ActionParams, E: float, reference: str = 'absolute') -> float:
    """E itself, or E measured above the potential minimum."""
    if reference == 'absolute':
        return float(E)
    if reference == 'minimum':
        return float(E) + potential_minimum(action.coeffs)[2]
    raise ModelError(f"Unknown energy reference '{reference}' (expected 'absolute' or 'minimum')")


def member_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Seed of ensemble member `index`; members are independent streams."""
    return np.random.SeedSequence(seed).spawn(index + 1)[index]


# --- integration --------------------------------------------------------------

def integrate(action: ActionParams, s0: PhaseState, T: float, dt: float = 1e-3, stride: int = 1,
              box: float = ESCAPE_BOX) -> List[PhaseState]:
    """States every `stride` steps of the symplectic flow from s0 over [0, T].

    The step is adjusted to T / round(T / dt) so the last state sits at T.
    """
    n_steps = _n_steps(T, dt)
    if stride < 1:
        raise ModelError(f"Stride must be at least 1, got {stride}")
    h = T / n_steps
    out, status = _integrate_kernel(action.coeffs.as_array(), action.mass, s0.as_array(), h, n_steps,
                                    stride, box, DRIFT, KICK)
    if status == _ESCAPED:
        raise TrajectoryEscapeError(f"Trajectory from {s0} left the box |x|,|y| <= {box}")
    return [PhaseState.from_array(row, s0.t + i * stride * h) for i, row in enumerate(out)]


@lru_cache(maxsize=64)
def _accessible_box(coeffs: Tuple[float, ...], E: float, box: float) -> Tuple[float, float, float, float]:
    arr = np.array(coeffs)

    def potential(x, y):
        return _potential(arr, x, y)

    half_width = 1.0
    edge = np.linspace(-1.0, 1.0, 401)
    while True:
        s = half_width * edge
        border = np.concatenate([potential(s, np.full_like(s, half_width)), potential(s, np.full_like(s, -half_width)),
                                 potential(np.full_like(s, half_width), s), potential(np.full_like(s, -half_width), s)])
        if np.all(border > E):
            break
        half_width *= 2.0
        if half_width > box:
            raise ShellSamplingError(f"Region V <= {E} is not bounded inside the box |x|,|y| <= {box}")

    X, Y = np.meshgrid(half_width * edge, half_width * edge, indexing='ij')
    inside = potential(X, Y) <= E
    if not np.any(inside):
        raise ShellSamplingError(f"Energy {E} is below the potential minimum")
    pad = 2.0 * half_width / 400
    xs, ys = X[inside], Y[inside]
    return (max(xs.min() - pad, -half_width), min(xs.max() + pad, half_width),
            max(ys.min() - pad, -half_width), min(ys.max() + pad, half_width))


def accessible_box(action: ActionParams, E: float, box: float = ESCAPE_BOX) -> Tuple[float, float, float, float]:
    """Bounding box (x_min, x_max, y_min, y_max) of {V <= E} from a grid scan."""
    return _accessible_box(tuple(action.coeffs.as_array()), float(E), float(box))


def sample_energy_shell_many(action: ActionParams, E: float, n: int, seed: Seed,
                             max_attempts: int = 1000) -> List[PhaseState]:
    """n states with H = E: position uniform on {V <= E}, momentum direction uniform.

    In two dimensions this is exactly the microcanonical measure.
    """
    if n < 1:
        raise ModelError(f"Number of samples must be positive, got {n}")
    x_lo, x_hi, y_lo, y_hi = accessible_box(action, E)
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    accepted = 0
    for _ in range(max_attempts):
        batch = max(64, 2 * (n - accepted))
        x = rng.uniform(x_lo, x_hi, batch)
        y = rng.uniform(y_lo, y_hi, batch)
        keep = eval_potential(action.coeffs, x, y) <= E
        xs.append(x[keep])
        ys.append(y[keep])
        accepted += int(np.sum(keep))
        if accepted >= n:
            break
    else:
        raise ShellSamplingError(f"Rejection sampling of the shell E = {E} accepted {accepted} of {n} "
                                 f"after {max_attempts} batches")
    x = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    momentum = np.sqrt(2.0 * action.mass * np.maximum(E - eval_potential(action.coeffs, x, y), 0.0))
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    return [PhaseState(xi, yi, p * math.cos(a), p * math.sin(a))
            for xi, yi, p, a in zip(x, y, momentum, angle)]


def sample_energy_shell(action: ActionParams, E: float, seed: Seed, max_attempts: int = 100000) -> PhaseState:
    """One state with H = E, deterministic for a given seed."""
    x_lo, x_hi, y_lo, y_hi = accessible_box(action, E)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        x = rng.uniform(x_lo, x_hi)
        y = rng.uniform(y_lo, y_hi)
        v = eval_potential(action.coeffs, x, y)
        if v <= E:
            p = math.sqrt(2.0 * action.mass * (E - v))
            angle = rng.uniform(0.0, 2.0 * math.pi)
            return PhaseState(x, y, p * math.cos(angle), p * math.sin(angle))
    raise ShellSamplingError(f"No point with V <= {E} found in {max_attempts} attempts")


# --- Poincare sections --------------------------------------------------------

def _check_plane(action: ActionParams, E: float, spec: SectionSpec):
    """The plane has to cut the bounded region {V <= E} around the minimum."""
    try:
        x_lo, x_hi, y_lo, y_hi = accessible_box(action, E)
    except ShellSamplingError as e:
        raise ModelError(f"Section plane {spec.coordinate} = {spec.value} is not accessible at E = {E}: {e}") from e
    lo, hi = (x_lo, x_hi) if spec.axis == 1 else (y_lo, y_hi)
    s = np.linspace(lo, hi, 2001)
    plane = np.full_like(s, spec.value)
    values = (eval_potential(action.coeffs, plane, s) if spec.axis == 0
              else eval_potential(action.coeffs, s, plane))
    if not np.min(values) < E:
        raise ModelError(f"Section plane {spec.coordinate} = {spec.value} is not accessible at E = {E}")


def poincare_section(action: ActionParams, s0: PhaseState, spec: SectionSpec = SectionSpec(),
                     n_crossings: int = 200, dt: float = 1e-3, t_max: float = 2e4,
                     box: float = ESCAPE_BOX) -> PoincareSection:
    """Successive crossings of the section plane by the orbit through s0."""
    if n_crossings < 1:
        raise ModelError(f"n_crossings must be at least 1, got {n_crossings}")
    if not dt > 0:
        raise ModelError(f"Time step must be positive, got {dt}")
    energy = hamiltonian(action, s0)
    _check_plane(action, energy, spec)
    max_steps = int(math.ceil(t_max / dt))
    points, status = _section_kernel(action.coeffs.as_array(), action.mass, s0.as_array(), dt, spec.axis,
                                     spec.value, float(spec.direction), n_crossings, max_steps, box, DRIFT, KICK)
    if status == _ESCAPED:
        raise TrajectoryEscapeError(f"Orbit from {s0} left the box |x|,|y| <= {box}")
    partial = status == _TIME_CAP
    if partial:
        logger.warning(f"Only {len(points)} of {n_crossings} crossings within t_max = {t_max}")
    return PoincareSection(points[:, :2].copy(), points[:, 3] + s0.t, energy, partial, points[:, 2].copy(), spec)


def _section_state(action: ActionParams, E: float, spec: SectionSpec, q: float, p: float) -> Optional[PhaseState]:
    """Phase state on the section plane with free coordinate (q, p) and energy E."""
    point = (q, spec.value) if spec.axis == 1 else (spec.value, q)
    remaining = 2.0 * action.mass * (E - eval_potential(action.coeffs, *point)) - p ** 2
    if remaining <= 0:
        return None
    normal = spec.direction * math.sqrt(remaining)
    if spec.axis == 1:
        return PhaseState(q, spec.value, p, normal)
    return PhaseState(spec.value, q, normal, p)


def section_map(action: ActionParams, E: float, spec: SectionSpec, q: float, p: float,
                dt: float = 1e-3, t_max: float = 1e3) -> Optional[np.ndarray]:
    """First return (q', p') of the section point (q, p), or None if it is not accessible."""
    state = _section_state(action, E, spec, q, p)
    if state is None:
        return None
    section = poincare_section(action, state, spec, 1, dt, t_max)
    if section.partial or len(section.points) == 0:
        return None
    return section.points[0]


def section_fixed_points(action: ActionParams, E: float, spec: SectionSpec = SectionSpec(),
                         guesses: Optional[Sequence[float]] = None, dt: float = 1e-3,
                         jac_step: float = 1e-6) -> List[FixedPoint]:
    """Period-1 fixed points of the section map started on the line p = 0.

    Classified by the trace of the map's Jacobian: |trace| > 2 is hyperbolic.
    """
    if guesses is None:
        x_lo, x_hi, y_lo, y_hi = accessible_box(action, E)
        lo, hi = (x_lo, x_hi) if spec.axis == 1 else (y_lo, y_hi)
        guesses = np.linspace(lo, hi, 17)[1:-1]

    def residual(z):
        image = section_map(action, E, spec, z[0], z[1], dt)
        if image is None:
            return np.array([1e3, 1e3])
        return image - z

    found: List[FixedPoint] = []
    for guess in guesses:
        solution = root(residual, np.array([float(guess), 0.0]), method='hybr', options={'xtol': 1e-10})
        if not solution.success or np.max(np.abs(residual(solution.x))) > 1e-7:
            continue
        q, p = solution.x
        if any(abs(q - f.x) < 1e-5 and abs(p - f.px) < 1e-5 for f in found):
            continue
        jac = np.empty((2, 2))
        for j in range(2):
            step = np.zeros(2)
            step[j] = jac_step
            plus = section_map(action, E, spec, q + step[0], p + step[1], dt)
            minus = section_map(action, E, spec, q - step[0], p - step[1], dt)
            if plus is None or minus is None:
                break
            jac[:, j] = (plus - minus) / (2.0 * jac_step)
        else:
            found.append(FixedPoint(float(q), float(p), float(np.trace(jac))))
    logger.info(f"Found {len(found)} period-1 fixed points at E = {E}: "
                f"{sum(f.kind == 'hyperbolic' for f in found)} hyperbolic")
    return sorted(found, key=lambda f: f.x)


# --- Lyapunov exponents -------------------------------------------------------

def lyapunov_finite_time(action: ActionParams, s0: PhaseState, T_c: float, dt: float = 1e-3,
                         renorm_every: int = 100, tangent: Optional[Sequence[float]] = None,
                         trace_points: int = 200, box: float = ESCAPE_BOX,
                         seed_index: int = 0) -> LyapunovRecord:
    """Maximal finite-time Lyapunov exponent from the tangent map.

    The tangent vector is renormalized every `renorm_every` steps and
    lambda(t) = (1/t) sum log(growth) is sampled about `trace_points` times.
    """
    n_steps = _n_steps(T_c, dt)
    if renorm_every < 1:
        raise ModelError(f"renorm_every must be at least 1, got {renorm_every}")
    v0 = np.full(4, 0.5) if tangent is None else np.asarray(tangent, dtype=np.float64)
    if v0.shape != (4,) or not np.any(v0):
        raise ModelError("Initial tangent vector must be a non-zero 4-vector")
    trace_every = max(1, n_steps // (renorm_every * max(1, trace_points)))
    h = T_c / n_steps

    energy = hamiltonian(action, s0)
    log_growth, trace, status = _lyapunov_kernel(action.coeffs.as_array(), action.mass, s0.as_array(), v0, h,
                                                 n_steps, renorm_every, trace_every, box, DRIFT, KICK)
    if status == _ESCAPED:
        raise TrajectoryEscapeError(f"Trajectory from {s0} left the box |x|,|y| <= {box}")
    if status == _RANGE:
        raise NumericalError(f"Tangent vector left the floating point range; reduce renorm_every ({renorm_every})")
    return LyapunovRecord(s0, energy, T_c, log_growth / T_c, trace.copy(), seed_index)


def lyapunov_two_trajectory(action: ActionParams, s0: PhaseState, T_c: float, dt: float = 1e-3,
                            d0: float = 1e-8, threshold: float = 1e-4,
                            direction: Optional[Sequence[float]] = None, box: float = ESCAPE_BOX) -> float:
    """Maximal exponent from the divergence of a neighbour orbit at distance d0,
    pulled back to d0 whenever the separation exceeds `threshold`."""
    n_steps = _n_steps(T_c, dt)
    if not 0 < d0 < threshold:
        raise ModelError(f"Need 0 < d0 < threshold, got d0={d0}, threshold={threshold}")
    u = np.full(4, 0.5) if direction is None else np.asarray(direction, dtype=np.float64)
    log_growth, status = _two_trajectory_kernel(action.coeffs.as_array(), action.mass, s0.as_array(), u,
                                                T_c / n_steps, n_steps, d0, threshold, box, DRIFT, KICK)
    if status == _ESCAPED:
        raise TrajectoryEscapeError(f"Trajectory from {s0} left the box |x|,|y| <= {box}")
    return log_growth / T_c


def run_ensemble(action: ActionParams, E: float, n: int, T_c: float, seed: int, dt: float = 1e-3,
                 renorm_every: int = 100, system: str = 'classical', v22: Optional[float] = None,
                 energy_reference: str = 'absolute', workers: int = 1,
                 progress: bool = False) -> LyapunovEnsemble:
    """n seeded shell samples and their finite-time Lyapunov exponents.

    Member i starts from sample_energy_shell(action, E, member_seed(seed, i)).
    Failing members are logged and listed in `failures`.
    """
    if n < 1:
        raise ModelError(f"Ensemble size must be positive, got {n}")
    energy = absolute_energy(action, E, energy_reference)
    seeds = np.random.SeedSequence(seed).spawn(n)

    def member(index: int) -> LyapunovRecord:
        state = sample_energy_shell(action, energy, seeds[index])
        return lyapunov_finite_time(action, state, T_c, dt, renorm_every, seed_index=index)

    ensemble = LyapunovEnsemble(system, action, float(E), action.coeffs.v22 if v22 is None else v22,
                                T_c, energy_absolute=energy)
    logger.info(f"Running {system} Lyapunov ensemble: E = {E} ({energy_reference}), n = {n}, T_c = {T_c}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_index = {executor.submit(member, i): i for i in range(n)}
        completed = as_completed(future_to_index)
        if progress:
            completed = tqdm(completed, total=n, desc=f"lyapunov {system} E={E}")
        for future in completed:
            index = future_to_index[future]
            try:
                ensemble.records.append(future.result())
            except (NumericalError, ModelError) as e:
                logger.error(f"Ensemble member {index} failed: {e}")
                ensemble.failures.append((index, str(e)))
    ensemble.records.sort(key=lambda r: r.seed_index)
    ensemble.failures.sort()
    if ensemble.failures:
        logger.warning(f"{len(ensemble.failures)} of {n} ensemble members failed")
    return ensemble
