"""Quantum action: Euclidean boundary value problem, variational fit and the
Feynman-Kac / Riccati / SUSY cross-checks.

Euclidean paths are stationary points of

    S = sum_k m |x_{k+1} - x_k|^2 / (2h) + h * trapz(V(x_k))

on n uniform time nodes, i.e. m (x_{k+1} - 2x_k + x_{k-1}) / h^2 = grad V(x_k),
motion in the inverted potential. The predicted amplitude of a pair is
Z exp(-S).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.spatial import cKDTree
from tqdm import tqdm

from ..errors import BoundaryValueError, FitError, GridError, ModelError, NumericalError
from ..models import (
    COEFF_NAMES,
    ActionParams,
    Grid2D,
    Point,
    PotentialCoeffs,
    ScalarField2D,
    TransitionRecord,
    eval_potential,
    grad_potential,
    potential_minimum,
)
from ..models.potential import gradient_nb, hessian_nb, potential_nb

logger = logging.getLogger(__name__)

# Parameters varied by the fit, in order. 'log_mass' keeps the mass positive and
# 'c' = log Z - T v0 is the only combination of log Z and v0 the data constrains.
FIT_PARAMS = ('log_mass', 'c', 'v11', 'v2', 'v22', 'v13', 'v4', 'v24', 'v44')


# --- compiled kernels -------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _el_system(c, mass, h, path):
    """Residual G_k = m(2x_k - x_{k-1} - x_{k+1})/h^2 + grad V(x_k) and its
    diagonal Jacobian blocks for the interior nodes of `path`."""
    n = path.shape[0] - 2
    rhs = np.empty((n, 2))
    diag = np.empty((n, 2, 2))
    k_mass = mass / (h * h)
    for k in range(n):
        x = path[k + 1, 0]
        y = path[k + 1, 1]
        gx, gy = gradient_nb(c, x, y)
        hxx, hxy, hyy = hessian_nb(c, x, y)
        rhs[k, 0] = k_mass * (2.0 * x - path[k, 0] - path[k + 2, 0]) + gx
        rhs[k, 1] = k_mass * (2.0 * y - path[k, 1] - path[k + 2, 1]) + gy
        diag[k, 0, 0] = 2.0 * k_mass + hxx
        diag[k, 0, 1] = hxy
        diag[k, 1, 0] = hxy
        diag[k, 1, 1] = 2.0 * k_mass + hyy
    return rhs, diag


@nb.njit(cache=True, nogil=True)
def _block_thomas(diag, off, rhs):
    """Solve the block tridiagonal system with 2x2 diagonal blocks and
    off-diagonal blocks off * I. Returns NaNs on a singular pivot."""
    n = diag.shape[0]
    cp = np.empty((n, 2, 2))
    dp = np.empty((n, 2))
    out = np.empty((n, 2))
    for i in range(n):
        a = diag[i, 0, 0]
        b = diag[i, 0, 1]
        cc = diag[i, 1, 0]
        d = diag[i, 1, 1]
        r0 = rhs[i, 0]
        r1 = rhs[i, 1]
        if i > 0:
            a -= off * cp[i - 1, 0, 0]
            b -= off * cp[i - 1, 0, 1]
            cc -= off * cp[i - 1, 1, 0]
            d -= off * cp[i - 1, 1, 1]
            r0 -= off * dp[i - 1, 0]
            r1 -= off * dp[i - 1, 1]
        det = a * d - b * cc
        if det == 0.0:
            out[:, :] = np.nan
            return out
        inv00 = d / det
        inv01 = -b / det
        inv10 = -cc / det
        inv11 = a / det
        cp[i, 0, 0] = inv00 * off
        cp[i, 0, 1] = inv01 * off
        cp[i, 1, 0] = inv10 * off
        cp[i, 1, 1] = inv11 * off
        dp[i, 0] = inv00 * r0 + inv01 * r1
        dp[i, 1] = inv10 * r0 + inv11 * r1
    out[n - 1, 0] = dp[n - 1, 0]
    out[n - 1, 1] = dp[n - 1, 1]
    for i in range(n - 2, -1, -1):
        out[i, 0] = dp[i, 0] - cp[i, 0, 0] * out[i + 1, 0] - cp[i, 0, 1] * out[i + 1, 1]
        out[i, 1] = dp[i, 1] - cp[i, 1, 0] * out[i + 1, 0] - cp[i, 1, 1] * out[i + 1, 1]
    return out


@nb.njit(cache=True, nogil=True)
def _discrete_action(c, mass, h, path):
    n = path.shape[0]
    total = 0.0
    for k in range(n - 1):
        dx = path[k + 1, 0] - path[k, 0]
        dy = path[k + 1, 1] - path[k, 1]
        total += mass * (dx * dx + dy * dy) / (2.0 * h)
    for k in range(n):
        weight = 0.5 if k == 0 or k == n - 1 else 1.0
        total += weight * h * potential_nb(c, path[k, 0], path[k, 1])
    return total


# --- domain types -----------------------------------------------------------

@dataclass
class EuclideanTrajectory:
    """Discrete stationary path of the Euclidean action between a and b."""
    a: Point
    b: Point
    T: float
    samples: np.ndarray          # (n, 3) rows of (t, x, y)
    action_value: float
    residual: float = 0.0
    alternate_action: Optional[float] = None

    @property
    def times(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.samples[:, 1:]

    @property
    def h(self) -> float:
        return self.T / (len(self.samples) - 1)


@dataclass
class FitDataset:
    """Transition amplitudes at one T used to fit the quantum action."""
    records: List[TransitionRecord]
    region: Tuple[float, float] = (-1.5, 1.5)

    def __post_init__(self):
        if not self.records:
            raise ModelError("Fit dataset is empty")
        times = {r.T for r in self.records}
        if len(times) != 1:
            raise ModelError(f"All records must share one T, got {sorted(times)}")
        if any(r.amplitude <= 0 for r in self.records):
            raise ModelError("All amplitudes of a fit dataset must be positive")
        points = {r.x_in for r in self.records} | {r.x_fi for r in self.records}
        if len(points) < 10:
            raise ModelError(f"Fit dataset needs at least 10 distinct boundary points, got {len(points)}")

    @property
    def T(self) -> float:
        return self.records[0].T

    @property
    def log_amplitudes(self) -> np.ndarray:
        return np.array([math.log(r.amplitude) for r in self.records])

    @property
    def pairs(self) -> List[Tuple[Point, Point]]:
        return [(r.x_in, r.x_fi) for r in self.records]


@dataclass
class FitResult:
    """Fitted quantum action, final error and uncertainty surrogates.

    `uncertainties` come from the diagonal of the inverse Gauss-Newton Hessian
    at the optimum scaled by the residual variance. They indicate how well the
    fit pins each parameter; they are not statistical errors.
    """
    params: ActionParams
    residual: float
    uncertainties: Dict[str, float] = field(default_factory=dict)
    c: float = 0.0
    n_pairs: int = 0
    n_evaluations: int = 0
    message: str = ''

    def to_table(self, classical: Optional[ActionParams] = None) -> List[Dict[str, float]]:
        """Rows of (parameter, quantum, uncertainty, classical)."""
        classical = classical or ActionParams()
        rows = [{
            'parameter': 'mass',
            'quantum': self.params.mass,
            'uncertainty': self.uncertainties.get('mass', float('nan')),
            'classical': classical.mass,
        }]
        for name in COEFF_NAMES:
            rows.append({
                'parameter': name,
                'quantum': getattr(self.params.coeffs, name),
                'uncertainty': self.uncertainties.get(name, float('nan')),
                'classical': getattr(classical.coeffs, name),
            })
        rows.append({
            'parameter': 'log_norm',
            'quantum': self.params.log_norm,
            'uncertainty': self.uncertainties.get('log_norm', float('nan')),
            'classical': classical.log_norm,
        })
        return rows


# --- boundary value problem -------------------------------------------------

def _newton(c: np.ndarray, mass: float, h: float, path: np.ndarray, tol: float,
            max_iter: int) -> Tuple[np.ndarray, float, bool]:
    off = -mass / (h * h)
    rhs, diag = _el_system(c, mass, h, path)
    norm = float(np.max(np.abs(rhs)))
    for _ in range(max_iter):
        if norm < tol:
            return path, norm, True
        step = _block_thomas(diag, off, rhs)
        if not np.all(np.isfinite(step)):
            return path, norm, False
        alpha = 1.0
        while alpha > 1e-6:
            trial = path.copy()
            trial[1:-1] -= alpha * step
            trial_rhs, trial_diag = _el_system(c, mass, h, trial)
            trial_norm = float(np.max(np.abs(trial_rhs)))
            if np.isfinite(trial_norm) and trial_norm < (1.0 - 1e-4 * alpha) * norm:
                break
            alpha *= 0.5
        else:
            return path, norm, False
        path, rhs, diag, norm = trial, trial_rhs, trial_diag, trial_norm
        if float(np.max(np.abs(alpha * step))) < 1e-14 * (1.0 + float(np.max(np.abs(path)))):
            return path, norm, norm < 1e3 * tol
    return path, norm, norm < tol


def _straight_line(a: Point, b: Point, n_nodes: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n_nodes)[:, None]
    return (1.0 - s) * np.asarray(a, dtype=np.float64) + s * np.asarray(b, dtype=np.float64)


def _solve_path(c: np.ndarray, mass: float, a: Point, b: Point, T: float, n_nodes: int,
                initial: Optional[np.ndarray], tol: float, max_iter: int) -> Tuple[np.ndarray, float]:
    h = T / (n_nodes - 1)
    if initial is not None and initial.shape == (n_nodes, 2):
        path = initial.copy()
        path[0], path[-1] = a, b
    else:
        path = _straight_line(a, b, n_nodes)
    path, residual, ok = _newton(c, mass, h, path, tol, max_iter)
    if not ok and initial is not None:
        path, residual, ok = _newton(c, mass, h, _straight_line(a, b, n_nodes), tol, max_iter)
    if not ok:
        raise BoundaryValueError(
            f"Euler-Lagrange Newton solve did not converge for {tuple(a)} -> {tuple(b)}, T={T} "
            f"(residual {residual:.3e})", residual=residual, pair=(tuple(a), tuple(b)))
    return path, residual


def solve_euclidean_bvp(params: ActionParams, a: Point, b: Point, T: float, n_nodes: int = 257,
                        tol: float = 1e-10, max_iter: int = 100, richardson: bool = False,
                        check_basins: bool = False, initial: Optional[np.ndarray] = None,
                        seed: int = 0) -> EuclideanTrajectory:
    """Stationary path of the discrete Euclidean action with pinned endpoints.

    Damped Newton on the discrete Euler-Lagrange equations from the straight
    line a -> b (or `initial`). With `richardson` the action is extrapolated
    from n_nodes and 2 n_nodes - 1 nodes, removing the O(h^2) error.
    With `check_basins`, perturbed initial paths are relaxed too and a
    warning is logged when they end in a different stationary path.
    """
    if not T > 0:
        raise ModelError(f"Transition time must be positive, got {T}")
    if n_nodes < 16:
        raise ModelError(f"BVP needs at least 16 time nodes, got {n_nodes}")
    c = params.coeffs.as_array()
    a = (float(a[0]), float(a[1]))
    b = (float(b[0]), float(b[1]))
    # The residual carries m/h^2 * x, so its rounding floor grows with the node count.
    extent = 1.0 + max(abs(a[0]), abs(a[1]), abs(b[0]), abs(b[1]))
    tol = max(tol, 256.0 * np.finfo(float).eps * params.mass * extent * ((n_nodes - 1) / T) ** 2)

    path, residual = _solve_path(c, params.mass, a, b, T, n_nodes, initial, tol, max_iter)
    h = T / (n_nodes - 1)
    action = _discrete_action(c, params.mass, h, path)

    if richardson:
        fine_initial = np.empty((2 * n_nodes - 1, 2))
        fine_initial[0::2] = path
        fine_initial[1::2] = 0.5 * (path[:-1] + path[1:])
        fine, _ = _solve_path(c, params.mass, a, b, T, 2 * n_nodes - 1, fine_initial, 4.0 * tol, max_iter)
        fine_action = _discrete_action(c, params.mass, h / 2.0, fine)
        action = (4.0 * fine_action - action) / 3.0

    alternate = None
    if check_basins:
        alternate = _second_basin(c, params.mass, a, b, T, n_nodes, path, action, tol, max_iter, seed)

    samples = np.column_stack([np.linspace(0.0, T, n_nodes), path])
    return EuclideanTrajectory(a, b, T, samples, float(action), residual, alternate)


def _second_basin(c, mass, a, b, T, n_nodes, path, action, tol, max_iter, seed) -> Optional[float]:
    rng = np.random.default_rng(seed)
    h = T / (n_nodes - 1)
    bump = np.sin(np.pi * np.linspace(0.0, 1.0, n_nodes))[:, None]
    for _ in range(4):
        trial = path + bump * rng.normal(scale=1.0, size=2)
        try:
            other, _ = _solve_path(c, mass, a, b, T, n_nodes, trial, tol, max_iter)
        except BoundaryValueError:
            continue
        if np.max(np.abs(other - path)) > 1e-4:
            other_action = float(_discrete_action(c, mass, h, other))
            logger.warning(f"Second stationary path for {a} -> {b}: action {other_action:.8f} "
                           f"vs {action:.8f} from the straight-line start")
            return other_action
    return None


def endpoint_momenta(params: ActionParams, traj: EuclideanTrajectory) -> Tuple[np.ndarray, np.ndarray]:
    """(p(0), p(T)) consistent with the discrete action: dS/db = p(T), dS/da = -p(0)."""
    path = traj.positions
    h = traj.h
    m = params.mass
    grad_a = np.array(grad_potential(params.coeffs, *path[0]))
    grad_b = np.array(grad_potential(params.coeffs, *path[-1]))
    p_start = m * (path[1] - path[0]) / h - 0.5 * h * grad_a
    p_end = m * (path[-1] - path[-2]) / h + 0.5 * h * grad_b
    return p_start, p_end


def euclidean_energy_profile(params: ActionParams, traj: EuclideanTrajectory) -> np.ndarray:
    """-m|v|^2/2 + V on the interval midpoints; constant along an exact path."""
    path = traj.positions
    velocity = np.diff(path, axis=0) / traj.h
    potential = eval_potential(params.coeffs, path[:, 0], path[:, 1])
    return -0.5 * params.mass * np.sum(velocity ** 2, axis=1) + 0.5 * (potential[:-1] + potential[1:])


def predicted_amplitude(params: ActionParams, a: Point, b: Point, T: float, **bvp_options) -> float:
    """Z exp(-S) along the single stationary path a -> b."""
    traj = solve_euclidean_bvp(params, a, b, T, **bvp_options)
    return math.exp(params.log_norm - traj.action_value)


# --- fit ----------------------------------------------------------------------

class _PairActions:
    """Evaluates the actions of all pairs of a dataset, warm-starting every
    pair from its previous path."""

    def __init__(self, data: FitDataset, n_nodes: int, richardson: bool, workers: int, progress: bool):
        self.pairs = data.pairs
        self.T = data.T
        self.n_nodes = n_nodes
        self.richardson = richardson
        self.workers = max(1, workers)
        self.progress = progress
        self.paths: List[Optional[np.ndarray]] = [None] * len(self.pairs)
        self.evaluations = 0

    def _one(self, index: int, params: ActionParams) -> float:
        a, b = self.pairs[index]
        traj = solve_euclidean_bvp(params, a, b, self.T, n_nodes=self.n_nodes,
                                   richardson=self.richardson, initial=self.paths[index])
        self.paths[index] = traj.positions
        return traj.action_value

    def __call__(self, params: ActionParams) -> np.ndarray:
        actions = np.empty(len(self.pairs))
        self.evaluations += 1
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            future_to_index = {executor.submit(self._one, i, params): i for i in range(len(self.pairs))}
            completed = as_completed(future_to_index)
            if self.progress:
                completed = tqdm(completed, total=len(future_to_index), desc="bvp", leave=False)
            for future in completed:
                index = future_to_index[future]
                try:
                    actions[index] = future.result()
                except BoundaryValueError as e:
                    e.pair = self.pairs[index]
                    raise
        return actions


def _residuals(log_data: np.ndarray, log_norm: float, actions: np.ndarray, mode: str) -> np.ndarray:
    log_pred = log_norm - actions
    if mode == 'log':
        return log_data - log_pred
    if mode == 'raw':
        return np.exp(log_data) - np.exp(log_pred)
    raise ModelError(f"Unknown residual mode '{mode}' (expected 'log' or 'raw')")


def fit_error(params: ActionParams, data: FitDataset, mode: str = 'log', n_nodes: int = 129,
              richardson: bool = False, workers: int = 1) -> float:
    """eps = sum over ordered pairs of (log G - (log Z - S))^2, or of
    (G - Z e^{-S})^2 in 'raw' mode."""
    actions = _PairActions(data, n_nodes, richardson, workers, progress=False)(params)
    return float(np.sum(_residuals(data.log_amplitudes, params.log_norm, actions, mode) ** 2))


def _params_from_vector(theta: np.ndarray) -> ActionParams:
    coeffs = dict(zip(FIT_PARAMS[2:], theta[2:]))
    return ActionParams(mass=math.exp(theta[0]), log_norm=float(theta[1]),
                        coeffs=PotentialCoeffs.from_dict(coeffs))


def split_normalization(mass: float, v2: float, c: float, T: float) -> Tuple[float, float]:
    """(log Z, v0) from c = log Z - T v0 using Z = m w / pi, w = sqrt(2 v2 / m).

    The convention is exact for the harmonic oscillator at large T, where it
    gives v0 = E_gr. Without a confining v2 the whole of c is put in log Z.
    """
    if v2 <= 0:
        logger.warning(f"Fitted v2 = {v2} is not positive; reporting log_norm = c and v0 = 0")
        return c, 0.0
    omega = math.sqrt(2.0 * v2 / mass)
    log_norm = math.log(mass * omega / math.pi)
    return log_norm, (log_norm - c) / T


def fit_quantum_action(data: FitDataset, init: ActionParams, mode: str = 'log', n_nodes: int = 129,
                       richardson: bool = False, ftol: float = 1e-10, max_nfev: int = 200,
                       workers: int = 1, progress: bool = False) -> FitResult:
    """Variational fit of (m, Z, V) to the transition amplitudes.

    Nonlinear least squares (trust region, finite-difference Jacobian) over
    FIT_PARAMS. The starting c is the linear least squares value for the
    initial action.
    """
    if mode not in ('log', 'raw'):
        raise ModelError(f"Unknown residual mode '{mode}' (expected 'log' or 'raw')")
    T = data.T
    log_data = data.log_amplitudes
    evaluate = _PairActions(data, n_nodes, richardson, workers, progress)

    shape_only = ActionParams(mass=init.mass, coeffs=init.coeffs.shifted(-init.coeffs.v0))
    c0 = float(np.mean(log_data + evaluate(shape_only)))
    theta0 = np.array([math.log(init.mass), c0] + [getattr(init.coeffs, n) for n in FIT_PARAMS[2:]])
    logger.info(f"Fitting quantum action to {len(data.records)} pairs at T = {T} ({mode} residuals)")

    def residuals(theta):
        try:
            params = _params_from_vector(theta)
        except ModelError as e:
            raise FitError(f"Fit left the valid parameter range: {e}") from e
        return _residuals(log_data, params.log_norm, evaluate(params), mode)

    try:
        result = least_squares(residuals, theta0, method='trf', x_scale='jac', ftol=ftol,
                               xtol=1e-12, gtol=1e-12, max_nfev=max_nfev)
    except BoundaryValueError as e:
        raise FitError(f"Boundary value problem failed during the fit for pair {e.pair}: {e}") from e
    if result.status <= 0 or not np.all(np.isfinite(result.x)):
        raise FitError(f"Quantum action fit did not converge: {result.message}")

    theta = result.x
    mass = math.exp(theta[0])
    c = float(theta[1])
    coeffs = dict(zip(FIT_PARAMS[2:], theta[2:]))
    log_norm, v0 = split_normalization(mass, coeffs['v2'], c, T)
    params = ActionParams(mass=mass, log_norm=log_norm, coeffs=PotentialCoeffs.from_dict({**coeffs, 'v0': v0}))

    uncertainties = _uncertainties(result, mass, coeffs['v2'], T)
    eps = float(np.sum(result.fun ** 2))
    logger.info(f"Fit finished after {result.nfev} evaluations: eps = {eps:.3e}, m = {mass:.6f}, "
                f"v2 = {coeffs['v2']:.6f}, v22 = {coeffs['v22']:.6f}, v0 = {v0:.6f}")
    return FitResult(params, eps, uncertainties, c, len(data.records), evaluate.evaluations, result.message)


def _uncertainties(result, mass: float, v2: float, T: float) -> Dict[str, float]:
    jac = result.jac
    dof = max(1, jac.shape[0] - jac.shape[1])
    variance = float(np.sum(result.fun ** 2)) / dof
    cov = variance * np.linalg.pinv(jac.T @ jac)
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    out = {name: float(s) for name, s in zip(FIT_PARAMS[2:], sigma[2:])}
    out['mass'] = mass * float(sigma[0])
    if v2 > 0:
        # v0 = (log Z - c) / T with log Z = (log m + log(2 v2)) / 2 - log pi
        grad_log_norm = np.zeros(len(FIT_PARAMS))
        grad_log_norm[0] = 0.5
        grad_log_norm[3] = 0.5 / v2
        grad_v0 = grad_log_norm / T
        grad_v0[1] = -1.0 / T
        out['log_norm'] = float(math.sqrt(max(grad_log_norm @ cov @ grad_log_norm, 0.0)))
        out['v0'] = float(math.sqrt(max(grad_v0 @ cov @ grad_v0, 0.0)))
    else:
        out['log_norm'] = float(sigma[1])
        out['v0'] = 0.0
    return out


# --- Feynman-Kac / Riccati / SUSY -------------------------------------------

def _valid_region(psi: ScalarField2D, threshold: float) -> np.ndarray:
    values = psi.values
    peak = float(np.max(values))
    if not peak > 0:
        raise NumericalError("Wave function has no positive values")
    mask = values > threshold * peak
    mask = ndimage.binary_erosion(mask, border_value=0)
    if not np.any(mask):
        raise NumericalError(f"No nodes with psi above {threshold} * max(psi)")
    return mask


def _log_psi(psi: ScalarField2D) -> np.ndarray:
    return np.log(np.maximum(psi.values, np.finfo(float).tiny))


def riccati_quantum_potential(psi: ScalarField2D, threshold: float = 1e-4) -> ScalarField2D:
    """(1/2)|grad psi / psi|^2, i.e. m(V - V_min) of the Feynman-Kac action.

    Nodes where psi < threshold * max(psi), and their neighbours, are masked.
    """
    mask = _valid_region(psi, threshold)
    u = _log_psi(psi)
    ux, uy = np.gradient(u, psi.grid.dx, psi.grid.dy)
    values = np.where(mask, 0.5 * (ux ** 2 + uy ** 2), 0.0)
    return ScalarField2D(psi.grid, values, mask)


def riccati_residual(psi: ScalarField2D, classical: ActionParams, E_gr: float,
                     threshold: float = 1e-4) -> ScalarField2D:
    """Laplacian U + |grad U|^2 - 2m(V - E_gr) with U = log psi."""
    mask = _valid_region(psi, threshold)
    u = _log_psi(psi)
    dx, dy = psi.grid.dx, psi.grid.dy
    laplacian = np.zeros_like(u)
    laplacian[1:-1, 1:-1] = ((u[2:, 1:-1] - 2.0 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / dx ** 2
                             + (u[1:-1, 2:] - 2.0 * u[1:-1, 1:-1] + u[1:-1, :-2]) / dy ** 2)
    ux, uy = np.gradient(u, dx, dy)
    X, Y = psi.grid.mesh()
    potential = eval_potential(classical.coeffs, X, Y)
    residual = laplacian + ux ** 2 + uy ** 2 - 2.0 * classical.mass * (potential - E_gr)
    return ScalarField2D(psi.grid, np.where(mask, residual, 0.0), mask)


@dataclass
class SusyPartner:
    """Superpotential and partner potential in units hbar = 2m = 1."""
    x: np.ndarray
    w_s: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray
    mask: np.ndarray
    convention_deviation: float
    riccati_defect: float


def susy_partner_1d(x: np.ndarray, psi: np.ndarray, v_minus: np.ndarray,
                    threshold: float = 1e-10) -> SusyPartner:
    """W_s = -psi'/psi and V_+ = V_- + 2 W_s' for a positive ground state psi of V_-.

    `convention_deviation` is max |W + W_s| with W = d(log psi)/dx, the 2-D
    log-derivative convention restricted to one dimension; `riccati_defect`
    is max |W_s^2 - W_s' - V_-|, which vanishes when V_- is shifted so that
    its ground state energy is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    v_minus = np.asarray(v_minus, dtype=np.float64)
    if not (x.shape == psi.shape == v_minus.shape) or x.ndim != 1:
        raise GridError("x, psi and v_minus must be 1-D arrays of equal length")
    mask = psi > threshold * float(np.max(psi))
    mask = ndimage.binary_erosion(mask, iterations=2, border_value=0)
    if not np.any(mask):
        raise NumericalError("No nodes with psi above the threshold")

    safe = np.maximum(psi, np.finfo(float).tiny)
    w_s = -np.gradient(safe, x, edge_order=2) / safe
    w_s_prime = np.gradient(w_s, x, edge_order=2)
    v_plus = v_minus + 2.0 * w_s_prime
    w_log = np.gradient(np.log(safe), x, edge_order=2)

    convention_deviation = float(np.max(np.abs(w_log + w_s)[mask]))
    riccati_defect = float(np.max(np.abs(w_s ** 2 - w_s_prime - v_minus)[mask]))
    zero = np.zeros_like(x)
    return SusyPartner(x, np.where(mask, w_s, zero), v_minus, np.where(mask, v_plus, zero), mask,
                       convention_deviation, riccati_defect)


# --- consistency conditions -------------------------------------------------

def _point_key(point: Point) -> Tuple[float, float]:
    return round(point[0], 8), round(point[1], 8)


class _EndpointIndex:
    """log G(x_fi; x_in) lookup by source and nearby endpoint."""

    def __init__(self, records: Sequence[TransitionRecord]):
        grouped: Dict[Tuple[float, float], List[TransitionRecord]] = {}
        for record in records:
            if record.amplitude > 0:
                grouped.setdefault(_point_key(record.x_in), []).append(record)
        self.sources = {}
        for key, group in grouped.items():
            points = np.array([r.x_fi for r in group])
            self.sources[key] = (cKDTree(points), np.array([r.log_amplitude for r in group]), points)

    def log_amplitude(self, source: Point, endpoint: Point, tol: float) -> Optional[float]:
        entry = self.sources.get(_point_key(source))
        if entry is None:
            return None
        tree, values, _ = entry
        distance, index = tree.query(np.asarray(endpoint, dtype=np.float64))
        return float(values[index]) if distance <= tol else None

    def eta_gradient(self, source: Point, endpoint: Point, delta: float) -> Optional[np.ndarray]:
        """Central difference grad_y eta(y, x) = -grad_y log G at y = endpoint."""
        tol = 0.25 * delta
        ex, ey = endpoint
        values = [self.log_amplitude(source, p, tol) for p in
                  ((ex + delta, ey), (ex - delta, ey), (ex, ey + delta), (ex, ey - delta))]
        if any(v is None for v in values):
            return None
        return -np.array([values[0] - values[1], values[2] - values[3]]) / (2.0 * delta)

    def pairs(self) -> List[Tuple[Point, Point]]:
        out = []
        for key, (_, _, points) in self.sources.items():
            out.extend((key, (float(p[0]), float(p[1]))) for p in points)
        return out


def _relative_deviations(computed: np.ndarray, reference: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(reference), 0.1 * float(np.max(np.abs(reference))))
    scale = np.where(scale > 0, scale, 1.0)
    return np.abs(computed - reference) / scale


def verify_momentum_condition(params: ActionParams, records: Sequence[TransitionRecord], delta: float,
                              n_nodes: int = 257, workers: int = 1) -> float:
    """Max relative deviation between the BVP end momentum p(T) and grad_y eta.

    grad_y eta is the central difference of -log G over records whose final
    points lie at +-delta around a final point of the same source.
    """
    records = list(records)
    index = _EndpointIndex(records)
    sources = {_point_key(r.x_in): r.x_in for r in records}
    candidates = []
    for key, x_fi in index.pairs():
        gradient = index.eta_gradient(sources[key], x_fi, delta)
        if gradient is not None:
            candidates.append((sources[key], x_fi, gradient))
    if not candidates:
        raise FitError(f"No record has the four neighbours at +-{delta} needed for grad eta")
    T = records[0].T

    def momentum(pair):
        traj = solve_euclidean_bvp(params, pair[0], pair[1], T, n_nodes=n_nodes)
        return endpoint_momenta(params, traj)[1]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        momenta = list(executor.map(momentum, candidates))
    computed = np.array(momenta)
    reference = np.array([g for _, _, g in candidates])
    deviation = _relative_deviations(computed.ravel(), reference.ravel())
    worst = float(np.max(deviation))
    logger.info(f"Momentum condition checked on {len(candidates)} endpoints: max deviation {worst:.3e}")
    return worst


def verify_energy_balance(params: ActionParams, records: Sequence[TransitionRecord], delta: float) -> float:
    """Max relative deviation of 2m(V(b) - V(a)) from |grad_b eta|^2 - |grad_a eta|^2.

    grad_a eta is taken from the records of source b (G is symmetric in its
    end points), so both a and b must be sources with stencil endpoints.
    """
    records = list(records)
    index = _EndpointIndex(records)
    sources = {_point_key(r.x_in): r.x_in for r in records}
    lhs, rhs = [], []
    for key_a, a in sources.items():
        for key_b, b in sources.items():
            grad_b = index.eta_gradient(a, b, delta)
            grad_a = index.eta_gradient(b, a, delta)
            if grad_a is None or grad_b is None:
                continue
            lhs.append(2.0 * params.mass * (eval_potential(params.coeffs, *b) - eval_potential(params.coeffs, *a)))
            rhs.append(float(grad_b @ grad_b - grad_a @ grad_a))
    if not lhs:
        raise FitError(f"No pair of sources has the +-{delta} stencils needed for the energy balance")
    worst = float(np.max(_relative_deviations(np.array(rhs), np.array(lhs))))
    logger.info(f"Energy balance checked on {len(lhs)} pairs: max deviation {worst:.3e}")
    return worst


def quantum_potential_field(params: ActionParams, grid: Grid2D) -> ScalarField2D:
    """m(V - V_min) of an action sampled on a grid."""
    _, _, v_min = potential_minimum(params.coeffs)
    X, Y = grid.mesh()
    return ScalarField2D(grid, params.mass * (eval_potential(params.coeffs, X, Y) - v_min))


def compare_fields(a: ScalarField2D, b: ScalarField2D, mask: Optional[np.ndarray] = None) -> float:
    """Relative RMS difference ||a - b|| / ||b|| over the mask."""
    if a.grid != b.grid:
        raise GridError("Fields live on different grids")
    if mask is None:
        mask = a.valid() & b.valid()
    if not np.any(mask):
        raise NumericalError("Comparison mask is empty")
    reference = float(np.sqrt(np.mean(b.values[mask] ** 2)))
    if reference == 0.0:
        raise NumericalError("Reference field vanishes on the comparison mask")
    return float(np.sqrt(np.mean((a.values[mask] - b.values[mask]) ** 2))) / reference
