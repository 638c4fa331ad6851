"""Imaginary-time Schroedinger evolution on a 2-D grid.

H = -(1/2m) Laplacian_h + V with the 5-point Laplacian and homogeneous
Dirichlet boundaries. The kinetic factor exp(-dt K) is applied exactly in
the sine basis (type-I DST diagonalizes the Dirichlet Laplacian), the
potential as half steps on either side (Strang splitting).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.fft import dstn, idstn
from scipy.linalg import eigh_tridiagonal
from tqdm import tqdm

from ..errors import ConvergenceError, EvolutionRangeError, GridError, ModelError
from ..models import ActionParams, Grid2D, Point, ScalarField2D, TransitionRecord, eval_potential

logger = logging.getLogger(__name__)

# Smallest amplitude still reported as a positive number.
UNDERFLOW_FLOOR = 1e-300
# Renormalize the propagated field this often to keep it in range.
RENORM_EVERY = 200


def laplacian_eigenvalues(n_nodes: int, spacing: float) -> np.ndarray:
    """Eigenvalues of -d^2/dx^2 (3-point, Dirichlet) on the n_nodes-2 interior nodes."""
    j = np.arange(1, n_nodes - 1)
    return (2.0 - 2.0 * np.cos(np.pi * j / (n_nodes - 1))) / spacing ** 2


class ImaginaryTimePropagator:
    """Strang-split e^{-H dt} acting on the interior nodes of `grid`."""

    def __init__(self, action: ActionParams, grid: Grid2D, dt: float, workers: int = 1):
        if not dt > 0:
            raise ValueError(f"Time step must be positive, got {dt}")
        self.action = action
        self.grid = grid
        self.dt = dt
        self.workers = workers

        X, Y = grid.mesh()
        self.potential = eval_potential(action.coeffs, X, Y)[1:-1, 1:-1]
        self.kinetic_spectrum = (
            laplacian_eigenvalues(grid.nx, grid.dx)[:, None]
            + laplacian_eigenvalues(grid.ny, grid.dy)[None, :]
        ) / (2.0 * action.mass)
        self.half_potential = np.exp(-0.5 * dt * self.potential)
        self.full_potential = self.half_potential ** 2
        self.kinetic = np.exp(-dt * self.kinetic_spectrum)

    def _kinetic_step(self, u: np.ndarray) -> np.ndarray:
        spectrum = dstn(u, type=1, norm='ortho', workers=self.workers)
        return idstn(spectrum * self.kinetic, type=1, norm='ortho', workers=self.workers)

    def propagate(self, interior: np.ndarray, n_steps: int, log_scale: float = 0.0) -> Tuple[np.ndarray, float]:
        """Apply n_steps Strang steps; returns (field / e^log_scale, log_scale).

        The field is renormalized by its maximum every RENORM_EVERY steps so
        long propagations neither underflow nor overflow.
        """
        u = interior * self.half_potential
        for step in range(n_steps):
            u = self._kinetic_step(u)
            u *= self.full_potential if step < n_steps - 1 else self.half_potential
            if (step + 1) % RENORM_EVERY == 0:
                peak = float(np.max(np.abs(u)))
                if peak == 0.0 or not math.isfinite(peak):
                    raise EvolutionRangeError(f"Field magnitude left the representable range after {step + 1} steps")
                u /= peak
                log_scale += math.log(peak)
        return u, log_scale

    def apply_hamiltonian(self, interior: np.ndarray) -> np.ndarray:
        spectrum = dstn(interior, type=1, norm='ortho', workers=self.workers)
        kinetic = idstn(spectrum * self.kinetic_spectrum, type=1, norm='ortho', workers=self.workers)
        return kinetic + self.potential * interior


def _pad(interior: np.ndarray) -> np.ndarray:
    return np.pad(interior, 1)


def _steps(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"Time step must be positive, got {dt}")
    if not T > 0 or T < dt * (1.0 - 1e-12):
        raise ValueError(f"Transition time must satisfy T >= dt > 0, got T={T}, dt={dt}")
    return max(1, int(round(T / dt)))


def evolve_imaginary(field: ScalarField2D, action: ActionParams, T: float, dt: float,
                     workers: int = 1) -> ScalarField2D:
    """e^{-HT} applied to `field` (no normalization); boundary nodes are zero."""
    n_steps = _steps(T, dt)
    propagator = ImaginaryTimePropagator(action, field.grid, T / n_steps, workers)
    u, log_scale = propagator.propagate(field.values[1:-1, 1:-1].copy(), n_steps)
    with np.errstate(over='raise', under='ignore'):
        try:
            scale = math.exp(log_scale)
            values = u * scale
        except (OverflowError, FloatingPointError) as e:
            raise EvolutionRangeError(f"Evolved field overflows (log scale {log_scale:.1f}); "
                                      "renormalize and track the log scale") from e
    if np.any(u != 0) and not np.any(values != 0):
        raise EvolutionRangeError(f"Evolved field underflows (log scale {log_scale:.1f}); "
                                  "renormalize and track the log scale")
    return ScalarField2D(field.grid, _pad(values))


def apply_hamiltonian(field: ScalarField2D, action: ActionParams) -> ScalarField2D:
    """Discrete H applied to a field (boundary nodes treated as zero)."""
    propagator = ImaginaryTimePropagator(action, field.grid, 1.0)
    return ScalarField2D(field.grid, _pad(propagator.apply_hamiltonian(field.values[1:-1, 1:-1])))


def dense_hamiltonian(action: ActionParams, grid: Grid2D) -> np.ndarray:
    """Dense matrix of the discrete H on the interior nodes (row-major i*ny_int + j)."""
    n_x, n_y = grid.nx - 2, grid.ny - 2
    if n_x * n_y > 4096:
        raise GridError(f"Dense Hamiltonian of {n_x * n_y} unknowns is too large")

    def second_difference(n, h):
        return sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h ** 2

    kinetic = (sparse.kron(second_difference(n_x, grid.dx), sparse.eye(n_y))
               + sparse.kron(sparse.eye(n_x), second_difference(n_y, grid.dy))) / (2.0 * action.mass)
    X, Y = grid.mesh()
    potential = eval_potential(action.coeffs, X, Y)[1:-1, 1:-1].ravel()
    return (kinetic + sparse.diags(potential)).toarray()


def ground_state(action: ActionParams, grid: Grid2D, tol: float = 1e-10, dt: float = 1e-3,
                 max_iter: int = 500000, check_every: int = 50,
                 workers: int = 1) -> Tuple[ScalarField2D, float]:
    """Ground state by imaginary-time relaxation.

    Returns the L2-normalized, non-negative psi_gr and E_gr, the Rayleigh
    quotient of the discrete H. Stops when two successive E estimates
    (check_every steps apart) differ by less than tol.
    """
    propagator = ImaginaryTimePropagator(action, grid, dt, workers)
    X, Y = grid.mesh()
    width = (2.0 * max(action.coeffs.v2, 0.1) * action.mass) ** 0.25
    psi = np.exp(-0.5 * width ** 2 * (X ** 2 + Y ** 2))[1:-1, 1:-1]
    cell = grid.dx * grid.dy

    energy_prev = math.inf
    for iteration in range(1, max_iter // check_every + 1):
        psi, _ = propagator.propagate(psi, check_every)
        psi /= math.sqrt(np.sum(psi ** 2) * cell)
        energy = float(np.sum(psi * propagator.apply_hamiltonian(psi)) * cell)
        if not math.isfinite(energy):
            raise ConvergenceError("Ground state energy is not finite; reduce dt or enlarge the grid")
        if np.min(psi) < -1e-8 * np.max(psi):
            raise ConvergenceError("Ground state iterate changes sign; the grid or dt is inadequate")
        logger.debug(f"ground state iteration {iteration * check_every}: E = {energy:.12f}")
        if abs(energy - energy_prev) < tol:
            psi = np.maximum(psi, 0.0)
            psi /= math.sqrt(np.sum(psi ** 2) * cell)
            logger.info(f"Ground state converged after {iteration * check_every} steps: E_gr = {energy:.10f}")
            return ScalarField2D(grid, _pad(psi)), energy
        energy_prev = energy

    raise ConvergenceError(f"Ground state did not converge in {max_iter} steps (last E = {energy_prev})")


def _evolve_source(propagator: ImaginaryTimePropagator, source: Tuple[int, int],
                   n_steps: int) -> Tuple[np.ndarray, float]:
    grid = propagator.grid
    u = np.zeros((grid.nx - 2, grid.ny - 2))
    u[source[0] - 1, source[1] - 1] = 1.0 / (grid.dx * grid.dy)
    return propagator.propagate(u, n_steps)


def _snap(grid: Grid2D, points: Sequence[Point]) -> List[Tuple[Tuple[int, int], Point]]:
    snapped = []
    for point in points:
        node = grid.nearest_node(point)
        coords = grid.node(*node)
        shift = math.hypot(coords[0] - point[0], coords[1] - point[1])
        if shift > 1e-9:
            logger.debug(f"Point {tuple(point)} snapped to node {coords} (shift {shift:.3g})")
        snapped.append((node, coords))
    return snapped


def transition_amplitudes(action: ActionParams, grid: Grid2D, points: Sequence[Point], T: float,
                          dt: float, endpoints: Optional[Sequence[Point]] = None,
                          workers: int = 1, progress: bool = False) -> List[TransitionRecord]:
    """G(x_fi, T; x_in, 0) for every x_in in `points` and x_fi in `endpoints`.

    Without `endpoints` all N^2 ordered pairs of `points` are produced. Points
    are snapped to the nearest grid node and records carry the node
    coordinates. The initial state is a discrete delta 1/(dx dy), so G has
    dimension 1/L^2. Records are ordered by source, then endpoint.
    """
    n_steps = _steps(T, dt)
    sources = _snap(grid, points)
    targets = sources if endpoints is None else _snap(grid, endpoints)
    propagator = ImaginaryTimePropagator(action, grid, T / n_steps)

    results = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_index = {
            executor.submit(_evolve_source, propagator, node, n_steps): index
            for index, (node, _) in enumerate(sources)
        }
        completed = as_completed(future_to_index)
        if progress:
            completed = tqdm(completed, total=len(sources), desc="amplitudes")
        for future in completed:
            results[future_to_index[future]] = future.result()

    records = []
    log_floor = math.log(UNDERFLOW_FLOOR)
    for index, (_, x_in) in enumerate(sources):
        u, log_scale = results[index]
        for (i, j), x_fi in targets:
            value = u[i - 1, j - 1]
            if value <= 0.0 or math.log(value) + log_scale < log_floor:
                logger.warning(f"Amplitude {x_in} -> {x_fi} is below the underflow floor")
                records.append(TransitionRecord(x_in, x_fi, T, 0.0, underflow=True))
            else:
                records.append(TransitionRecord(x_in, x_fi, T, math.exp(math.log(value) + log_scale)))
    logger.info(f"Computed {len(records)} transition amplitudes at T = {T}")
    return records


def eta_field(records: Sequence[TransitionRecord], ref_norm: float) -> np.ndarray:
    """eta = -log(G / G_0) for each record."""
    if not ref_norm > 0:
        raise ModelError(f"Reference normalization must be positive, got {ref_norm}")
    amplitudes = np.array([r.amplitude for r in records], dtype=np.float64)
    if np.any(amplitudes <= 0):
        bad = int(np.argmin(amplitudes))
        raise ModelError(f"Record {bad} has non-positive amplitude {amplitudes[bad]}")
    return -np.log(amplitudes / ref_norm)


def ground_state_1d(x: np.ndarray, v: np.ndarray, mass: float = 1.0) -> Tuple[np.ndarray, float]:
    """Lowest eigenpair of -(1/2m) d^2/dx^2 + v on a uniform 1-D grid (Dirichlet ends).

    Returns (psi, E) with psi positive in the interior, zero at both ends and
    normalized so that sum psi^2 dx = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.ndim != 1 or x.shape != v.shape or x.size < 16:
        raise GridError(f"1-D grid needs matching x and v with at least 16 nodes, got {x.shape} and {v.shape}")
    dx = float(x[1] - x[0])
    if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=0.0) or dx <= 0:
        raise GridError("1-D grid must be uniform and increasing")
    if mass <= 0:
        raise ModelError(f"Mass must be positive, got {mass}")

    diagonal = 1.0 / (mass * dx ** 2) + v[1:-1]
    off_diagonal = np.full(x.size - 3, -0.5 / (mass * dx ** 2))
    energies, vectors = eigh_tridiagonal(diagonal, off_diagonal, select='i', select_range=(0, 0))
    psi = np.zeros_like(x)
    psi[1:-1] = vectors[:, 0]
    if psi[np.argmax(np.abs(psi))] < 0:
        psi = -psi
    psi = np.maximum(psi, 0.0)
    psi /= math.sqrt(np.sum(psi ** 2) * dx)
    return psi, float(energies[0])
