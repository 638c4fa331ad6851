"""Grid-sampled fields and transition amplitude records."""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..errors import GridError, ModelError

Point = Tuple[float, float]


@dataclass(frozen=True)
class Grid2D:
    """Uniform node grid including the (Dirichlet) boundary nodes."""
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GridError(f"Grid bounds must be increasing: x [{self.x_min}, {self.x_max}], "
                            f"y [{self.y_min}, {self.y_max}]")
        if self.nx < 16 or self.ny < 16:
            raise GridError(f"Grid needs at least 16 nodes per axis, got {self.nx}x{self.ny}")

    @classmethod
    def square(cls, half_width: float, n: int) -> 'Grid2D':
        return cls(-half_width, half_width, -half_width, half_width, n, n)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.nx, self.ny

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """(X, Y) with indexing 'ij', i.e. values[i, j] sits at (x[i], y[j])."""
        return np.meshgrid(self.x, self.y, indexing='ij')

    def is_symmetric(self) -> bool:
        return (self.nx == self.ny and np.isclose(self.x_min, self.y_min)
                and np.isclose(self.x_max, self.y_max))

    def nearest_node(self, point: Point) -> Tuple[int, int]:
        """Index of the node closest to `point`; the point must lie strictly inside."""
        px, py = float(point[0]), float(point[1])
        if not (self.x_min < px < self.x_max and self.y_min < py < self.y_max):
            raise GridError(f"Point ({px}, {py}) is not strictly inside the grid")
        i = int(round((px - self.x_min) / self.dx))
        j = int(round((py - self.y_min) / self.dy))
        if i in (0, self.nx - 1) or j in (0, self.ny - 1):
            raise GridError(f"Point ({px}, {py}) snaps onto the boundary")
        return i, j

    def node(self, i: int, j: int) -> Point:
        return self.x_min + i * self.dx, self.y_min + j * self.dy


@dataclass
class ScalarField2D:
    """Real field sampled on a Grid2D.

    `mask` marks the valid nodes of derived fields (log-derivative quantities
    are only defined where the wave function is not negligible); masked-out
    nodes hold 0.0.
    """
    grid: Grid2D
    values: np.ndarray
    mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ModelError(f"Field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("Field values must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.grid.shape:
                raise ModelError("Mask shape does not match grid")

    def norm(self) -> float:
        """L2 norm on the grid (sum |f|^2 dx dy)^(1/2)."""
        return float(np.sqrt(np.sum(self.values ** 2) * self.grid.dx * self.grid.dy))

    def normalized(self) -> 'ScalarField2D':
        return ScalarField2D(self.grid, self.values / self.norm(), self.mask)

    def at(self, point: Point) -> float:
        i, j = self.grid.nearest_node(point)
        return float(self.values[i, j])

    def valid(self) -> np.ndarray:
        return np.ones(self.grid.shape, dtype=bool) if self.mask is None else self.mask

    def rms(self) -> float:
        """Root mean square over the valid nodes."""
        valid = self.valid()
        if not np.any(valid):
            raise ModelError("Field has no valid nodes")
        return float(np.sqrt(np.mean(self.values[valid] ** 2)))

    def transposed(self) -> 'ScalarField2D':
        """Field with x and y exchanged (grid must be symmetric)."""
        mask = None if self.mask is None else self.mask.T
        return ScalarField2D(self.grid, self.values.T.copy(), mask)


@dataclass(frozen=True)
class TransitionRecord:
    """Euclidean transition amplitude G(x_fi, T; x_in, 0)."""
    x_in: Point
    x_fi: Point
    T: float
    amplitude: float
    underflow: bool = False

    def __post_init__(self):
        if self.T <= 0:
            raise ModelError(f"Transition time must be positive, got {self.T}")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ModelError(f"Amplitude must be finite and non-negative, got {self.amplitude}")
        object.__setattr__(self, 'x_in', (float(self.x_in[0]), float(self.x_in[1])))
        object.__setattr__(self, 'x_fi', (float(self.x_fi[0]), float(self.x_fi[1])))

    @property
    def log_amplitude(self) -> float:
        return float(np.log(self.amplitude)) if self.amplitude > 0 else float('-inf')
