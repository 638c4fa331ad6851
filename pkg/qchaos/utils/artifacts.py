"""CSV artifacts: one header line, comma separated, '.' decimals, newline
terminated, scientific notation for |v| < 1e-4 or |v| > 1e6."""
import io
import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models import Grid2D, ScalarField2D, TransitionRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    value = float(value)
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    if value == 0.0:
        return '0.0'
    if abs(value) < 1e-4 or abs(value) > 1e6:
        return f"{value:.16e}"
    return repr(value)


def to_csv_text(frame: pd.DataFrame) -> str:
    """Canonical CSV text of a frame (float columns formatted with format_float)."""
    out = frame.copy()
    for column in out.columns:
        if pd.api.types.is_float_dtype(out[column]):
            out[column] = out[column].map(format_float)
    buffer = io.StringIO()
    out.to_csv(buffer, index=False, lineterminator='\n')
    return buffer.getvalue()


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def field_frame(field: ScalarField2D, name: str = 'value', **extra: ScalarField2D) -> pd.DataFrame:
    """Long-format frame (x, y, name[, extra..., valid]) of grid fields."""
    X, Y = field.grid.mesh()
    data = {'x': X.ravel(), 'y': Y.ravel(), name: field.values.ravel()}
    mask = field.valid()
    for column, other in extra.items():
        data[column] = other.values.ravel()
        mask = mask & other.valid()
    if field.mask is not None or any(other.mask is not None for other in extra.values()):
        data['valid'] = mask.ravel().astype(int)
    return pd.DataFrame(data)


def field_from_frame(frame: pd.DataFrame, column: str = 'value') -> ScalarField2D:
    """Inverse of field_frame for one column; the grid is rebuilt from the coordinates."""
    xs = np.unique(frame['x'].to_numpy())
    ys = np.unique(frame['y'].to_numpy())
    grid = Grid2D(float(xs[0]), float(xs[-1]), float(ys[0]), float(ys[-1]), len(xs), len(ys))
    values = frame[column].to_numpy().reshape(grid.shape)
    mask = frame['valid'].to_numpy().reshape(grid.shape).astype(bool) if 'valid' in frame else None
    return ScalarField2D(grid, values, mask)


def records_frame(records: Sequence[TransitionRecord]) -> pd.DataFrame:
    return pd.DataFrame({
        'x_in_x': [r.x_in[0] for r in records],
        'x_in_y': [r.x_in[1] for r in records],
        'x_fi_x': [r.x_fi[0] for r in records],
        'x_fi_y': [r.x_fi[1] for r in records],
        'T': [float(r.T) for r in records],
        'amplitude': [r.amplitude for r in records],
        'underflow': [int(r.underflow) for r in records],
    })


def records_from_frame(frame: pd.DataFrame) -> List[TransitionRecord]:
    return [
        TransitionRecord((row.x_in_x, row.x_in_y), (row.x_fi_x, row.x_fi_y), row.T, row.amplitude,
                         bool(row.underflow))
        for row in frame.itertuples(index=False)
    ]


def table_frame(rows: Sequence[Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows))


def coupling_tag(v22: float) -> str:
    """File name tag of a coupling, e.g. 0.25 -> 'v22_0.25'."""
    return f"v22_{v22:g}"


def energy_tag(E: float) -> str:
    return f"E_{E:g}"


def parse_table(frame: pd.DataFrame, key: str = 'parameter', value: str = 'quantum') -> Dict[str, float]:
    return {str(k): float(v) for k, v in zip(frame[key], frame[value])}


def section_frame(orbits: Sequence[Tuple[int, np.ndarray]]) -> pd.DataFrame:
    """(orbit_id, crossing_index, x, px) rows of several Poincare orbits."""
    rows = [(orbit_id, k, float(q), float(p)) for orbit_id, points in orbits for k, (q, p) in enumerate(points)]
    return pd.DataFrame(rows, columns=['orbit_id', 'crossing_index', 'x', 'px'])
