"""Statistics of Lyapunov exponent ensembles: histograms, the chaotic fraction R,
cumulative distributions, Gaussian fits and the linear <lambda>(E) trend."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from ..errors import StatsError

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_C = 0.005
DEFAULT_SENSITIVITY = (0.002, 0.005, 0.01)
NEAR_ZERO_WINDOW = (-0.01, 0.05, 60)
POSITIVE_WINDOW = (0.0, 0.25, 50)
SUMMARY_COLUMNS = ['system', 'v22', 'E', 'lambda_c', 'R', 'mean', 'sigma', 'eps_fit', 'mean_chaotic', 'peak', 'n']


@dataclass
class LambdaHistogram:
    """Bin counts on [edges[0], edges[-1]] plus out-of-range tallies."""
    edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.edges.ndim != 1 or len(self.edges) != len(self.counts) + 1:
            raise StatsError("Histogram needs len(edges) == len(counts) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise StatsError("Histogram edges must be strictly increasing")
        if np.any(self.counts < 0):
            raise StatsError("Histogram counts must be non-negative")

    @property
    def normalization(self) -> int:
        return int(self.counts.sum())

    @property
    def total(self) -> int:
        return self.normalization + self.underflow + self.overflow

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def density(self) -> np.ndarray:
        """counts / (normalization * width); integrates to 1 over the window."""
        if self.normalization == 0:
            return np.zeros(len(self.counts))
        return self.counts / (self.normalization * self.widths)


@dataclass
class GaussianFit:
    mean: float
    sigma: float
    amplitude: float
    relative_error: float
    degenerate: bool = False


@dataclass
class ChaosSummary:
    """Reduction of one (system, v22, E) ensemble."""
    energy: float
    v22: float
    system: str
    lambda_c: float
    ratio: float
    n: int
    mean_all: float
    mean_chaotic: float
    peak: float = float('nan')
    gaussian: Optional[GaussianFit] = None
    ratio_sensitivity: Dict[float, float] = field(default_factory=dict)
    cumulative: Tuple[np.ndarray, np.ndarray] = field(default_factory=lambda: (np.empty(0), np.empty(0)))
    near_zero: Optional[LambdaHistogram] = None
    positive: Optional[LambdaHistogram] = None

    def as_row(self) -> Dict[str, float]:
        g = self.gaussian
        return {
            'system': self.system,
            'v22': self.v22,
            'E': self.energy,
            'lambda_c': self.lambda_c,
            'R': self.ratio,
            'mean': g.mean if g else float('nan'),
            'sigma': g.sigma if g else float('nan'),
            'eps_fit': g.relative_error if g else float('nan'),
            'mean_chaotic': self.mean_chaotic,
            'peak': self.peak,
            'n': self.n,
        }


def _as_array(lambdas: Sequence[float]) -> np.ndarray:
    values = np.asarray(lambdas, dtype=np.float64).ravel()
    if values.size == 0:
        raise StatsError("No Lyapunov exponents given")
    if not np.all(np.isfinite(values)):
        raise StatsError("Lyapunov exponents must be finite")
    return values


def histogram(lambdas: Sequence[float], lo: float, hi: float, n_bins: int) -> LambdaHistogram:
    values = _as_array(lambdas)
    if n_bins < 2:
        raise StatsError(f"Need at least 2 bins, got {n_bins}")
    if not lo < hi:
        raise StatsError(f"Histogram window must satisfy lo < hi, got [{lo}, {hi}]")
    counts, edges = np.histogram(values, bins=n_bins, range=(lo, hi))
    return LambdaHistogram(edges, counts, int(np.sum(values < lo)), int(np.sum(values > hi)))


def chaotic_ratio(lambdas: Sequence[float], lambda_c: float = DEFAULT_LAMBDA_C) -> float:
    """R = fraction of lambda > lambda_c."""
    return float(np.mean(_as_array(lambdas) > lambda_c))


def cumulative(lambdas: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical P(lambda) = fraction <= value, at the sorted unique values."""
    values = np.sort(_as_array(lambdas))
    unique = np.unique(values)
    return unique, np.searchsorted(values, unique, side='right') / values.size


def cdf_at_edges(hist: LambdaHistogram) -> np.ndarray:
    """Fraction of all values below each bin edge, rebuilt from the counts."""
    if hist.total == 0:
        raise StatsError("Histogram is empty")
    below = hist.underflow + np.concatenate([[0], np.cumsum(hist.counts)])
    return below / hist.total


def peak_location(hist: LambdaHistogram) -> float:
    """Centre of the most populated bin."""
    if hist.normalization == 0:
        raise StatsError("Histogram has no counts in its window")
    return float(hist.centers[int(np.argmax(hist.counts))])


def _gaussian(x, amplitude, mean, sigma):
    return amplitude * np.exp(-0.5 * ((x - mean) / sigma) ** 2)


def gaussian_fit(hist: LambdaHistogram) -> GaussianFit:
    """Least squares Gaussian on the bin densities.

    relative_error = ||fit - data|| / ||data|| over all bins. A width below
    half a bin is reported as degenerate.
    """
    if np.count_nonzero(hist.counts) < 5:
        raise StatsError(f"Gaussian fit needs at least 5 nonzero bins, got {np.count_nonzero(hist.counts)}")
    x = hist.centers
    y = hist.density
    mean0 = float(np.sum(x * hist.counts) / hist.normalization)
    sigma0 = float(np.sqrt(np.sum((x - mean0) ** 2 * hist.counts) / hist.normalization))
    sigma0 = max(sigma0, float(np.min(hist.widths)))
    try:
        popt, _ = curve_fit(_gaussian, x, y, p0=(float(np.max(y)), mean0, sigma0), maxfev=10000)
    except (RuntimeError, ValueError) as e:
        raise StatsError(f"Gaussian fit did not converge: {e}") from e

    amplitude, mean, sigma = float(popt[0]), float(popt[1]), abs(float(popt[2]))
    degenerate = not math.isfinite(sigma) or sigma < 0.5 * float(np.min(hist.widths))
    if degenerate:
        logger.warning(f"Degenerate Gaussian fit: sigma = {sigma:.3g}")
    relative_error = float(np.linalg.norm(_gaussian(x, amplitude, mean, sigma) - y) / np.linalg.norm(y))
    return GaussianFit(mean, sigma, amplitude, relative_error, degenerate)


def summarize(lambdas: Sequence[float], energy: float, v22: float, system: str,
              lambda_c: float = DEFAULT_LAMBDA_C, sensitivity: Sequence[float] = DEFAULT_SENSITIVITY,
              near_zero: Tuple[float, float, int] = NEAR_ZERO_WINDOW,
              positive: Tuple[float, float, int] = POSITIVE_WINDOW) -> ChaosSummary:
    """Full reduction of an ensemble; the positive histogram and the Gaussian
    fit use the chaotic subset lambda > lambda_c only."""
    values = _as_array(lambdas)
    chaotic = values[values > lambda_c]

    summary = ChaosSummary(
        energy=float(energy),
        v22=float(v22),
        system=system,
        lambda_c=lambda_c,
        ratio=chaotic_ratio(values, lambda_c),
        n=int(values.size),
        mean_all=float(np.mean(values)),
        mean_chaotic=float(np.mean(chaotic)) if chaotic.size else float('nan'),
        ratio_sensitivity={float(c): chaotic_ratio(values, c) for c in sensitivity},
        cumulative=cumulative(values),
        near_zero=histogram(values, *near_zero),
    )
    if chaotic.size:
        summary.positive = histogram(chaotic, *positive)
        if summary.positive.normalization:
            summary.peak = peak_location(summary.positive)
        try:
            summary.gaussian = gaussian_fit(summary.positive)
        except StatsError as e:
            logger.warning(f"No Gaussian fit for {system} v22={v22} E={energy}: {e}")
    logger.info(f"{system} v22={v22} E={energy}: R = {summary.ratio:.4f} (lambda_c = {lambda_c}), n = {summary.n}")
    return summary


def linear_fit_mean_vs_E(summaries: Sequence[ChaosSummary], use: str = 'mean_chaotic') -> Tuple[float, float]:
    """(lambda0, slope) of <lambda> = lambda0 + slope * E by ordinary least squares."""
    if use not in ('mean_chaotic', 'mean_all'):
        raise StatsError(f"Unknown mean '{use}' (expected 'mean_chaotic' or 'mean_all')")
    points = [(s.energy, getattr(s, use)) for s in summaries if math.isfinite(getattr(s, use))]
    if len({e for e, _ in points}) < 3:
        raise StatsError(f"Linear fit needs at least 3 energies, got {len(points)}")
    energies, means = np.array(points).T
    slope, intercept = np.polyfit(energies, means, 1)
    return float(intercept), float(slope)


def summaries_by_system(summaries: Sequence[ChaosSummary]) -> Dict[Tuple[str, float], List[ChaosSummary]]:
    """Group summaries by (system, v22), each group sorted by energy."""
    groups: Dict[Tuple[str, float], List[ChaosSummary]] = {}
    for s in summaries:
        groups.setdefault((s.system, s.v22), []).append(s)
    return {key: sorted(group, key=lambda s: s.energy) for key, group in groups.items()}
