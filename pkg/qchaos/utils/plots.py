"""Plot-ready data files and a standalone matplotlib script for every figure."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd

from ..services.cache_service import CacheService
from .artifacts import read_csv, to_csv_text

logger = logging.getLogger(__name__)

PLOT_DIR = 'plots'

PLOT_SCRIPT = '''"""Draw the figures from the CSV files next to this script."""
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

HERE = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent


def surface(path, column, title):
    frame = pd.read_csv(path)
    xs, ys = np.unique(frame["x"]), np.unique(frame["y"])
    values = frame[column].to_numpy().reshape(len(xs), len(ys))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.plot_surface(X, Y, values, cmap="viridis", linewidth=0)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    fig.savefig(path.with_suffix(".png"), dpi=150)
    plt.close(fig)


def section(path):
    frame = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(frame["x"], frame["px"], s=0.5, c=frame["orbit_id"], cmap="tab20")
    ax.set_xlabel("x")
    ax.set_ylabel("px")
    ax.set_title(path.stem)
    fig.savefig(path.with_suffix(".png"), dpi=150)
    plt.close(fig)


def traces(path):
    frame = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed, group in frame.groupby("seed"):
        ax.loglog(group["t"], np.abs(group["lambda"]), label=f"seed {seed}")
    ax.set_xlabel("t")
    ax.set_ylabel("lambda(t)")
    ax.legend(fontsize="small")
    fig.savefig(path.with_suffix(".png"), dpi=150)
    plt.close(fig)


def distribution(path):
    frame = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(frame["bin_lo"], frame["density"], width=frame["bin_hi"] - frame["bin_lo"], align="edge")
    cumulative = path.with_name(path.name.replace("hist_near_", "cumulative_").replace("hist_pos_", "cumulative_"))
    if cumulative.exists():
        cdf = pd.read_csv(cumulative)
        twin = ax.twinx()
        twin.step(cdf["lambda"], cdf["P"], where="post", color="k")
        twin.set_ylim(0, 1)
        twin.set_xlim(frame["bin_lo"].iloc[0], frame["bin_hi"].iloc[-1])
    ax.set_xlabel("lambda")
    ax.set_title(path.stem)
    fig.savefig(path.with_suffix(".png"), dpi=150)
    plt.close(fig)


def ratio(path):
    frame = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    for system in ("classical", "quantum"):
        ax.plot(frame["E"], frame[system], marker="o", label=system)
    ax.set_xlabel("E")
    ax.set_ylabel("R")
    ax.legend()
    fig.savefig(path.with_suffix(".png"), dpi=150)
    plt.close(fig)


for path in sorted(HERE.glob("psi_*.csv")):
    surface(path, "value", "ground state")
for path in sorted(HERE.glob("quantum_potential_*.csv")):
    surface(path, "value", "quantum potential")
for path in sorted(HERE.glob("traces_*.csv")):
    traces(path)
for path in sorted(HERE.glob("section_*.csv")):
    section(path)
for path in sorted(HERE.glob("hist_near_*.csv")) + sorted(HERE.glob("hist_pos_*.csv")):
    distribution(path)
for path in sorted(HERE.glob("ratio_*.csv")):
    ratio(path)
'''


@dataclass
class PlotBundle:
    written: Dict[str, List[Path]] = field(default_factory=dict)
    missing: List[str] = field(default_factory=list)
    script: Path = None


def _copy(cache: CacheService, source: Path, target: Path, columns: List[str] = None) -> Path:
    frame = read_csv(source)
    if columns is not None:
        frame = frame[columns]
    cache.write_text(target, to_csv_text(frame))
    return target


def _ratio_frames(summary: pd.DataFrame) -> Dict[float, pd.DataFrame]:
    frames = {}
    for v22, group in summary.groupby('v22'):
        table = group.pivot_table(index='E', columns='system', values='R').reset_index()
        table.columns.name = None
        for system in ('classical', 'quantum'):
            if system not in table:
                table[system] = float('nan')
        frames[float(v22)] = table[['E', 'classical', 'quantum']]
    return frames


def emit_plots(out_dir: Union[str, Path]) -> PlotBundle:
    """Collect per-figure data files under <out>/plots/ and write plot_figures.py.

    Figures whose artifacts are missing are listed in `missing` (and logged);
    the rest are still emitted.
    """
    out_dir = Path(out_dir)
    cache = CacheService(out_dir)
    target = cache.stage_dir(PLOT_DIR)
    bundle = PlotBundle()

    sources = [
        ('ground_state', 'ground-state', 'psi_', None),
        ('quantum_potential', 'riccati', 'quantum_potential_', None),
        ('traces', 'lyapunov', 'traces_', None),
        ('sections', 'poincare', 'section_', ['orbit_id', 'x', 'px']),
        ('distributions', 'stats', 'hist_', None),
        ('distributions', 'stats', 'cumulative_', None),
    ]
    for figure, stage, prefix, columns in sources:
        paths = sorted((out_dir / stage).glob(f"{prefix}*.csv"))
        for path in paths:
            bundle.written.setdefault(figure, []).append(_copy(cache, path, target / path.name, columns))
    bundle.missing = [figure for figure in dict.fromkeys(s[0] for s in sources) if figure not in bundle.written]

    summary_path = out_dir / 'stats' / 'summary.csv'
    summary = read_csv(summary_path) if summary_path.exists() else pd.DataFrame()
    if len(summary):
        bundle.written['chaotic_fraction'] = []
        for v22, frame in _ratio_frames(summary).items():
            path = target / f"ratio_v22_{v22:g}.csv"
            cache.write_text(path, to_csv_text(frame))
            bundle.written['chaotic_fraction'].append(path)
    else:
        bundle.missing.append('chaotic_fraction')

    bundle.script = target / 'plot_figures.py'
    cache.write_text(bundle.script, PLOT_SCRIPT)
    if bundle.missing:
        logger.warning(f"Missing artifacts for figures: {', '.join(bundle.missing)}")
    logger.info(f"Wrote plot data for {len(bundle.written)} figure groups to {target}")
    return bundle
