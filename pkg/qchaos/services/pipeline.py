"""Stage graph of a full run.

ground-state -> amplitudes -> fit-action -> riccati; susy1d stands alone;
poincare and lyapunov use the fitted action; stats reduces lyapunov; report
collects everything. Each stage writes into <out>/<stage>/ with a manifest.
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

from ..config import RunConfig
from ..errors import ModelError, NumericalError
from ..models import ActionParams, Grid2D, TransitionRecord
from ..utils import artifacts, chaostats, dynamics, qaction, schrodinger2d
from ..utils.artifacts import coupling_tag, energy_tag
from .cache_service import CacheService

logger = logging.getLogger(__name__)

SYSTEMS = ('classical', 'quantum')


@dataclass(frozen=True)
class StageSpec:
    sections: Tuple[str, ...]
    requires: Tuple[str, ...] = ()


_SOLVE = ('model', 'solver')
_FIT = _SOLVE + ('fit',)
_DYNAMICS = _FIT + ('dynamics',)

STAGES: Dict[str, StageSpec] = {
    'ground-state': StageSpec(_SOLVE),
    'amplitudes': StageSpec(_FIT, ('ground-state',)),
    'fit-action': StageSpec(_FIT, ('amplitudes',)),
    'riccati': StageSpec(_FIT, ('ground-state', 'fit-action')),
    'susy1d': StageSpec(_SOLVE),
    'poincare': StageSpec(_DYNAMICS, ('fit-action',)),
    'lyapunov': StageSpec(_DYNAMICS, ('fit-action',)),
    'stats': StageSpec(_DYNAMICS + ('stats',), ('lyapunov',)),
    'report': StageSpec(_DYNAMICS + ('stats',), ('fit-action', 'ground-state', 'riccati', 'stats')),
}


class Pipeline:
    """Runs stages of one configuration, reusing cached artifacts when valid."""

    def __init__(self, config: RunConfig, threads: int = 1, force: bool = False, progress: bool = False):
        self.config = config
        self.threads = max(1, threads)
        self.force = force
        self.progress = progress
        self.cache = CacheService(config.output_dir)
        self._runners: Dict[str, Callable[[], List[Path]]] = {
            'ground-state': self._ground_state,
            'amplitudes': self._amplitudes,
            'fit-action': self._fit_action,
            'riccati': self._riccati,
            'susy1d': self._susy1d,
            'poincare': self._poincare,
            'lyapunov': self._lyapunov,
            'stats': self._stats,
            'report': self._report,
        }

    # --- orchestration --------------------------------------------------------

    def config_hash(self, stage: str) -> str:
        return self.config.section_hash(STAGES[stage].sections)

    def run_stage(self, stage: str) -> List[Path]:
        if stage not in STAGES:
            raise ModelError(f"Unknown stage '{stage}' (expected one of {', '.join(STAGES)})")
        inputs: List[Path] = []
        for prerequisite in STAGES[stage].requires:
            inputs += self.cache.require(stage, prerequisite, self.config_hash(prerequisite), self.force)

        config_hash = self.config_hash(stage)
        if not self.force and self.cache.is_fresh(stage, config_hash, inputs):
            logger.info(f"Stage '{stage}' is up to date, reusing cached artifacts")
            return self.cache.outputs(stage)

        logger.info(f"Running stage '{stage}'")
        outputs = self._runners[stage]()
        self.cache.set_manifest(stage, config_hash, inputs, outputs)
        logger.info(f"Stage '{stage}' wrote {len(outputs)} artifacts")
        return outputs

    def run_all(self) -> Dict[str, List[Path]]:
        return {stage: self.run_stage(stage) for stage in STAGES}

    # --- helpers --------------------------------------------------------------

    def _write(self, stage: str, name: str, frame: pd.DataFrame) -> Path:
        path = self.cache.stage_dir(stage) / name
        self.cache.write_text(path, artifacts.to_csv_text(frame))
        return path

    def _read(self, stage: str, name: str) -> pd.DataFrame:
        return artifacts.read_csv(self.cache.out_dir / stage / name)

    @property
    def grid(self) -> Grid2D:
        solver = self.config.solver
        return Grid2D.square(solver.half_width, solver.n_grid)

    def classical(self, v22: float) -> ActionParams:
        model = self.config.model
        return ActionParams.classical(model.v2, v22, model.mass)

    def fitted(self, v22: float) -> ActionParams:
        table = self._read('fit-action', f"fit_{coupling_tag(v22)}.csv")
        return ActionParams.from_dict(artifacts.parse_table(table))

    def action(self, system: str, v22: float) -> ActionParams:
        return self.classical(v22) if system == 'classical' else self.fitted(v22)

    def lattice(self) -> List[Tuple[float, float]]:
        fit = self.config.fit
        axis = np.linspace(-fit.lattice_half_width, fit.lattice_half_width, fit.lattice_n)
        return [(float(x), float(y)) for x in axis for y in axis]

    def _seed(self, *keys: int) -> int:
        sequence = np.random.SeedSequence([self.config.dynamics.seed, *keys])
        return int(sequence.generate_state(1)[0])

    # --- stages -----------------------------------------------------------------

    def _ground_state(self) -> List[Path]:
        solver = self.config.solver
        outputs, rows = [], []
        for v22 in self.config.model.couplings:
            psi, energy = schrodinger2d.ground_state(self.classical(v22), self.grid, solver.ground_tol, solver.dt,
                                                     solver.max_iter, workers=self.threads)
            outputs.append(self._write('ground-state', f"psi_{coupling_tag(v22)}.csv",
                                       artifacts.field_frame(psi)))
            rows.append({'v22': v22, 'E_gr': energy, 'n_grid': solver.n_grid, 'half_width': solver.half_width})
        outputs.append(self._write('ground-state', 'energy.csv', pd.DataFrame(rows)))
        return outputs

    def _amplitudes(self) -> List[Path]:
        solver = self.config.solver
        grid = self.grid
        lattice = self.lattice()
        stencil = [(x + dx, y + dy) for x, y in lattice
                   for dx, dy in ((grid.dx, 0.0), (-grid.dx, 0.0), (0.0, grid.dy), (0.0, -grid.dy))]
        half = self.config.fit.lattice_half_width
        outputs = []
        for v22 in self.config.model.couplings:
            psi = artifacts.field_from_frame(self._read('ground-state', f"psi_{coupling_tag(v22)}.csv"))
            X, Y = grid.mesh()
            inside = (np.abs(X) <= half) & (np.abs(Y) <= half)
            weight = float(np.sum(psi.values[inside] ** 2) / np.sum(psi.values ** 2))
            logger.info(f"v22 = {v22}: fit lattice box holds {weight:.1%} of |psi_gr|^2")

            records = schrodinger2d.transition_amplitudes(self.classical(v22), grid, lattice, solver.T, solver.dt,
                                                          endpoints=lattice + stencil, workers=self.threads,
                                                          progress=self.progress)
            outputs.append(self._write('amplitudes', f"amplitudes_{coupling_tag(v22)}.csv",
                                       artifacts.records_frame(records)))
        return outputs

    def _records(self, v22: float) -> Tuple[List[TransitionRecord], List[TransitionRecord]]:
        """(all records, records between lattice points)"""
        records = artifacts.records_from_frame(self._read('amplitudes', f"amplitudes_{coupling_tag(v22)}.csv"))
        sources = {r.x_in for r in records}
        return records, [r for r in records if r.x_fi in sources]

    def _fit_action(self) -> List[Path]:
        fit = self.config.fit
        delta = self.grid.dx
        outputs = []
        for v22 in self.config.model.couplings:
            classical = self.classical(v22)
            records, pairs = self._records(v22)
            data = qaction.FitDataset(pairs, (-fit.lattice_half_width, fit.lattice_half_width))
            result = qaction.fit_quantum_action(data, classical, fit.residual_mode, fit.n_nodes, fit.richardson,
                                                fit.ftol, fit.max_nfev, workers=self.threads,
                                                progress=self.progress)
            checks = {
                'v22': v22,
                'eps': result.residual,
                'c': result.c,
                'n_pairs': result.n_pairs,
                'momentum_deviation': qaction.verify_momentum_condition(result.params, records, delta,
                                                                        fit.n_nodes, self.threads),
                'energy_balance_deviation': qaction.verify_energy_balance(result.params, records, delta),
            }
            if fit.check_basins:
                checks['second_basins'] = sum(
                    qaction.solve_euclidean_bvp(result.params, a, b, data.T, fit.n_nodes,
                                                check_basins=True).alternate_action is not None
                    for a, b in data.pairs)
            outputs.append(self._write('fit-action', f"fit_{coupling_tag(v22)}.csv",
                                       artifacts.table_frame(result.to_table(classical))))
            outputs.append(self._write('fit-action', f"checks_{coupling_tag(v22)}.csv", pd.DataFrame([checks])))
        return outputs

    def _riccati(self) -> List[Path]:
        energies = self._read('ground-state', 'energy.csv')
        outputs, rows = [], []
        for v22 in self.config.model.couplings:
            tag = coupling_tag(v22)
            psi = artifacts.field_from_frame(self._read('ground-state', f"psi_{tag}.csv"))
            e_gr = float(energies.loc[np.isclose(energies['v22'], v22), 'E_gr'].iloc[0])
            riccati = qaction.riccati_quantum_potential(psi)
            fitted = qaction.quantum_potential_field(self.fitted(v22), psi.grid)
            region = riccati.valid() & (psi.values > 0.01 * np.max(psi.values))
            residual = qaction.riccati_residual(psi, self.classical(v22), e_gr)
            rows.append({
                'v22': v22,
                'E_gr': e_gr,
                'route_rms_difference': qaction.compare_fields(fitted, riccati, region),
                'residual_rms': residual.rms(),
            })
            outputs.append(self._write('riccati', f"quantum_potential_{tag}.csv",
                                       artifacts.field_frame(riccati, fitted=fitted)))
        outputs.append(self._write('riccati', 'riccati_summary.csv', pd.DataFrame(rows)))
        return outputs

    def _susy1d(self) -> List[Path]:
        solver = self.config.solver
        v2 = self.config.model.v2
        s = np.linspace(-solver.half_width, solver.half_width, 2 * solver.n_grid + 1)
        outputs, rows = [], []
        for v22 in self.config.model.couplings:
            # diagonal x = y = s / sqrt(2) of the 2-D potential, in units hbar = 2m = 1
            v = v2 * s ** 2 + 0.25 * v22 * s ** 4
            psi, e0 = schrodinger2d.ground_state_1d(s, v, mass=0.5)
            partner = qaction.susy_partner_1d(s, psi, v - e0)
            rows.append({'v22': v22, 'E0': e0, 'convention_deviation': partner.convention_deviation,
                         'riccati_defect': partner.riccati_defect})
            outputs.append(self._write('susy1d', f"susy_{coupling_tag(v22)}.csv", pd.DataFrame({
                'x': s, 'psi': psi, 'w_s': partner.w_s, 'v_minus': partner.v_minus,
                'v_plus': partner.v_plus, 'valid': partner.mask.astype(int),
            })))
        outputs.append(self._write('susy1d', 'susy_summary.csv', pd.DataFrame(rows)))
        return outputs

    def _poincare(self) -> List[Path]:
        dyn = self.config.dynamics
        spec = dynamics.SectionSpec(**dyn.section.dict())
        outputs, fixed_rows = [], []
        for ci, v22 in enumerate(self.config.model.couplings):
            for si, system in enumerate(SYSTEMS):
                action = self.action(system, v22)
                for ei, E in enumerate(dyn.section_energies):
                    energy = dynamics.absolute_energy(action, E, dyn.energy_reference)
                    starts = dynamics.sample_energy_shell_many(action, energy, dyn.n_orbits, self._seed(ci, si, ei))
                    orbits = self._section_orbits(action, starts, spec)
                    name = f"section_{system}_{coupling_tag(v22)}_{energy_tag(E)}.csv"
                    outputs.append(self._write('poincare', name, artifacts.section_frame(orbits)))
                    for point in dynamics.section_fixed_points(action, energy, spec, dt=dyn.dt):
                        fixed_rows.append({'system': system, 'v22': v22, 'E': E, 'x': point.x, 'px': point.px,
                                           'trace': point.trace, 'kind': point.kind})
        columns = ['system', 'v22', 'E', 'x', 'px', 'trace', 'kind']
        outputs.append(self._write('poincare', 'fixed_points.csv', pd.DataFrame(fixed_rows, columns=columns)))
        return outputs

    def _section_orbits(self, action, starts, spec) -> List[Tuple[int, np.ndarray]]:
        dyn = self.config.dynamics
        orbits = []
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            future_to_id = {
                executor.submit(dynamics.poincare_section, action, state, spec, dyn.n_crossings, dyn.dt): orbit_id
                for orbit_id, state in enumerate(starts)
            }
            for future in as_completed(future_to_id):
                orbit_id = future_to_id[future]
                try:
                    orbits.append((orbit_id, future.result().points))
                except NumericalError as e:
                    logger.error(f"Poincare orbit {orbit_id} failed: {e}")
        return sorted(orbits, key=lambda item: item[0])

    def _lyapunov(self) -> List[Path]:
        dyn = self.config.dynamics
        outputs, failures = [], []
        for ci, v22 in enumerate(self.config.model.couplings):
            for si, system in enumerate(SYSTEMS):
                action = self.action(system, v22)
                for ei, E in enumerate(dyn.energies):
                    ensemble = dynamics.run_ensemble(action, E, dyn.n_ensemble, dyn.T_c, self._seed(ci, si, ei),
                                                     dyn.dt, dyn.renorm_every, system, v22, dyn.energy_reference,
                                                     self.threads, self.progress)
                    tag = f"{system}_{coupling_tag(v22)}_{energy_tag(E)}"
                    outputs.append(self._write('lyapunov', f"lyapunov_{tag}.csv", pd.DataFrame({
                        'seed': [r.seed_index for r in ensemble.records],
                        'x0': [r.initial.x for r in ensemble.records],
                        'y0': [r.initial.y for r in ensemble.records],
                        'px0': [r.initial.px for r in ensemble.records],
                        'py0': [r.initial.py for r in ensemble.records],
                        'E': [float(E)] * len(ensemble.records),
                        'lambda': [r.lam for r in ensemble.records],
                    }, columns=['seed', 'x0', 'y0', 'px0', 'py0', 'E', 'lambda'])))
                    traces = [(r.seed_index, t, lam) for r in ensemble.records[:dyn.n_traces] for t, lam in r.trace]
                    outputs.append(self._write('lyapunov', f"traces_{tag}.csv",
                                               pd.DataFrame(traces, columns=['seed', 't', 'lambda'])))
                    failures += [(system, v22, E, index, message) for index, message in ensemble.failures]
        outputs.append(self._write('lyapunov', 'failures.csv',
                                   pd.DataFrame(failures, columns=['system', 'v22', 'E', 'seed', 'message'])))
        return outputs

    def _stats(self) -> List[Path]:
        dyn, stats = self.config.dynamics, self.config.stats
        outputs, summaries = [], []
        for v22 in self.config.model.couplings:
            for system in SYSTEMS:
                for E in dyn.energies:
                    tag = f"{system}_{coupling_tag(v22)}_{energy_tag(E)}"
                    lambdas = self._read('lyapunov', f"lyapunov_{tag}.csv")['lambda'].to_numpy()
                    if lambdas.size == 0:
                        logger.warning(f"Empty ensemble {tag}; no statistics")
                        continue
                    summary = chaostats.summarize(
                        lambdas, E, v22, system, stats.lambda_c, stats.sensitivity,
                        (*stats.near_zero_window, stats.near_zero_bins),
                        (*stats.positive_window, stats.positive_bins))
                    summaries.append(summary)
                    outputs.append(self._write('stats', f"hist_near_{tag}.csv", _histogram_frame(summary.near_zero)))
                    if summary.positive is not None:
                        outputs.append(self._write('stats', f"hist_pos_{tag}.csv", _histogram_frame(summary.positive)))
                    values, probabilities = summary.cumulative
                    outputs.append(self._write('stats', f"cumulative_{tag}.csv",
                                               pd.DataFrame({'lambda': values, 'P': probabilities})))

        sensitivity_columns = [f"R_at_{c:g}" for c in sorted(stats.sensitivity)]
        rows = []
        for summary in summaries:
            row = summary.as_row()
            row.update({f"R_at_{c:g}": r for c, r in summary.ratio_sensitivity.items()})
            rows.append(row)
        columns = chaostats.SUMMARY_COLUMNS + sensitivity_columns
        outputs.append(self._write('stats', 'summary.csv', pd.DataFrame(rows, columns=columns)))

        fits = []
        for (system, v22), group in chaostats.summaries_by_system(summaries).items():
            try:
                lambda0, slope = chaostats.linear_fit_mean_vs_E(group, stats.mean_over)
            except NumericalError as e:
                logger.warning(f"No linear fit for {system} v22={v22}: {e}")
                continue
            fits.append({'system': system, 'v22': v22, 'lambda0': lambda0, 'slope': slope})
        outputs.append(self._write('stats', 'linear_fit.csv',
                                   pd.DataFrame(fits, columns=['system', 'v22', 'lambda0', 'slope'])))
        return outputs

    def _report(self) -> List[Path]:
        energies = self._read('ground-state', 'energy.csv')
        riccati = self._read('riccati', 'riccati_summary.csv')
        outputs, rows = [], []
        for v22 in self.config.model.couplings:
            tag = coupling_tag(v22)
            table = self._read('fit-action', f"fit_{tag}.csv")
            checks = self._read('fit-action', f"checks_{tag}.csv").iloc[0]
            outputs.append(self._write('report', f"table_{tag}.csv",
                                       table[['parameter', 'classical', 'quantum', 'uncertainty']]))
            quantum = artifacts.parse_table(table)
            e_gr = float(energies.loc[np.isclose(energies['v22'], v22), 'E_gr'].iloc[0])
            route = riccati.loc[np.isclose(riccati['v22'], v22)].iloc[0]
            rows.append({
                'v22': v22,
                'E_gr': e_gr,
                'mass': quantum['mass'],
                'v0': quantum['v0'],
                'v0_minus_E_gr': quantum['v0'] - e_gr,
                'v2': quantum['v2'],
                'v22_fit': quantum['v22'],
                'eps': float(checks['eps']),
                'momentum_deviation': float(checks['momentum_deviation']),
                'energy_balance_deviation': float(checks['energy_balance_deviation']),
                'route_rms_difference': float(route['route_rms_difference']),
                'residual_rms': float(route['residual_rms']),
            })
        outputs.append(self._write('report', 'report.csv', pd.DataFrame(rows)))
        summary = self._read('stats', 'summary.csv')
        if len(summary):
            ratio = summary.pivot_table(index=['v22', 'E'], columns='system', values='R').reset_index()
            ratio.columns.name = None
            outputs.append(self._write('report', 'chaotic_fraction.csv', ratio))
        return outputs


def _histogram_frame(hist: chaostats.LambdaHistogram) -> pd.DataFrame:
    return pd.DataFrame({
        'bin_lo': hist.edges[:-1],
        'bin_hi': hist.edges[1:],
        'count': hist.counts,
        'density': hist.density,
    })
