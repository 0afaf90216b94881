"""
Coarse Guidance Toolkit - Result Files
CSV writers for trajectories, hold-limit searches, certificates and sweeps. Every file
opens with a '#' provenance header and prints floats with a fixed number of
significant digits so reruns diff cleanly.
"""

import csv
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from config.loader import provenance_fields
from config.settings import settings
from schemas.params import RunConfig
from traffic.simulator import TAIL_FRACTIONS, Trajectory, TrajectorySummary

PathLike = Union[str, Path]

SWEEP_COLUMNS = ['param', 'value', 'sim_hold_limit', 'lk_hold_limit', 'lyap_bound', 'ovm_margin',
                 'n_collided', 'runtime_s', 'lower_witness', 'upper_witness', 'sim_flag', 'notes']


def format_value(value: Any, digits: Optional[int] = None) -> str:
    digits = digits or settings.float_digits
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return f"{float(value):.{digits}g}"
    if hasattr(value, 'value'):
        return str(value.value)
    return str(value)


def provenance_header(run: RunConfig, **extra: Any) -> List[str]:
    lines = [f"{key}: {value}" for key, value in provenance_fields(run).items()]
    lines += [f"{key}: {format_value(value)}" for key, value in extra.items()]
    return lines


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]], run: RunConfig,
              **header: Any) -> Path:
    """Provenance header, one header row, then formatted rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        for line in provenance_header(run, **header):
            handle.write(f"# {line}\n")
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
    return path


def trajectory_columns(n: int) -> List[str]:
    columns = ['t']
    for i in range(1, n + 1):
        columns += [f"s{i}", f"v{i}"]
    return columns + ['u', 'event']


def write_trajectory_csv(path: PathLike, traj: Trajectory, run: RunConfig, delta: float) -> Path:
    """Physical spacings and velocities, the held guidance, and events at each recorded step"""
    t_step = run.sim.t_step
    events: Dict[int, List[str]] = {}
    for event in traj.events:
        events.setdefault(int(round(event.time / t_step)), []).append(f"{event.kind.value}:{event.vehicle}")

    physical = traj.physical_states()
    n = physical.shape[1] // 2
    rows = []
    for i, step in enumerate(traj.steps):
        u = traj.controls[i] if i < len(traj.controls) else math.nan
        rows.append([traj.times[i], *physical[i], u, ';'.join(events.get(int(step), []))])
    return write_csv(path, trajectory_columns(n), rows, run, delta=delta, seed=traj.summary.seed)


def write_ensemble_csv(path: PathLike, summaries: Sequence[TrajectorySummary], run: RunConfig,
                       delta: float, status: str) -> Path:
    columns = ['seed', 'collided', 'diverged', 'final_error_norm', 'aeb_count', 'collision_time']
    columns += [f"tail_max_{int(round(f * 100))}" for f in TAIL_FRACTIONS]
    rows = [[s.seed, s.collided, s.diverged, s.final_error_norm, s.aeb_count, s.collision_time,
             *[s.tail_maxima[f] for f in TAIL_FRACTIONS]] for s in summaries]
    return write_csv(path, columns, rows, run, delta=delta, verdict=status)


def write_witness_csv(path: PathLike, result: Any, run: RunConfig) -> Path:
    """Every trial of a hold-limit search with the bracketing pair in the header"""
    rows = [[delta, passed, result.collisions.get(delta, 0)] for delta, passed in sorted(result.trials.items())]
    return write_csv(path, ['delta', 'converged', 'n_collided'], rows, run,
                     hold_limit=result.limit, lower_witness=result.lower_witness,
                     upper_witness=result.upper_witness, flag=result.flag.value)


def write_scalar_csv(path: PathLike, values: Dict[str, Any], run: RunConfig, **header: Any) -> Path:
    """Single-row CSV of named scalars, e.g. a certificate"""
    return write_csv(path, list(values), [list(values.values())], run, **header)


def write_table_csv(path: PathLike, records: Sequence[Dict[str, Any]], run: RunConfig, **header: Any) -> Path:
    columns: List[str] = []
    for record in records:
        columns += [key for key in record if key not in columns]
    return write_csv(path, columns, [[record.get(c) for c in columns] for record in records], run, **header)


def sweep_rows(rows: Sequence[Any], include_timing: bool = True) -> List[List[Any]]:
    out = []
    for row in rows:
        notes = '; '.join(f"{key}={value}" for key, value in sorted(row.reasons.items()))
        out.append([row.parameter, row.param_value, row.sim_hold_limit, row.lk_hold_limit, row.lyap_bound,
                    row.ovm_margin, row.n_collided, row.runtime if include_timing else None,
                    row.lower_witness, row.upper_witness, row.sim_flag, notes])
    return out


def write_sweep_csv(path: PathLike, rows: Sequence[Any], run: RunConfig, include_timing: bool = True) -> Path:
    return write_csv(path, SWEEP_COLUMNS, sweep_rows(rows, include_timing), run)


def write_human_error_csv(path: PathLike, rows: Sequence[Any], run: RunConfig, include_timing: bool = True) -> Path:
    columns = ['kind', 'value', 'sim_value', 'theory_value', 'status', 'flag', 'delta']
    columns += [f"tail_bound_{int(round(f * 100))}" for f in TAIL_FRACTIONS] + ['runtime_s', 'notes']
    records = []
    for row in rows:
        notes = '; '.join(f"{key}={value}" for key, value in sorted(row.reasons.items()))
        records.append([row.kind, row.value, row.sim_value, row.theory_value, row.status, row.flag, row.delta,
                        *[row.tail_bounds.get(f) for f in TAIL_FRACTIONS],
                        row.runtime if include_timing else None, notes])
    return write_csv(path, columns, records, run)
