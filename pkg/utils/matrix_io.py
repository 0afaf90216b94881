"""
Coarse Guidance Toolkit - Matrix and Controller Files
Plain-text matrices with '#' metadata headers. Files written for a run open with the
run's provenance fields (tool, config_hash, rng_seed). A controller file holds one row of
2n gains; its header also carries the gain provenance, k_mult and any synthesis metadata.
"""

from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from config.loader import PROVENANCE_KEYS, provenance_fields
from schemas.params import Provenance, RunConfig
from traffic.ring_model import Controller
from utils.error_handling import ConfigurationError

PathLike = Union[str, Path]
FLOAT_FORMAT = '%.10g'


def _header(metadata: Mapping[str, Any]) -> str:
    return '\n'.join(f"{key}: {value}" for key, value in metadata.items())


def read_header(path: PathLike) -> Dict[str, str]:
    """'# key: value' lines at the top of a matrix file"""
    metadata: Dict[str, str] = {}
    with open(path) as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            key, sep, value = line[1:].partition(':')
            if sep:
                metadata[key.strip()] = value.strip()
    return metadata


def write_matrix(path: PathLike, matrix: np.ndarray, metadata: Optional[Mapping[str, Any]] = None,
                 run: Optional[RunConfig] = None) -> Path:
    """Matrix rows under a header; the run's provenance fields come first and win over metadata"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header: Dict[str, Any] = provenance_fields(run) if run is not None else {}
    for key, value in (metadata or {}).items():
        header.setdefault(key, value)
    np.savetxt(path, np.atleast_2d(matrix), fmt=FLOAT_FORMAT, header=_header(header))
    return path


def read_matrix(path: PathLike) -> Tuple[np.ndarray, Dict[str, str]]:
    return np.loadtxt(path, ndmin=2), read_header(path)


def write_controller(path: PathLike, c: Controller, extra: Optional[Mapping[str, Any]] = None,
                     run: Optional[RunConfig] = None) -> Path:
    metadata = {'provenance': c.provenance.value, 'k_mult': repr(float(c.k_mult)),
                **c.metadata, **(extra or {})}
    return write_matrix(path, c.K, metadata, run)


def read_controller(path: PathLike) -> Controller:
    """Load a controller file; the gain must be a single row"""
    K, metadata = read_matrix(path)
    if K.shape[0] != 1:
        raise ConfigurationError('matrix_io', 'read_controller',
                                 f"{path}: expected one row of gains, found {K.shape[0]}")
    try:
        provenance = Provenance(metadata.pop('provenance', Provenance.MANUAL.value))
        k_mult = float(metadata.pop('k_mult', 1.0))
    except ValueError as e:
        raise ConfigurationError('matrix_io', 'read_controller', f"{path}: {e}") from e
    for key in PROVENANCE_KEYS:
        metadata.pop(key, None)
    return Controller(K=K, k_mult=k_mult, provenance=provenance, metadata=metadata)


def write_matrices(directory: PathLike, matrices: Mapping[str, np.ndarray],
                   metadata: Optional[Mapping[str, Any]] = None, prefix: str = '',
                   run: Optional[RunConfig] = None) -> Dict[str, Path]:
    """One file per named matrix, e.g. assembled LMI blocks for external cross-checking"""
    directory = Path(directory)
    return {name: write_matrix(directory / f"{prefix}{name}.txt", matrix, {**(metadata or {}), 'name': name}, run)
            for name, matrix in matrices.items()}
