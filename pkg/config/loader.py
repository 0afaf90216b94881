"""
Coarse Guidance Toolkit - Experiment Configuration Files
INI files with [system], [control], [simulation] and [analysis] sections resolved into
a validated RunConfig.
"""

import configparser
import hashlib
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from pydantic import ValidationError

from schemas.params import RunConfig
from utils.error_handling import ConfigurationError

DEFAULT_CONFIG_PATH = Path(__file__).with_name('defaults.ini')

TOOL_NAME = "coarse-guidance"
TOOL_VERSION = "1.0.0"
PROVENANCE_KEYS = ('tool', 'config_hash', 'rng_seed')

# key -> (section, path inside RunConfig)
KEYS: Dict[str, Tuple[str, Tuple[Any, ...]]] = {
    'L': ('system', ('ovm', 'L')),
    'n': ('system', ('ovm', 'n')),
    's_st': ('system', ('ovm', 's_st')),
    's_go': ('system', ('ovm', 's_go')),
    'v_max': ('system', ('ovm', 'v_max')),
    'alpha': ('system', ('ovm', 'alpha')),
    'beta': ('system', ('ovm', 'beta')),
    'guidance': ('system', ('guidance',)),
    'k_mult': ('control', ('k_mult',)),
    'gamma_s': ('control', ('weights', 'gamma_s')),
    'gamma_v': ('control', ('weights', 'gamma_v')),
    'gamma_u': ('control', ('weights', 'gamma_u')),
    't_step': ('simulation', ('sim', 't_step')),
    'total_time': ('simulation', ('sim', 'total_time')),
    'n_seeds': ('simulation', ('sim', 'n_seeds')),
    'perturb_s': ('simulation', ('sim', 'perturb_s')),
    'perturb_v': ('simulation', ('sim', 'perturb_v')),
    'a_min': ('simulation', ('sim', 'a_min')),
    'a_max': ('simulation', ('sim', 'a_max')),
    's_d': ('simulation', ('sim', 's_d')),
    'aeb_enabled': ('simulation', ('sim', 'aeb_enabled')),
    'convergence_eps': ('simulation', ('sim', 'convergence_eps')),
    'rng_seed': ('simulation', ('sim', 'rng_seed')),
    'record_stride': ('simulation', ('sim', 'record_stride')),
    'redraw_bernoulli': ('simulation', ('sim', 'redraw_bernoulli')),
    'divergence_norm': ('simulation', ('sim', 'divergence_norm')),
    'plant': ('simulation', ('plant',)),
    'disturbance': ('simulation', ('disturbance', 'kind')),
    'd_nv': ('simulation', ('disturbance', 'd_nv')),
    'd_v': ('simulation', ('disturbance', 'd_v')),
    'Sigma': ('simulation', ('disturbance', 'Sigma')),
    'bernoulli_p': ('simulation', ('disturbance', 'bernoulli_p')),
    'delay_realization': ('simulation', ('disturbance', 'delay_realization')),
    'c_prime': ('analysis', ('analysis', 'c_prime')),
    'q_scale': ('analysis', ('analysis', 'q_scale')),
    'd_margin': ('analysis', ('analysis', 'd_margin')),
    'c_dprime': ('analysis', ('analysis', 'c_dprime')),
    'D_v_bar': ('analysis', ('analysis', 'D_v_bar')),
    'lk_range_low': ('analysis', ('analysis', 'lk_range', 0)),
    'lk_range_high': ('analysis', ('analysis', 'lk_range', 1)),
    'lk_granularity': ('analysis', ('analysis', 'lk_granularity')),
    'sim_range_low': ('analysis', ('analysis', 'sim_range', 0)),
    'sim_range_high': ('analysis', ('analysis', 'sim_range', 1)),
    'sim_granularity': ('analysis', ('analysis', 'sim_granularity')),
    'epsilon': ('analysis', ('analysis', 'epsilon')),
    'strictness_margin': ('analysis', ('analysis', 'strictness_margin')),
}
SECTIONS = ('system', 'control', 'simulation', 'analysis')
NONE_VALUES = {'none', 'null', ''}
NULLABLE_KEYS = {'a_max', 'D_v_bar'}


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    return parser


def _resolve_key(key: str) -> str:
    """Accept 'key' or 'section.key'"""
    section, sep, bare = key.partition('.')
    if not sep:
        bare, section = key, None
    if bare not in KEYS or (section is not None and KEYS[bare][0] != section):
        raise ConfigurationError('cli_report', 'load_config', f"unknown configuration key: {key}")
    return bare


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """'key=value' strings from --set"""
    overrides: Dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition('=')
        if not sep:
            raise ConfigurationError('cli_report', 'parse_overrides', f"expected key=value, got {pair!r}")
        overrides[_resolve_key(key.strip())] = value.strip()
    return overrides


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError('cli_report', 'load_config', f"config file not found: {path}")
    parser = _parser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigurationError('cli_report', 'load_config', f"{path}: {e}") from e

    errors = []
    values: Dict[str, str] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            errors.append(f"unknown section [{section}]")
            continue
        for key, value in parser.items(section):
            if key not in KEYS or KEYS[key][0] != section:
                errors.append(f"unknown key {key!r} in [{section}]")
            else:
                values[key] = value
    if errors:
        raise ConfigurationError('cli_report', 'load_config', f"{path}: " + '; '.join(errors))
    return values


def _nest(values: Dict[str, str]) -> Dict[str, Any]:
    base = RunConfig().model_dump(mode='json')
    for key, raw in values.items():
        value = raw.strip()
        if key in NULLABLE_KEYS and value.lower() in NONE_VALUES:
            value = None
        path = KEYS[key][1]
        target = base
        for part in path[:-1]:
            target = target[part]
        target[path[-1]] = value
    return base


def build_run_config(values: Dict[str, str], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    merged = {**values, **(overrides or {})}
    data = _nest(merged)
    data['overrides'] = dict(overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError('cli_report', 'load_config', f"invalid configuration: {e}") from e


def load_run_config(source: Optional[str] = 'default', overrides: Iterable[str] = ()) -> RunConfig:
    """
    Resolve a run configuration

    Args:
        source: 'default' for the shipped defaults, or a path to an INI file layered on them
        overrides: 'key=value' strings applied last
    """
    values = read_config_file(DEFAULT_CONFIG_PATH)
    if source and source != 'default':
        values.update(read_config_file(source))
    return build_run_config(values, parse_overrides(overrides))


def resolved_values(run: RunConfig) -> Dict[str, Dict[str, str]]:
    """Every key's resolved value, grouped by section"""
    data = run.model_dump(mode='json')
    sections: Dict[str, Dict[str, str]] = {section: {} for section in SECTIONS}
    for key, (section, path) in KEYS.items():
        value = data
        for part in path:
            value = value[part]
        sections[section][key] = 'none' if value is None else str(value)
    return sections


def write_resolved_config(run: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parser = _parser()
    for section, items in resolved_values(run).items():
        parser[section] = items
    with open(path, 'w') as handle:
        for key, value in provenance_fields(run).items():
            handle.write(f"# {key}: {value}\n")
        parser.write(handle)
    return path


def config_hash(run: RunConfig) -> str:
    """Short digest of the resolved configuration, overrides excluded"""
    payload = run.model_dump_json(exclude={'overrides'})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def provenance_fields(run: RunConfig) -> Dict[str, str]:
    """Header fields every result file starts with"""
    return {
        'tool': f"{TOOL_NAME} {TOOL_VERSION}",
        'config_hash': config_hash(run),
        'rng_seed': str(run.sim.rng_seed),
    }
