# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Configuration management for simulation runs.
See instructions/architecture for development guidelines.
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from fireguard.errors import ConfigError
from fireguard.models.kernel import (
    ALLOWED_POLICIES, DEFAULT_POLICY, KIND_GID, IsaxMode, KernelKind, Policy, ProgrammingModel,
    GID_CALL, GID_HEAP, GID_LOAD, GID_RET, GID_STORE,
)
from fireguard.models.trace_record import Kind

logger = logging.getLogger(__name__)

# Defaults mirror the evaluated hardware setup
DEFAULT_CONFIG: Dict[str, Any] = {
    'commit_width': 4,
    'filter_width': 4,
    'fifo_depth': 16,
    'engines': 4,
    'mq_capacity': 32,
    'clock': {
        'fast_hz': 3.2e9,
        'slow_hz': 1.6e9,
        'cdc_depth': 8,
    },
    'mesh': None,
    'router_depth': 4,
    'max_gids': 256,
    'skip_cost_cycles': 0,
    'prf_conflict_p': 0.0,
    'multicast_width': 2,
    'block_full_threshold': None,     # null: the input-queue capacity
    'drain_limit': 200000,
    'seed': 0,
    'kernels': [],
    # Filter-table image to program instead of the kernels' default encodings
    'filter_table': None,
    # Workload: a trace file, or a generator profile when 'trace' is null
    'trace': None,
    'truth': None,
    'workload': {
        'profile': 'baseline',
        'length': 10000,
    },
}

KERNEL_DEFAULTS: Dict[str, Any] = {
    'engines': 'all',
    'policy': None,
    'fixed_target': None,
    'pm': 'HYBRID',
    'unroll': 4,
    'work': 4,
    'loop': 2,
    'hazard': 4,
    'message_work': 2,
    'isax': 'MA_STAGE',
    'accelerator': False,
    'params': {},
}

KERNEL_PARAM_DEFAULTS: Dict[KernelKind, Dict[str, Any]] = {
    KernelKind.PMC: {'events': ['LOAD'], 'window': 1000, 'bounds': {}},
    KernelKind.SHADOW_STACK: {'spill_threshold': 64},
    KernelKind.ASAN: {'strict': False, 'redzone': 16, 'hash_shift': 6},
    KernelKind.UAF: {'quarantine_budget': 1 << 20, 'hash_shift': 6},
}

MAX_HAZARD = 10


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Return `base` with `override` merged in; nested dicts merge, everything else replaces."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: Optional[Path] = None) -> Dict[str, Any]:
    """
    Load a run configuration with defaults.

    Args:
        path: JSON file to merge over DEFAULT_CONFIG; None returns the defaults

    Returns:
        Dictionary containing configuration values

    Raises:
        ConfigError: the file is not valid JSON or not a JSON object
    """
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path, 'r', encoding='utf-8') as f:
        try:
            user_config = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(user_config, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return deep_merge(DEFAULT_CONFIG, user_config)


def save_config(config: Dict[str, Any], path: Path) -> bool:
    """
    Save a configuration as JSON.

    Args:
        config: Dictionary containing configuration values
        path: Destination file

    Returns:
        True if successful, False otherwise
    """
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(config, f, indent=2, sort_keys=True)
        return True
    except IOError as e:
        logger.error("Error saving %s: %s", path, e)
        return False


def get_config_value(config: Dict[str, Any], key: str, default: Any = None) -> Any:
    """
    Get a configuration value by dotted key, e.g. 'clock.fast_hz'.

    Args:
        config: Loaded configuration
        key: Dotted path
        default: Value returned when any path component is missing

    Returns:
        Configuration value or default
    """
    node: Any = config
    for part in key.split('.'):
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            return default
    return node


def set_config_value(config: Dict[str, Any], key: str, value: Any) -> Dict[str, Any]:
    """Return a copy of `config` with the dotted key set; list elements are addressed by index."""
    updated = copy.deepcopy(config)
    parts = key.split('.')
    node: Any = updated
    for part in parts[:-1]:
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError(f"no list element {part!r} in {key!r}")
            node = node[int(part)]
        else:
            if not isinstance(node.get(part), (dict, list)):
                node[part] = {}
            node = node[part]
    last = parts[-1]
    if isinstance(node, list):
        if not last.isdigit() or int(last) >= len(node):
            raise ConfigError(f"no list element {last!r} in {key!r}")
        node[int(last)] = value
    else:
        node[last] = value
    return updated


def parse_value(text: str) -> Any:
    """Interpret a command-line value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_jobs() -> int:
    """Default sweep parallelism from FG_JOBS."""
    value = os.environ.get('FG_JOBS', '')
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("Ignoring FG_JOBS=%r, not an integer", value)
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class ClockConfig:
    fast_hz: float = 3.2e9
    slow_hz: float = 1.6e9
    cdc_depth: int = 8

    @property
    def ratio(self) -> int:
        return int(round(self.fast_hz / self.slow_hz))


@dataclass(frozen=True)
class KernelConfig:
    """One guardian kernel deployment and its scheduling engine settings."""
    index: int
    kind: KernelKind
    engines: Tuple[int, ...]
    policy: Policy
    fixed_target: Optional[int] = None
    pm: ProgrammingModel = ProgrammingModel.HYBRID
    unroll: int = 4
    work: int = 4
    loop: int = 2
    hazard: int = 4
    message_work: int = 2
    isax: IsaxMode = IsaxMode.MA_STAGE
    accelerator: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.kind.value}#{self.index}"

    @property
    def gids(self) -> Tuple[int, ...]:
        if self.kind is KernelKind.PMC:
            return tuple(sorted({KIND_GID[Kind[e]] for e in self.params['events']}))
        if self.kind is KernelKind.SHADOW_STACK:
            return (GID_CALL, GID_RET)
        return (GID_LOAD, GID_STORE, GID_HEAP)

    @property
    def ae_mask(self) -> int:
        mask = 0
        for e in self.engines:
            mask |= 1 << e
        return mask


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; `raw` keeps the merged dictionary it came from."""
    commit_width: int
    filter_width: int
    fifo_depth: int
    engines: int
    mq_capacity: int
    clock: ClockConfig
    mesh: Tuple[int, int]
    router_depth: int
    max_gids: int
    skip_cost_cycles: int
    prf_conflict_p: float
    multicast_width: int
    block_full_threshold: int
    drain_limit: int
    seed: int
    kernels: Tuple[KernelConfig, ...]
    filter_table: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)


def mesh_dims(engines: int) -> Tuple[int, int]:
    """Near-square mesh with at least `engines` nodes."""
    width = max(1, math.ceil(math.sqrt(engines)))
    height = max(1, math.ceil(engines / width))
    return width, height


def _positive_int(config: Dict[str, Any], key: str, minimum: int = 1) -> int:
    value = config.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}")
    return value


def _enum(enum_cls, value: Any, what: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ', '.join(m.value for m in enum_cls)
        raise ConfigError(f"unknown {what} {value!r} (choose from {choices})") from None


def _build_kernel(index: int, entry: Dict[str, Any], engines: int, mq_capacity: int) -> KernelConfig:
    if not isinstance(entry, dict) or 'kind' not in entry:
        raise ConfigError(f"kernels[{index}] must be an object with a 'kind'")
    kind = _enum(KernelKind, entry['kind'], 'kernel kind')
    merged = deep_merge(KERNEL_DEFAULTS, entry)
    merged['params'] = deep_merge(KERNEL_PARAM_DEFAULTS[kind], merged.get('params') or {})

    if merged['engines'] == 'all':
        members = tuple(range(engines))
    else:
        try:
            members = tuple(sorted({int(e) for e in merged['engines']}))
        except (TypeError, ValueError):
            raise ConfigError(f"kernels[{index}].engines must be 'all' or a list of indices") from None
    if not members:
        raise ConfigError(f"kernels[{index}] has no engines")
    if any(e < 0 or e >= engines for e in members):
        raise ConfigError(f"kernels[{index}] engine index out of range 0..{engines - 1}")

    policy = DEFAULT_POLICY[kind] if merged['policy'] is None else _enum(Policy, merged['policy'], 'policy')
    if policy not in ALLOWED_POLICIES[kind]:
        raise ConfigError(f"policy {policy.value} is not supported for {kind.value}")
    fixed_target = merged['fixed_target']
    if policy is Policy.FIXED:
        if fixed_target is None:
            fixed_target = members[0]
        if fixed_target not in members:
            raise ConfigError(f"kernels[{index}] fixed target {fixed_target} is not in its engine set")

    pm = _enum(ProgrammingModel, merged['pm'], 'programming model')
    isax = _enum(IsaxMode, merged['isax'], 'isax mode')
    for key in ('work', 'loop', 'hazard', 'message_work'):
        if not isinstance(merged[key], int) or merged[key] < 0:
            raise ConfigError(f"kernels[{index}].{key} must be a non-negative integer")
    unroll = merged['unroll']
    if not isinstance(unroll, int) or not 2 <= unroll <= mq_capacity:
        raise ConfigError(f"kernels[{index}].unroll must be in 2..{mq_capacity}")
    if merged['hazard'] > MAX_HAZARD:
        logger.warning("kernels[%d].hazard %d clamped to %d", index, merged['hazard'], MAX_HAZARD)

    params = merged['params']
    if kind is KernelKind.PMC:
        events = params['events']
        for name in list(events) + list(params['bounds']):
            if name not in Kind.__members__ or Kind[name] not in KIND_GID:
                raise ConfigError(f"kernels[{index}]: {name!r} is not a countable event")
        if not isinstance(params['window'], int) or params['window'] < 1:
            raise ConfigError(f"kernels[{index}].params.window must be a positive integer")
        for name, bound in params['bounds'].items():
            if len(bound) != 2 or bound[0] > bound[1]:
                raise ConfigError(f"kernels[{index}] bounds for {name} must be [lo, hi] with lo <= hi")
    if kind is KernelKind.SHADOW_STACK and params['spill_threshold'] < 1:
        raise ConfigError(f"kernels[{index}].params.spill_threshold must be >= 1")

    return KernelConfig(
        index=index, kind=kind, engines=members, policy=policy, fixed_target=fixed_target,
        pm=pm, unroll=unroll, work=merged['work'], loop=merged['loop'],
        hazard=min(merged['hazard'], MAX_HAZARD), message_work=merged['message_work'],
        isax=isax, accelerator=bool(merged['accelerator']), params=params,
    )


def build_run_config(config: Dict[str, Any]) -> RunConfig:
    """
    Validate every cross-field constraint up front and build a RunConfig.

    Args:
        config: Merged configuration dictionary (see load_config)

    Returns:
        RunConfig ready for create_simulator

    Raises:
        ConfigError: any inconsistency, reported before a simulation starts
    """
    config = deep_merge(DEFAULT_CONFIG, config)
    commit_width = _positive_int(config, 'commit_width')
    filter_width = _positive_int(config, 'filter_width')
    if filter_width > commit_width:
        raise ConfigError(f"filter_width {filter_width} exceeds commit_width {commit_width}")
    engines = _positive_int(config, 'engines')
    mq_capacity = _positive_int(config, 'mq_capacity')

    clock_raw = config['clock']
    try:
        clock = ClockConfig(float(clock_raw['fast_hz']), float(clock_raw['slow_hz']), int(clock_raw['cdc_depth']))
    except (KeyError, TypeError, ValueError):
        raise ConfigError("clock needs numeric fast_hz, slow_hz and cdc_depth") from None
    if clock.slow_hz <= 0 or clock.fast_hz < clock.slow_hz:
        raise ConfigError("clock.fast_hz must be >= clock.slow_hz > 0")
    if not math.isclose(clock.fast_hz / clock.slow_hz, clock.ratio, rel_tol=1e-9):
        raise ConfigError(f"clock ratio {clock.fast_hz / clock.slow_hz:g} is not an integer")
    if clock.cdc_depth < 1:
        raise ConfigError("clock.cdc_depth must be >= 1")

    if config['mesh'] is None:
        mesh = mesh_dims(engines)
    else:
        try:
            mesh = (int(config['mesh'][0]), int(config['mesh'][1]))
        except (TypeError, ValueError, IndexError):
            raise ConfigError("mesh must be [width, height]") from None
        if mesh[0] < 1 or mesh[1] < 1 or mesh[0] * mesh[1] < engines:
            raise ConfigError(f"mesh {mesh[0]}x{mesh[1]} cannot hold {engines} engines")

    if config['block_full_threshold'] is None:
        block_full_threshold = mq_capacity
    else:
        block_full_threshold = _positive_int(config, 'block_full_threshold')
    if block_full_threshold > mq_capacity:
        raise ConfigError(f"block_full_threshold {block_full_threshold} exceeds mq_capacity {mq_capacity}")

    max_gids = _positive_int(config, 'max_gids', minimum=2)
    prf_conflict_p = config['prf_conflict_p']
    if not isinstance(prf_conflict_p, (int, float)) or not 0.0 <= prf_conflict_p <= 1.0:
        raise ConfigError("prf_conflict_p must be a probability")

    filter_table = config['filter_table']
    if filter_table is not None and not isinstance(filter_table, str):
        raise ConfigError("filter_table must be a file path or null")

    kernels_raw: List[Dict[str, Any]] = config['kernels'] or []
    kernels = tuple(_build_kernel(i, entry, engines, mq_capacity) for i, entry in enumerate(kernels_raw))
    for kernel in kernels:
        if any(gid >= max_gids for gid in kernel.gids):
            raise ConfigError(f"{kernel.name} subscribes to a GID >= max_gids {max_gids}")

    return RunConfig(
        commit_width=commit_width,
        filter_width=filter_width,
        fifo_depth=_positive_int(config, 'fifo_depth'),
        engines=engines,
        mq_capacity=mq_capacity,
        clock=clock,
        mesh=mesh,
        router_depth=_positive_int(config, 'router_depth'),
        max_gids=max_gids,
        skip_cost_cycles=_positive_int(config, 'skip_cost_cycles', minimum=0),
        prf_conflict_p=float(prf_conflict_p),
        multicast_width=_positive_int(config, 'multicast_width'),
        block_full_threshold=block_full_threshold,
        drain_limit=_positive_int(config, 'drain_limit'),
        seed=_positive_int(config, 'seed', minimum=0),
        kernels=kernels,
        filter_table=filter_table,
        raw=config,
    )
