# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Parameter sweeps: one independent simulator per configuration point, fanned out
over worker processes.
See instructions/architecture for development guidelines.
"""

import itertools
import logging
import re
from concurrent import futures
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from fireguard.config import build_run_config, parse_value, set_config_value
from fireguard.errors import ConfigError
from fireguard.models.trace_record import GroundTruth, Trace
from fireguard.utils.filter import configured_table
from fireguard.utils.latency import measure_latency
from fireguard.utils.report import metrics_document, point_label
from fireguard.utils.simcore import run

logger = logging.getLogger(__name__)

AXIS_PATTERN = re.compile(r'^([A-Za-z_][\w.]*)=(.+)$')


def parse_axis(text: str) -> Tuple[str, List[Any]]:
    """
    Parse `key=v1,v2,...`; values are read as JSON where possible.

    Raises:
        ConfigError: not of the form key=values
    """
    match = AXIS_PATTERN.match(text.strip())
    if not match:
        raise ConfigError(f"sweep axis {text!r} must look like key=v1,v2,...")
    key, values = match.groups()
    return key, [parse_value(v.strip()) for v in values.split(',') if v.strip()]


def sweep_points(axes: Sequence[str]) -> List[Dict[str, Any]]:
    """Cartesian product of the axes, in the order given."""
    parsed = [parse_axis(a) for a in axes]
    keys = [k for k, _ in parsed]
    if len(set(keys)) != len(keys):
        raise ConfigError("a sweep axis is given twice")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(values for _, values in parsed))]


def point_config(raw: Dict[str, Any], point: Dict[str, Any]) -> Dict[str, Any]:
    config = raw
    for key, value in point.items():
        config = set_config_value(config, key, value)
    return config


def run_point(raw: Dict[str, Any], point: Dict[str, Any], trace: Trace,
              truths: Optional[Sequence[GroundTruth]] = None) -> Dict[str, Any]:
    """Simulate one point and return its metrics document."""
    config = build_run_config(point_config(raw, point))
    metrics = run(trace, config)
    metrics.point = dict(point)
    if truths:
        measure_latency(metrics, truths)
    return metrics_document(metrics)


def run_sweep(raw: Dict[str, Any], axes: Sequence[str], trace: Trace,
              truths: Optional[Sequence[GroundTruth]] = None, jobs: int = 1) -> List[Dict[str, Any]]:
    """
    Run every point of a sweep.

    All points are validated before any simulation starts. Documents come back in
    point order whatever the completion order.

    Raises:
        ConfigError: bad axis or a point that does not validate
    """
    points = sweep_points(axes)
    for point in points:
        configured_table(build_run_config(point_config(raw, point)))
    logger.info("Sweeping %d points with %d jobs", len(points), jobs)
    if jobs <= 1 or len(points) <= 1:
        return [run_point(raw, p, trace, truths) for p in points]
    with futures.ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(run_point, itertools.repeat(raw), points,
                                 itertools.repeat(trace), itertools.repeat(truths)))


def point_path(out_dir: Path, point: Dict[str, Any]) -> Path:
    """metrics file for a point; names are point-keyed so parallel writers never collide."""
    label = re.sub(r'[^\w.=,-]+', '_', point_label(point))
    return Path(out_dir) / f"metrics-{label}.json"
