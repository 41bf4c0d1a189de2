# IMPORTANT: Read instructions/architecture before making changes to this file
"""
`run`: simulate one configuration or a sweep and write metrics, CSV rows and the verdict log.
See instructions/architecture for development guidelines.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from fireguard import create_simulator
from fireguard.commands import handle_errors
from fireguard.commands.gen import parse_overrides
from fireguard.config import build_run_config, env_jobs, load_config, save_config, set_config_value
from fireguard.models.trace_record import GroundTruth, Trace
from fireguard.utils.latency import measure_latency, verdict_log
from fireguard.utils.report import dumps_document, metrics_document, write_metrics, write_rows
from fireguard.utils.sweep import point_path, run_sweep
from fireguard.utils.trace_gen import generate_synthetic, get_profile
from fireguard.utils.trace_io import read_trace, read_truth

logger = logging.getLogger(__name__)


def _relative(base: Optional[Path], value: str) -> Path:
    path = Path(value)
    if base is not None and not path.is_absolute():
        path = base / path
    return path


def resolve_workload(raw: Dict[str, Any], config_dir: Optional[Path]) -> Trace:
    """The configured trace file, or a trace generated from the workload profile and run seed."""
    if raw.get('trace'):
        return read_trace(_relative(config_dir, raw['trace']))
    workload = dict(raw.get('workload') or {})
    name = workload.pop('profile', 'baseline')
    length = int(workload.pop('length', 10000))
    profile = get_profile(name, **workload)
    logger.info("No trace configured; generating %d records of profile %s", length, name)
    return generate_synthetic(profile, raw['seed'], length)


def resolve_truth(raw: Dict[str, Any], config_dir: Optional[Path]) -> List[GroundTruth]:
    """Ground truth from the config, else from `<trace>.truth.json` when it exists."""
    if raw.get('truth'):
        return read_truth(_relative(config_dir, raw['truth']))
    if raw.get('trace'):
        sidecar = _relative(config_dir, raw['trace'] + '.truth.json')
        if sidecar.exists():
            return read_truth(sidecar)
    return []


@click.command('run')
@click.argument('config_path', required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--trace', 'trace_path', type=click.Path(exists=True, dir_okay=False), help='Overrides the config trace.')
@click.option('--truth', 'truth_path', type=click.Path(exists=True, dir_okay=False), help='Ground-truth file.')
@click.option('--filter-table', 'table_path', type=click.Path(exists=True, dir_okay=False),
              help='Filter-table image to program instead of the default encodings.')
@click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE', help='Override a config value (dotted key).')
@click.option('--sweep', 'axes', multiple=True, metavar='KEY=V1,V2,...', help='Sweep axis; several axes form a grid.')
@click.option('--jobs', default=None, type=click.IntRange(min=1), help='Parallel sweep workers (default FG_JOBS).')
@click.option('--check', is_flag=True, help='Verify packet conservation every cycle.')
@click.option('-o', '--out', 'out_dir', default='results', show_default=True,
              type=click.Path(file_okay=False, path_type=Path))
@handle_errors
def command(config_path, trace_path, truth_path, table_path, overrides, axes, jobs, check, out_dir):
    """Simulate CONFIG_PATH (defaults when omitted)."""
    raw = load_config(config_path)
    for key, value in parse_overrides(overrides).items():
        raw = set_config_value(raw, key, value)
    config_dir = config_path.parent if config_path else None
    if trace_path:
        raw['trace'] = str(Path(trace_path).resolve())
    if truth_path:
        raw['truth'] = str(Path(truth_path).resolve())
    if table_path:
        raw['filter_table'] = str(Path(table_path).resolve())
    elif isinstance(raw.get('filter_table'), str):
        raw['filter_table'] = str(_relative(config_dir, raw['filter_table']).resolve())

    if axes:
        documents = run_sweep_command(raw, axes, config_dir, jobs or env_jobs(), out_dir)
        click.echo(f"{len(documents)} points written to {out_dir / 'sweep.csv'}")
        return

    simulator = create_simulator(build_run_config(raw), check=check)
    trace = resolve_workload(raw, config_dir)
    truths = resolve_truth(raw, config_dir)
    metrics = simulator.run(trace)
    if truths:
        measure_latency(metrics, truths)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(metrics, out_dir / 'metrics.json')
    write_rows(out_dir / 'metrics.csv', [metrics_document(metrics)])
    (out_dir / 'verdicts.log').write_text(verdict_log(metrics), encoding='utf-8')
    save_config(raw, out_dir / 'config.json')

    click.echo(f"slowdown {metrics.slowdown:.6f}  stalled {metrics.stalls.stalled_cycles} cycles  "
               f"verdicts {len(metrics.verdicts)}")
    if metrics.latency and metrics.latency['missed']:
        click.echo(f"MISS: {metrics.latency['missed']} attack(s) not detected", err=True)


def run_sweep_command(raw: Dict[str, Any], axes, config_dir: Optional[Path], jobs: int, out_dir: Path):
    trace = resolve_workload(raw, config_dir)
    truths = resolve_truth(raw, config_dir)
    documents = run_sweep(raw, axes, trace, truths, jobs)
    out_dir.mkdir(parents=True, exist_ok=True)
    for document in documents:
        path = point_path(out_dir, document['point'])
        path.write_text(dumps_document(document), encoding='utf-8')
    write_rows(out_dir / 'sweep.csv', documents)
    return documents
