# IMPORTANT: Read instructions/architecture before making changes to this file
"""
`report`: turn metrics documents into plot-ready CSV tables.
See instructions/architecture for development guidelines.
"""

from pathlib import Path

import click

from fireguard.commands import handle_errors
from fireguard.utils.report import TABLES, load_metrics, report_tables, write_report


@click.command('report')
@click.argument('metrics_paths', nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('-o', '--out', 'out_dir', default='report', show_default=True,
              type=click.Path(file_okay=False, path_type=Path))
@handle_errors
def command(metrics_paths, out_dir):
    """Build slowdown, stall, programming-model and latency tables from METRICS_PATHS."""
    documents = load_metrics(metrics_paths)
    tables = report_tables(documents)
    write_report(documents, out_dir)
    for name, rows in tables.items():
        click.echo(f"{name}: {len(rows)} rows")
    if not tables['latency.csv']:
        click.echo("latency.csv is empty: no attacks in these runs")
    click.echo(f"tables written to {out_dir} ({', '.join(TABLES)})")
