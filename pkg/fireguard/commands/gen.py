# IMPORTANT: Read instructions/architecture before making changes to this file
"""
`gen`: write a synthetic trace.
See instructions/architecture for development guidelines.
"""

from pathlib import Path

import click

from fireguard.commands import handle_errors
from fireguard.config import parse_value
from fireguard.errors import ConfigError
from fireguard.utils.trace_gen import PROFILES, generate_synthetic, get_profile
from fireguard.utils.trace_io import write_trace


def parse_overrides(pairs):
    """`key=value` pairs to a dict, values read as JSON where possible."""
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition('=')
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {pair!r}")
        overrides[key] = parse_value(value)
    return overrides


@click.command('gen')
@click.option('--profile', 'profile_name', default='baseline', show_default=True,
              help=f"One of: {', '.join(sorted(PROFILES))}.")
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--len', 'length', default=10000, show_default=True, type=click.IntRange(min=0))
@click.option('--set', 'overrides', multiple=True, metavar='FIELD=VALUE', help='Override a profile field.')
@click.option('-o', '--out', required=True, type=click.Path(dir_okay=False, path_type=Path))
@handle_errors
def command(profile_name, seed, length, overrides, out):
    """Generate a synthetic trace in FGTRACE format."""
    profile = get_profile(profile_name, **parse_overrides(overrides))
    trace = generate_synthetic(profile, seed, length)
    write_trace(trace, out)
    click.echo(f"wrote {len(trace)} records to {out}")
