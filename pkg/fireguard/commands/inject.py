# IMPORTANT: Read instructions/architecture before making changes to this file
"""
`inject`: add attacks to a trace and write the ground truth next to it.
See instructions/architecture for development guidelines.
"""

from pathlib import Path

import click

from fireguard.commands import handle_errors
from fireguard.errors import ConfigError
from fireguard.models.trace_record import AttackMode, AttackSpec
from fireguard.utils.attacks import DEFAULT_FLOOD, inject_attacks, plan_attacks
from fireguard.utils.trace_io import read_trace, write_trace, write_truth

MODE_NAMES = [m.value for m in AttackMode]


def parse_attack(text: str) -> AttackSpec:
    """MODE:SEQ:PAYLOAD, numbers decimal or 0x-prefixed hex."""
    parts = text.split(':')
    if len(parts) != 3:
        raise ConfigError(f"attack {text!r} must be MODE:SEQ:PAYLOAD")
    try:
        mode = AttackMode(parts[0].upper())
        return AttackSpec(int(parts[1], 0), mode, int(parts[2], 0))
    except ValueError:
        raise ConfigError(f"attack {text!r}: mode must be one of {', '.join(MODE_NAMES)} "
                          f"and SEQ/PAYLOAD integers") from None


@click.command('inject')
@click.argument('trace_path', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--attack', 'attacks', multiple=True, metavar='MODE:SEQ:PAYLOAD', help='An explicit attack.')
@click.option('--random', 'count', default=0, type=click.IntRange(min=0), help='Plan this many random attacks.')
@click.option('--mode', 'modes', multiple=True, type=click.Choice(MODE_NAMES, case_sensitive=False),
              help='Restrict random attacks to these modes.')
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--flood', default=DEFAULT_FLOOD, show_default=True, type=click.IntRange(min=1),
              help='Records inserted by a random COUNTER_FLOOD.')
@click.option('-o', '--out', required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option('--truth', 'truth_path', type=click.Path(dir_okay=False, path_type=Path),
              help='Ground-truth file (default: <out>.truth.json).')
@handle_errors
def command(trace_path, attacks, count, modes, seed, flood, out, truth_path):
    """Inject attacks into TRACE_PATH."""
    trace = read_trace(trace_path)
    specs = [parse_attack(a) for a in attacks]
    if count:
        planned = plan_attacks(trace, count, seed, [AttackMode(m.upper()) for m in modes] or None, flood)
        taken = {s.seq for s in specs}
        specs.extend(s for s in planned if s.seq not in taken)
    if not specs:
        raise ConfigError("nothing to inject: give --attack or --random")
    attacked, truths = inject_attacks(trace, specs)
    write_trace(attacked, out)
    truth_path = truth_path or out.with_name(out.name + '.truth.json')
    write_truth(truths, truth_path)
    click.echo(f"injected {len(truths)} attacks into {out}; ground truth in {truth_path}")
