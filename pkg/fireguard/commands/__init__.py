# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Command-line interface: one click group with the gen, inject, run and report commands.
See instructions/architecture for development guidelines.
"""

import functools
import logging

import click

from fireguard import __version__, configure_logging
from fireguard.errors import ConfigError, FireGuardError, InjectionError, ReportSchemaError, TraceError

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_IO = 3


def handle_errors(func):
    """Map failures to exit codes: 2 usage/config, 3 I/O and unreadable input, 1 anything else."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigError, InjectionError, ReportSchemaError) as e:
            click.echo(f"error: {e}", err=True)
            raise SystemExit(EXIT_USAGE)
        except (OSError, TraceError) as e:
            click.echo(f"error: {e}", err=True)
            raise SystemExit(EXIT_IO)
        except FireGuardError as e:
            click.echo(f"error: {e}", err=True)
            raise SystemExit(1)
    return wrapper


@click.group()
@click.version_option(__version__, prog_name='fireguard')
@click.option('--log-level', default=None, help='Overrides FG_LOG (DEBUG, INFO, WARNING, ERROR).')
def cli(log_level):
    """Trace-driven simulator of a programmable security-monitoring fabric."""
    configure_logging(log_level)


def create_cli() -> click.Group:
    """Register every command on the group and return it."""
    from fireguard.commands import gen, inject, report, run

    for module in (gen, inject, run, report):
        if module.command.name not in cli.commands:
            cli.add_command(module.command)
    return cli
