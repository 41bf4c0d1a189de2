# IMPORTANT: Read instructions/architecture before making changes to this file
"""
FireGuard fabric simulator initialization.
See instructions/architecture for development guidelines.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

from fireguard.config import RunConfig, build_run_config, load_config

__version__ = '1.0.0'

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once from FG_LOG (or an explicit level).

    A `.env` file in the working directory is read first, so FG_LOG and FG_JOBS
    can live there.
    """
    load_dotenv()
    name = (level or os.environ.get('FG_LOG') or 'WARNING').upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
        logging.getLogger(__name__).warning("Unknown FG_LOG level %r, using WARNING", name)
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)


def create_simulator(config: Union[None, str, Path, Dict[str, Any], RunConfig] = None, check: bool = False,
                     table=None):
    """
    Simulator factory.

    Args:
        config: RunConfig, a configuration dictionary, a JSON file path, or None for defaults
        check: Verify packet conservation after every fast cycle
        table: Programmed FilterTable; None loads `filter_table` or programs the kernels' defaults

    Returns:
        Simulator instance ready for `run(trace)`

    Raises:
        ConfigError: invalid configuration or filter-table image, reported before anything is simulated
        OSError: the filter-table image cannot be read
    """
    from fireguard.utils.simcore import Simulator

    if isinstance(config, RunConfig):
        run_config = config
    elif isinstance(config, dict):
        run_config = build_run_config(config)
    else:
        run_config = build_run_config(load_config(Path(config) if config is not None else None))
    return Simulator(run_config, table=table, check=check)
