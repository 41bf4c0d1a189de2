# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Metrics documents, sweep CSV rows and the plot-ready report tables.
See instructions/architecture for development guidelines.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

from fireguard.errors import ReportSchemaError
from fireguard.models.metrics import METRICS_SCHEMA, STALL_CAUSES, Metrics

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9

ROW_FIELDS = ['point', 'slowdown', 'baseline_cycles', 'stalled_cycles'] + list(STALL_CAUSES) + [
    'fast_cycles', 'slow_cycles', 'verdicts', 'latency_min_ns', 'latency_median_ns', 'latency_max_ns', 'missed',
]

TABLES = {
    'slowdown.csv': ['engines', 'kernel', 'slowdown'],
    'stalls.csv': ['filter_width', 'cause', 'stall_fraction'],
    'programming_model.csv': ['pm', 'kernel', 'cycles_per_packet'],
    'latency.csv': ['point', 'percentile', 'latency_ns'],
}


def _round(value: Any) -> Any:
    """Round floats to a fixed number of significant digits, recursively."""
    if isinstance(value, float):
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, dict):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    return value


def metrics_document(metrics: Metrics) -> Dict[str, Any]:
    return _round(metrics.to_dict())


def dumps_document(document: Dict[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + '\n'


def dumps_metrics(metrics: Metrics) -> str:
    return dumps_document(metrics_document(metrics))


def write_metrics(metrics: Metrics, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps_metrics(metrics), encoding='utf-8')


def point_label(point: Dict[str, Any]) -> str:
    """Stable text key of a sweep point, e.g. 'engines=4,filter_width=2'."""
    return ','.join(f"{k}={point[k]}" for k in sorted(point)) or 'default'


def csv_row(document: Dict[str, Any]) -> Dict[str, Any]:
    """Flatten one metrics document into a sweep row."""
    summary = (document.get('latency') or {}).get('summary') or {}
    row = {
        'point': point_label(document.get('point', {})),
        'slowdown': document['slowdown'],
        'baseline_cycles': document['baseline_cycles'],
        'stalled_cycles': document['stalled_cycles'],
        'fast_cycles': document['fast_cycles'],
        'slow_cycles': document['slow_cycles'],
        'verdicts': len(document['verdicts']),
        'latency_min_ns': summary.get('min_ns', ''),
        'latency_median_ns': summary.get('median_ns', ''),
        'latency_max_ns': summary.get('max_ns', ''),
        'missed': (document.get('latency') or {}).get('missed', ''),
    }
    for cause in STALL_CAUSES:
        row[cause] = document['stalls'][cause]
    return row


def _csv_text(fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), extrasaction='ignore', lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(_csv_text(fieldnames, rows), encoding='utf-8')


def write_rows(path: Path, documents: Sequence[Dict[str, Any]]) -> None:
    write_csv(path, ROW_FIELDS, [csv_row(d) for d in documents])


def load_metrics(paths: Sequence[Path]) -> List[Dict[str, Any]]:
    """
    Read metrics documents, insisting they all carry the current schema.

    Raises:
        ReportSchemaError: unreadable JSON, missing or foreign schema
    """
    documents = []
    for path in paths:
        try:
            document = json.loads(Path(path).read_text(encoding='utf-8'))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ReportSchemaError(f"{path}: not a JSON document ({e})") from e
        schema = document.get('schema') if isinstance(document, dict) else None
        if schema != METRICS_SCHEMA:
            raise ReportSchemaError(f"{path}: schema {schema!r}, expected {METRICS_SCHEMA!r}")
        documents.append(document)
    return documents


def _kernels(document: Dict[str, Any]) -> str:
    return '+'.join(document.get('kernels') or []) or '-'


def _point_value(point: Dict[str, Any], name: str, default: Any = '') -> Any:
    """Value of a sweep axis, also when it was swept as a nested key such as kernels.0.pm."""
    for key in sorted(point):
        if key == name or key.endswith('.' + name):
            return point[key]
    return default


def _ordered(rows: List[Dict[str, Any]], key: str) -> List[Dict[str, Any]]:
    """Numbers ascending first, then everything else by its text."""
    return sorted(rows, key=lambda row: (not isinstance(row[key], (int, float)),
                                         row[key] if isinstance(row[key], (int, float)) else 0, str(row[key])))


def report_tables(documents: Sequence[Dict[str, Any]]) -> Dict[str, List[Dict[str, Any]]]:
    """
    Build the four tidy tables.

    Returns:
        Table file name -> rows. Rows of each table are sorted by their leading column.
    """
    slowdown, stalls, pm_rows, latency = [], [], [], []
    for document in documents:
        point = document.get('point', {})
        kernel = _kernels(document)
        slowdown.append({'engines': _point_value(point, 'engines', len(document['engines'])),
                         'kernel': kernel, 'slowdown': document['slowdown']})
        baseline = document['baseline_cycles'] or 1
        for cause in STALL_CAUSES:
            stalls.append({'filter_width': _point_value(point, 'filter_width'), 'cause': cause,
                           'stall_fraction': _round(document['stalls'][cause] / baseline)})
        packets = sum(e['packets'] for e in document['engines'])
        cycles = sum(e['cycles_per_packet'] * e['packets'] for e in document['engines'])
        pm_rows.append({'pm': _point_value(point, 'pm'), 'kernel': kernel,
                        'cycles_per_packet': _round(cycles / packets) if packets else 0.0})
        summary = (document.get('latency') or {}).get('summary')
        if summary:
            for name in ('min', 'median', 'max'):
                latency.append({'point': point_label(point), 'percentile': name,
                                'latency_ns': summary[f'{name}_ns']})
    if not latency:
        logger.info("No attacks in the inputs; latency table is empty")
    return {
        'slowdown.csv': _ordered(slowdown, 'engines'),
        'stalls.csv': _ordered(stalls, 'filter_width'),
        'programming_model.csv': _ordered(pm_rows, 'pm'),
        'latency.csv': _ordered(latency, 'point'),
    }


def write_report(documents: Sequence[Dict[str, Any]], out_dir: Path) -> Dict[str, Path]:
    """Write every report table as CSV under `out_dir`."""
    written = {}
    for name, rows in report_tables(documents).items():
        path = Path(out_dir) / name
        write_csv(path, TABLES[name], rows)
        written[name] = path
    return written
