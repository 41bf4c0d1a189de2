import csv
import json
import logging

import pytest

from fireguard.errors import ReportSchemaError
from fireguard.models.metrics import METRICS_SCHEMA, EngineStats, Metrics, StallAccounting
from fireguard.models.trace_record import AttackMode, GroundTruth
from fireguard.models.verdict import Verdict, ViolationClass
from fireguard.utils.latency import cycles_to_ns, match_truth, measure_latency, verdict_latency, verdict_log
from fireguard.utils.report import (
    ROW_FIELDS, TABLES, dumps_metrics, load_metrics, metrics_document, point_label, report_tables, write_metrics,
    write_report, write_rows,
)


@pytest.fixture
def metrics():
    return Metrics(
        stalls=StallAccounting(baseline_cycles=100),
        clock_ratio=2,
        slow_hz=1e9,
        commit_cycles={5: 10, 6: 30, 8: 32, 9: 20},
        verdicts=[
            Verdict(5, ViolationClass.RET_MISMATCH, 0x40, detect_cycle=12, kernel='shadow_stack#0'),
            Verdict(6, ViolationClass.COUNTER_BOUND, 0x44, detect_cycle=35, kernel='pmc#1'),
            Verdict(8, ViolationClass.COUNTER_BOUND, 0x48, detect_cycle=40, kernel='pmc#1'),
            Verdict(9, ViolationClass.OOB, 0x50, detect_cycle=30, kernel='asan#2'),
        ],
    )


def document(point, filter_full=10, packets=4, packet_cycles=20, kernels=('asan#0',)):
    stalls = StallAccounting(baseline_cycles=100)
    stalls.charge('filter_full', filter_full)
    engine = EngineStats(index=0, packets=packets, packet_cycles=packet_cycles, occupancy_histogram=[1, 0])
    return metrics_document(Metrics(stalls=stalls, engines=[engine], kernels=list(kernels), point=point))


def test_latency_is_measured_from_the_simulated_commit(metrics):
    assert verdict_latency(metrics.verdicts[0], metrics) == 7.0
    assert cycles_to_ns(7.0, 1e9) == pytest.approx(7.0)
    assert cycles_to_ns(1.0, 1.6e9) == pytest.approx(0.625)


def test_match_truth_takes_the_earliest_verdict_in_the_span(metrics):
    flood = GroundTruth(3, AttackMode.COUNTER_FLOOD, ViolationClass.COUNTER_BOUND, span=10)
    assert match_truth(flood, metrics.verdicts).seq == 6
    wrong_class = GroundTruth(9, AttackMode.UAF_ACCESS, ViolationClass.UAF)
    assert match_truth(wrong_class, metrics.verdicts) is None


def test_a_flood_is_matched_by_the_window_close_after_it(metrics):
    short = GroundTruth(3, AttackMode.COUNTER_FLOOD, ViolationClass.COUNTER_BOUND, span=2)
    assert match_truth(short, metrics.verdicts).seq == 6
    assert match_truth(GroundTruth(7, AttackMode.COUNTER_FLOOD, ViolationClass.COUNTER_BOUND), metrics.verdicts).seq == 8
    assert match_truth(GroundTruth(20, AttackMode.COUNTER_FLOOD, ViolationClass.COUNTER_BOUND), metrics.verdicts) is None
    # other attacks stay inside their span
    assert match_truth(GroundTruth(4, AttackMode.HIJACK_RET, ViolationClass.RET_MISMATCH), metrics.verdicts) is None


def test_measure_latency_reports_misses(metrics, caplog):
    truths = [GroundTruth(9, AttackMode.UAF_ACCESS, ViolationClass.UAF),
              GroundTruth(5, AttackMode.HIJACK_RET, ViolationClass.RET_MISMATCH),
              GroundTruth(6, AttackMode.COUNTER_FLOOD, ViolationClass.COUNTER_BOUND, span=4)]
    with caplog.at_level(logging.WARNING):
        report = measure_latency(metrics, truths)
    assert 'not detected' in caplog.text
    assert metrics.latency is report
    assert report['detected'] == 2 and report['missed'] == 1
    assert [a['status'] for a in report['attacks']] == ['DETECTED', 'DETECTED', 'MISS']
    assert report['attacks'][1]['latency_cycles'] == 20.0
    summary = report['summary']
    assert summary['min_cycles'] == 7.0 and summary['max_cycles'] == 20.0
    assert summary['median_ns'] == pytest.approx(13.5)


def test_no_attacks_no_summary(metrics):
    assert measure_latency(metrics, [])['summary'] is None


def test_verdict_log_lines(metrics):
    lines = verdict_log(metrics).splitlines()
    assert lines[0] == 'V 5 RET_MISMATCH 0x40 12 7.000'
    assert len(lines) == 4
    assert verdict_log(Metrics(stalls=StallAccounting())) == ''


def test_metrics_document_is_rounded_and_stable(metrics, tmp_path):
    metrics.stalls.charge('cdc_full', 1)
    metrics.stalls.baseline_cycles = 3
    doc = metrics_document(metrics)
    assert doc['schema'] == METRICS_SCHEMA
    assert doc['slowdown'] == 1.33333333
    assert 'commit_cycles' not in doc
    path = tmp_path / 'out' / 'metrics.json'
    write_metrics(metrics, path)
    assert path.read_text() == dumps_metrics(metrics)
    assert json.loads(path.read_text())['verdicts'][0] == {
        'seq': 5, 'class': 'RET_MISMATCH', 'pc': 0x40, 'detect_cycle': 12, 'kernel': 'shadow_stack#0',
        'engine': -1}


def test_point_label():
    assert point_label({}) == 'default'
    assert point_label({'filter_width': 2, 'engines': 4}) == 'engines=4,filter_width=2'


def test_load_metrics_checks_the_schema(tmp_path):
    good = tmp_path / 'good.json'
    good.write_text(json.dumps(document({})))
    assert load_metrics([good])[0]['schema'] == METRICS_SCHEMA

    foreign = tmp_path / 'foreign.json'
    foreign.write_text('{"schema": "other/2"}')
    broken = tmp_path / 'broken.json'
    broken.write_text('{"schema": ')
    for path in (foreign, broken):
        with pytest.raises(ReportSchemaError):
            load_metrics([good, path])


def test_report_tables():
    documents = [document({'engines': 4, 'kernels.0.pm': 'DUFF'}, filter_full=5),
                 document({'engines': 1, 'kernels.0.pm': 'HYBRID'}, packet_cycles=12)]
    tables = report_tables(documents)
    assert [r['engines'] for r in tables['slowdown.csv']] == [1, 4]
    assert tables['slowdown.csv'][1] == {'engines': 4, 'kernel': 'asan#0', 'slowdown': 1.05}
    assert len(tables['stalls.csv']) == 8
    assert {'filter_width': '', 'cause': 'filter_full', 'stall_fraction': 0.1} in tables['stalls.csv']
    assert tables['programming_model.csv'] == [
        {'pm': 'DUFF', 'kernel': 'asan#0', 'cycles_per_packet': 5.0},
        {'pm': 'HYBRID', 'kernel': 'asan#0', 'cycles_per_packet': 3.0},
    ]
    assert tables['latency.csv'] == []


def test_write_report_and_rows(tmp_path, metrics):
    measure_latency(metrics, [GroundTruth(5, AttackMode.HIJACK_RET, ViolationClass.RET_MISMATCH)])
    metrics.point = {'engines': 2}
    documents = [metrics_document(metrics), document({'engines': 8})]
    written = write_report(documents, tmp_path / 'report')
    assert sorted(written) == sorted(TABLES)
    with open(written['latency.csv'], newline='') as f:
        rows = list(csv.DictReader(f))
    assert [r['percentile'] for r in rows] == ['min', 'median', 'max']
    assert rows[0]['latency_ns'] == '7.0'
    assert written['slowdown.csv'].read_text().splitlines()[0] == 'engines,kernel,slowdown'

    write_rows(tmp_path / 'sweep.csv', documents)
    with open(tmp_path / 'sweep.csv', newline='') as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    assert reader.fieldnames == ROW_FIELDS
    assert rows[0]['point'] == 'engines=2' and rows[0]['latency_min_ns'] == '7.0'
    assert rows[1]['missed'] == ''
