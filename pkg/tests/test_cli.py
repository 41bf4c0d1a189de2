import json

import pytest
from click.testing import CliRunner

from fireguard import __version__
from fireguard.commands import create_cli
from fireguard.commands.inject import parse_attack
from fireguard.errors import ConfigError
from fireguard.models.kernel import GID_LOAD
from fireguard.models.metrics import METRICS_SCHEMA
from fireguard.models.trace_record import AttackMode, AttackSpec
from fireguard.utils.filter import default_table, format_table_image
from fireguard.utils.trace_io import write_trace


@pytest.fixture
def cli():
    return create_cli()


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def attacked(cli, runner, tmp_path):
    """A generated call-heavy trace with two injected return hijacks."""
    trace = tmp_path / 'trace.fgt'
    result = runner.invoke(cli, ['gen', '--profile', 'call-heavy', '--seed', '1', '--len', '800', '-o', str(trace)])
    assert result.exit_code == 0, result.output
    assert 'wrote' in result.output

    out = tmp_path / 'attacked.fgt'
    result = runner.invoke(cli, ['inject', str(trace), '--random', '2', '--mode', 'hijack_ret', '--seed', '1',
                                 '-o', str(out)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'attacked.fgt.truth.json').exists()
    return out


def test_version(cli, runner):
    result = runner.invoke(cli, ['--version'])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_create_cli_registers_every_command_once():
    group = create_cli()
    assert create_cli() is group
    assert sorted(group.commands) == ['gen', 'inject', 'report', 'run']


def test_parse_attack():
    assert parse_attack('hijack_ret:12:0x40') == AttackSpec(12, AttackMode.HIJACK_RET, 0x40)
    for text in ('HIJACK_RET:12', 'SMASH:1:2', 'OOB_ACCESS:x:1'):
        with pytest.raises(ConfigError):
            parse_attack(text)


def test_gen_inject_run_report(cli, runner, attacked, tmp_path):
    config = tmp_path / 'run.json'
    config.write_text(json.dumps({'trace': attacked.name, 'engines': 2, 'kernels': [{'kind': 'shadow_stack'}]}))
    out = tmp_path / 'out'
    result = runner.invoke(cli, ['run', str(config), '--check', '-o', str(out)])
    assert result.exit_code == 0, result.output
    assert result.output.startswith('slowdown ')

    metrics = json.loads((out / 'metrics.json').read_text())
    assert metrics['schema'] == METRICS_SCHEMA
    assert metrics['latency']['detected'] == 2 and metrics['latency']['missed'] == 0
    log = (out / 'verdicts.log').read_text().splitlines()
    assert len(log) == len(metrics['verdicts'])
    assert all(line.startswith('V ') for line in log)
    assert (out / 'metrics.csv').read_text().startswith('point,slowdown,')
    assert json.loads((out / 'config.json').read_text())['engines'] == 2

    report = tmp_path / 'report'
    result = runner.invoke(cli, ['report', str(out / 'metrics.json'), '-o', str(report)])
    assert result.exit_code == 0, result.output
    assert 'latency.csv: 3 rows' in result.output
    assert sorted(p.name for p in report.iterdir()) == [
        'latency.csv', 'programming_model.csv', 'slowdown.csv', 'stalls.csv']


def test_run_generates_a_workload_without_a_trace(cli, runner, tmp_path):
    result = runner.invoke(cli, ['run', '--set', 'workload.length=300', '--set', 'kernels=[{"kind": "pmc"}]',
                                 '-o', str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / 'metrics.json').read_text())['kernels'] == ['pmc#0']


def test_run_sweep(cli, runner, tmp_path):
    result = runner.invoke(cli, ['run', '--set', 'workload.length=400', '--sweep', 'filter_width=1,4',
                                 '--jobs', '1', '-o', str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert len((tmp_path / 'sweep.csv').read_text().splitlines()) == 3
    assert (tmp_path / 'metrics-filter_width=1.json').exists()
    assert (tmp_path / 'metrics-filter_width=4.json').exists()


def test_config_errors_exit_with_two(cli, runner, tmp_path, attacked):
    result = runner.invoke(cli, ['run', '--set', 'filter_width=9', '-o', str(tmp_path)])
    assert result.exit_code == 2
    assert 'error: filter_width 9 exceeds commit_width 4' in result.output

    result = runner.invoke(cli, ['inject', str(attacked), '-o', str(tmp_path / 'again.fgt')])
    assert result.exit_code == 2
    assert 'nothing to inject' in result.output

    result = runner.invoke(cli, ['inject', str(attacked), '--attack', 'HIJACK_RET:1', '-o', str(tmp_path / 'x.fgt')])
    assert result.exit_code == 2

    foreign = tmp_path / 'foreign.json'
    foreign.write_text('{"schema": "something-else"}')
    result = runner.invoke(cli, ['report', str(foreign), '-o', str(tmp_path / 'report')])
    assert result.exit_code == 2


def test_unreadable_traces_exit_with_three(cli, runner, tmp_path):
    garbage = tmp_path / 'garbage.fgt'
    garbage.write_text('not a trace\n')
    result = runner.invoke(cli, ['run', '--trace', str(garbage), '-o', str(tmp_path / 'out')])
    assert result.exit_code == 3
    assert result.output.startswith('error:')

    result = runner.invoke(cli, ['inject', str(garbage), '--random', '1', '-o', str(tmp_path / 'x.fgt')])
    assert result.exit_code == 3


def test_broadcast_heap_events_are_reported_once(cli, runner, builder, tmp_path):
    builder.alloc(0x8000, 16)
    builder.tick().free(0x8000)
    builder.tick().free(0x8000)
    trace = tmp_path / 'double_free.fgt'
    write_trace(builder.trace(), trace)
    out = tmp_path / 'out'
    result = runner.invoke(cli, ['run', '--trace', str(trace), '--set', 'engines=4',
                                 '--set', 'kernels=[{"kind": "uaf"}, {"kind": "asan"}]', '-o', str(out)])
    assert result.exit_code == 0, result.output
    log = (out / 'verdicts.log').read_text().splitlines()
    assert sorted(line.split()[2] for line in log) == ['OOB', 'UAF']
    assert all(line.split()[1] == '2' for line in log)


def test_undecodable_trace_exits_with_three(cli, runner, tmp_path):
    broken = tmp_path / 'broken.fgt'
    broken.write_bytes(b'FGTRACE 1 4\n\xff\n')
    result = runner.invoke(cli, ['run', '--trace', str(broken), '-o', str(tmp_path / 'out')])
    assert result.exit_code == 3
    assert result.output.startswith('error:') and 'line 2' in result.output

    metrics = tmp_path / 'metrics.json'
    metrics.write_bytes(b'{"schema": "\xff"}')
    result = runner.invoke(cli, ['report', str(metrics), '-o', str(tmp_path / 'report')])
    assert result.exit_code == 2


def test_run_with_a_programmed_filter_table(cli, runner, attacked, tmp_path):
    image = tmp_path / 'loads.tbl'
    image.write_text(format_table_image(default_table([GID_LOAD])))
    kernels = '[{"kind": "shadow_stack"}]'

    out = tmp_path / 'option'
    result = runner.invoke(cli, ['run', '--trace', str(attacked), '--filter-table', str(image),
                                 '--set', f'kernels={kernels}', '-o', str(out)])
    assert result.exit_code == 0, result.output
    metrics = json.loads((out / 'metrics.json').read_text())
    assert metrics['latency']['detected'] == 0 and metrics['latency']['missed'] == 2
    assert metrics['counters']['no_subscriber'] > 0

    config = tmp_path / 'run.json'
    config.write_text(json.dumps({'trace': attacked.name, 'filter_table': image.name,
                                  'kernels': [{'kind': 'shadow_stack'}]}))
    out = tmp_path / 'config'
    result = runner.invoke(cli, ['run', str(config), '-o', str(out)])
    assert result.exit_code == 0, result.output
    assert json.loads((out / 'metrics.json').read_text())['latency']['missed'] == 2
    assert json.loads((out / 'config.json').read_text())['filter_table'] == str(image.resolve())

    image.write_text('003 1 X L -\n')
    result = runner.invoke(cli, ['run', str(config), '-o', str(tmp_path / 'bad')])
    assert result.exit_code == 2
