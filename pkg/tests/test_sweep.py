import logging

import pytest

from fireguard.errors import ConfigError
from fireguard.utils.sweep import parse_axis, point_config, point_path, run_sweep, sweep_points


def test_parse_axis_reads_json_values():
    assert parse_axis('engines=1,2,4') == ('engines', [1, 2, 4])
    assert parse_axis('kernels.0.pm=DUFF, HYBRID') == ('kernels.0.pm', ['DUFF', 'HYBRID'])
    assert parse_axis('prf_conflict_p=0.0,0.5') == ('prf_conflict_p', [0.0, 0.5])


@pytest.mark.parametrize('text', ['engines', '=1,2', '1x=2', 'engines='])
def test_parse_axis_rejects_malformed_axes(text):
    with pytest.raises(ConfigError):
        parse_axis(text)


def test_sweep_points_form_a_grid_in_axis_order():
    assert sweep_points(['engines=1,4', 'filter_width=2,4']) == [
        {'engines': 1, 'filter_width': 2}, {'engines': 1, 'filter_width': 4},
        {'engines': 4, 'filter_width': 2}, {'engines': 4, 'filter_width': 4},
    ]
    with pytest.raises(ConfigError):
        sweep_points(['engines=1', 'engines=2'])


def test_point_config_does_not_touch_the_base():
    raw = {'kernels': [{'kind': 'asan', 'pm': 'HYBRID'}]}
    config = point_config(raw, {'kernels.0.pm': 'DUFF', 'clock.cdc_depth': 2})
    assert config['kernels'][0]['pm'] == 'DUFF'
    assert config['clock'] == {'cdc_depth': 2}
    assert raw == {'kernels': [{'kind': 'asan', 'pm': 'HYBRID'}]}


def test_point_path_is_keyed_by_the_point(tmp_path):
    assert point_path(tmp_path, {'engines': 4, 'kernels.0.pm': 'DUFF'}).name == 'metrics-engines=4,kernels.0.pm=DUFF.json'
    assert point_path(tmp_path, {'workload': {'a': 1}}).name != point_path(tmp_path, {}).name


def test_run_sweep_serially(small_trace):
    documents = run_sweep({}, ['filter_width=1,4'], small_trace, jobs=1)
    assert [d['point'] for d in documents] == [{'filter_width': 1}, {'filter_width': 4}]
    assert documents[0]['slowdown'] > documents[1]['slowdown']
    assert all(d['latency'] is None for d in documents)


def test_run_sweep_validates_every_point_first(small_trace, caplog):
    caplog.set_level(logging.INFO)
    with pytest.raises(ConfigError):
        run_sweep({}, ['filter_width=2,8'], small_trace)
    assert 'Sweeping' not in caplog.text
