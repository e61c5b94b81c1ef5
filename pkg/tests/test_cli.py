import json

import pytest

import gridgroup.pipeline as pipeline
from gridgroup.cli import main
from gridgroup.errors import NoStabilizingStart


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_enumerate(tmp_path, capsys):
    code, out, _ = run(capsys, 'enumerate', '--network', 'case3tri', '--out', str(tmp_path))
    assert code == 0
    assert [c['line'] for c in json.loads(out)['contingencies']] == [1, 2, 3]


def test_distances_and_cluster(tmp_path, capsys):
    base = ['--network', 'case3tri', '--metric', 'PSN', '--out', str(tmp_path)]
    assert run(capsys, 'distances', *base)[0] == 0
    assert (tmp_path / 'distances_PSN.csv').read_text().startswith('1,2,3')
    code, out, _ = run(capsys, 'cluster', *base, '--k', '2', '--algorithm', 'k_centers')
    assert code == 0 and json.loads(out)['k'] == 2


def test_synthesize_then_select(tmp_path, capsys):
    code, _, err = run(capsys, 'synthesize', '--network', 'case3tri', '--metric', 'PSN',
                       '--k', '2', '--out', str(tmp_path))
    assert code == 0 and err == ''
    lib = str(tmp_path / 'library.json')
    code, out, _ = run(capsys, 'select', '--library', lib, '--line', '2')
    assert code == 0 and json.loads(out)['handled'] is True

    code, out, err = run(capsys, 'select', '--library', lib, '--line', '42')
    assert code == 2 and 'error' in err
    fallback = json.loads(out)
    nominal = json.loads((tmp_path / 'library.json').read_text())['nominal']
    assert fallback['handled'] is False and fallback['K'] == nominal['K']


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / 'cfg.json'
    cfg.write_text(json.dumps({'network': 'case3tri', 'metric': 'PSN', 'k': 3,
                               'out': str(tmp_path / 'a')}))
    code, out, _ = run(capsys, 'evaluate', '--config', str(cfg), '--k', '1')
    assert code == 0
    assert json.loads(out)['mean'] == 1.0


def test_sweep_command(tmp_path, capsys):
    code, out, _ = run(capsys, 'sweep', '--network', 'case3tri', '--metrics', 'PSN,SR',
                       '--k-range', '1-2', '--out', str(tmp_path))
    assert code == 0 and out.startswith('4 cells, 0 failed')
    assert len((tmp_path / 'summary.csv').read_text().splitlines()) == 5


@pytest.mark.parametrize('argv', [
    ['synthesize', '--network', 'case3tri', '--k', '9'],
    ['cluster', '--network', 'case3tri'],
    ['enumerate', '--network', 'nowhere'],
    ['synthesize', '--network', 'case3tri', '--k', '1', '--max-iters', '0'],
    ['sweep', '--network', 'case3tri', '--algorithms', 'kmeans'],
])
def test_validation_errors_exit_2(tmp_path, capsys, argv):
    code, _, err = run(capsys, *argv, '--out', str(tmp_path))
    assert code == 2 and err.startswith('error:')


def test_bad_config_file_exits_2(tmp_path, capsys):
    cfg = tmp_path / 'cfg.json'
    cfg.write_text('{"bogus": 1}')
    code, _, err = run(capsys, 'enumerate', '--config', str(cfg))
    assert code == 2 and 'bogus' in err


def test_unreadable_library_exits_2(tmp_path, capsys):
    code, _, _ = run(capsys, 'select', '--library', str(tmp_path / 'x.json'), '--line', '1')
    assert code == 2


def test_numerical_failure_exits_3(tmp_path, capsys, monkeypatch):
    def fail(*a, **k):
        raise NoStabilizingStart("no stabilizing start")

    monkeypatch.setattr(pipeline, 'synthesize', fail)
    code, _, err = run(capsys, 'synthesize', '--network', 'case3tri', '--k', '1',
                       '--out', str(tmp_path))
    assert code == 3
    assert err.startswith('numerical failure: [nominal]')
