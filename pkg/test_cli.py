"""Command-line front end, driven through multiport_cli.main(argv)."""
import json

import numpy as np
import pytest

import dataio
import multiport as mp
import multiport_cli

SWAP_12 = np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0]])


def run(capsys, *argv):
    code = multiport_cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_unbiased_ideal_is_permutation(capsys):
    code, out, err = run(capsys, 'simulate', '--mode', 'unbiased', '--tritter', 'ideal',
                         '--phi1', '0', '--phi2', '0')
    assert code == 0
    u = dataio.matrix_from_json(json.loads(out))
    assert np.max(np.abs(u.entries - SWAP_12)) <= 1e-12
    assert 'unitarity deviation' in err


def test_simulate_general_from_fixtures(tmp_path, capsys):
    out = tmp_path / 'w.json'
    code, _, _ = run(capsys, 'simulate', '--mode', 'general', '--tritter', 'fixture:u_f',
                     '--ub', 'fixture:u_b', '--phi1', '0.383pi', '--phi2', '-0.596pi',
                     '--real-border', '--out', str(out))
    assert code == 0
    w = dataio.load_matrix(out)
    printed = dataio.load_matrix(multiport_cli.fixtures.resolve('fixture:w'))
    assert np.max(np.abs(np.abs(w.entries) - np.abs(printed.entries))) <= 0.05


def test_simulate_report_defaults_phases(tmp_path, capsys):
    report = tmp_path / 'report.json'
    code, _, _ = run(capsys, 'simulate', '--tritter', 'fixture:u_f', '--report', str(report))
    assert code == 0
    obj = json.loads(report.read_text())
    assert obj['metrics']['phi1'] == 0.0 and obj['metrics']['phi2'] == 0.0
    assert obj['command'] == 'simulate'
    assert len(obj['inputs']['tritter']['sha256']) == 64


def test_simulate_general_needs_ub(capsys):
    code, _, _ = run(capsys, 'simulate', '--mode', 'general')
    assert code == 2


def test_simulate_bad_phase(capsys):
    code, _, _ = run(capsys, 'simulate', '--phi1', 'quarter')
    assert code == 2


def test_visibility_ideal(tmp_path, capsys):
    vis_out, amp_out = tmp_path / 'v.json', tmp_path / 'a.json'
    code, _, _ = run(capsys, 'visibility', '--matrix', 'ideal',
                     '--out', str(vis_out), '--amp-out', str(amp_out))
    assert code == 0
    assert np.allclose(dataio.load_visibility(vis_out).vals, 0.5)
    assert np.allclose(dataio.load_amplitude(amp_out).probs, 1 / 3)


def test_visibility_identity_flags_undefined(capsys):
    code, out, _ = run(capsys, 'visibility', '--matrix', 'identity')
    assert code == 0
    obj = json.loads(out)
    assert 'undefined' in obj['visibility']
    assert obj['amplitude']['probs'] == np.eye(3).tolist()


def test_compare_fixture_fidelity(capsys):
    code, out, _ = run(capsys, 'compare', '--a', 'fixture:v', '--b', 'fixture:w',
                       '--metric', 'fidelity')
    assert code == 0
    assert json.loads(out)['fidelity'] == pytest.approx(0.971, abs=0.008)


def test_compare_similarity_against_measured(capsys):
    code, out, _ = run(capsys, 'compare', '--a', 'fixture:v', '--b', 'fixture:v_m',
                       '--metric', 'similarity')
    assert code == 0
    assert json.loads(out)['similarity'] == pytest.approx(0.937, abs=0.01)


def test_compare_identical(tmp_path, capsys):
    path = tmp_path / 'u.json'
    dataio.write_matrix(path, mp.random_unitary(3, 4))
    _, out, _ = run(capsys, 'compare', '--a', str(path), '--b', str(path))
    obj = json.loads(out)
    assert obj['fidelity'] == pytest.approx(1.0, abs=1e-12)
    assert obj['similarity'] == 1.0
    _, out, _ = run(capsys, 'compare', '--a', 'fixture:v_m', '--b', 'fixture:v_m',
                    '--metric', 'similarity')
    assert json.loads(out)['similarity'] == 1.0


def test_compare_shape_mismatch(tmp_path, capsys):
    small = tmp_path / 'i2.json'
    dataio.write_matrix(small, mp.identity(2))
    code, _, _ = run(capsys, 'compare', '--a', str(small), '--b', 'fixture:v',
                     '--metric', 'fidelity')
    assert code == 4


def test_compare_gauge_aware_conjugate(tmp_path, capsys):
    u = mp.random_unitary(3, 13)
    a, b = tmp_path / 'a.json', tmp_path / 'b.json'
    dataio.write_matrix(a, u)
    dataio.write_matrix(b, u.conj())
    _, out, _ = run(capsys, 'compare', '--a', str(a), '--b', str(b), '--metric', 'fidelity',
                    '--gauge-aware')
    obj = json.loads(out)
    assert obj['fidelity'] == pytest.approx(1.0)
    assert obj['conjugated'] is True


def test_fringe_ideal(capsys):
    code, out, _ = run(capsys, 'fringe', '--matrix', 'ideal', '--pair', '01:01',
                       '--rate', '9000', '--range', '5000', '--points', '3')
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == 'delay_um,expected,counts'
    expected = [float(line.split(',')[1]) for line in lines[1:]]
    assert expected == pytest.approx([2000, 1000, 2000], rel=1e-6)


def test_fringe_single_point(capsys):
    _, out, _ = run(capsys, 'fringe', '--matrix', 'ideal', '--pair', '01:12',
                    '--points', '1', '--range', '0')
    rows = out.splitlines()[1:]
    assert len(rows) == 1
    assert float(rows[0].split(',')[0]) == 0.0


@pytest.mark.parametrize('pair', ['0:1', '00:12', '01:13', 'xy:01'])
def test_fringe_bad_pair(capsys, pair):
    code, _, _ = run(capsys, 'fringe', '--matrix', 'ideal', '--pair', pair)
    assert code == 2


def test_fringe_then_fit(tmp_path, capsys):
    scan = tmp_path / 'scan.csv'
    run(capsys, 'fringe', '--matrix', 'ideal', '--pair', '01:01', '--rate', '90000',
        '--out', str(scan))
    code, out, _ = run(capsys, 'fit-fringe', '--csv', str(scan))
    assert code == 0
    assert json.loads(out)['visibility'] == pytest.approx(0.5, abs=1e-3)


def test_synth_deterministic(tmp_path, capsys):
    a, b = tmp_path / 'a.json', tmp_path / 'b.json'
    for path in (a, b):
        code, _, _ = run(capsys, 'synth', '--matrix', 'fixture:u_f', '--totals', '20000',
                         '--seed', '9', '--poisson', '--out', str(path))
        assert code == 0
    assert a.read_bytes() == b.read_bytes()


def test_synthetic_round_trip(tmp_path, capsys):
    u_path, vis, amp = tmp_path / 'u.json', tmp_path / 'vis.json', tmp_path / 'amp.json'
    assert run(capsys, 'random-unitary', '--seed', '5', '--out', str(u_path))[0] == 0
    assert run(capsys, 'synth', '--matrix', str(u_path), '--totals', '1000000',
               '--out', str(tmp_path / 'counts.json'),
               '--vis-out', str(vis), '--amp-out', str(amp))[0] == 0
    code, out, _ = run(capsys, 'reconstruct', '--vis', str(vis), '--amp', str(amp),
                       '--reference', str(u_path), '--restarts', '8')
    assert code == 0
    assert json.loads(out)['reference_fidelity'] >= 0.99


def test_reconstruct_fixture_with_report(tmp_path, capsys):
    report = tmp_path / 'report.json'
    code, out, _ = run(capsys, 'reconstruct', '--vis', 'fixture:v_m', '--amp', 'fixture:u_m',
                       '--reference', 'fixture:v', '--restarts', '16', '--report', str(report))
    assert code == 0
    assert json.loads(out)['reference_fidelity'] >= 0.95
    obj = json.loads(report.read_text())
    assert set(obj['inputs']) == {'vis', 'amp', 'reference'}
    assert obj['seed'] is not None


def test_reconstruct_composed(capsys):
    code, out, _ = run(capsys, 'reconstruct', '--vis', 'fixture:v_m', '--uf', 'fixture:u_f',
                       '--ub', 'fixture:u_b')
    assert code == 0
    assert 'phases' in json.loads(out)


def test_reconstruct_strict_non_convergence(tmp_path, capsys):
    vis = tmp_path / 'blank.json'
    dataio.write_json(vis, {'vals': np.zeros((3, 3)).tolist(),
                            'undefined': np.ones((3, 3), dtype=bool).tolist()})
    code, out, _ = run(capsys, 'reconstruct', '--vis', str(vis), '--amp', 'fixture:u_m',
                       '--strict')
    assert code == 5
    assert json.loads(out)['converged'] is False


def test_reconstruct_usage_errors(tmp_path, capsys):
    assert run(capsys, 'reconstruct', '--vis', 'fixture:v_m')[0] == 2
    assert run(capsys, 'reconstruct', '--vis', 'fixture:v_m', '--uf', 'fixture:u_f')[0] == 2
    assert run(capsys, 'reconstruct', '--vis', str(tmp_path / 'missing.json'),
               '--amp', 'fixture:u_m')[0] == 3
    assert run(capsys, 'reconstruct', '--vis', 'fixture:v_m', '--amp', 'fixture:u_m',
               '--restarts', '0')[0] == 2


def test_uncertainty_needs_enough_samples(capsys):
    code, _, _ = run(capsys, 'uncertainty', '--vis', 'fixture:v_m', '--amp', 'fixture:u_m',
                     '--samples', '5')
    assert code == 2


def test_fixtures_commands(tmp_path, capsys):
    code, out, _ = run(capsys, 'fixtures', 'list')
    assert code == 0
    assert len(out.splitlines()) == len(multiport_cli.fixtures.CATALOG)
    assert 'w_printed.json' in out
    assert run(capsys, 'fixtures', 'verify')[0] == 0
    assert run(capsys, 'fixtures', 'export', str(tmp_path / 'fx'))[0] == 0
    assert (tmp_path / 'fx' / 'v_m.json').exists()
    assert run(capsys, 'fixtures', 'export')[0] == 2


def test_bad_log_level_and_arguments(capsys):
    assert run(capsys, '--log-level', 'LOUD', 'fixtures', 'list')[0] == 2
    assert run(capsys, 'no-such-command')[0] == 2
    assert run(capsys, 'fringe', '--matrix', 'ideal')[0] == 2


def test_simulate_negative_phase_literal(capsys):
    code, out, _ = run(capsys, 'simulate', '--mode', 'general', '--tritter', 'identity',
                       '--ub', 'identity', '--phi1', '-0.5pi', '--phi2', '-1')
    assert code == 0
    u = dataio.matrix_from_json(json.loads(out))
    assert np.allclose(u.entries, np.diag([1, -1j, np.exp(-1j)]), atol=1e-12)


def test_compare_visibility_files_default_metric(capsys):
    code, out, _ = run(capsys, 'compare', '--a', 'fixture:v_m', '--b', 'fixture:v_f')
    assert code == 0
    obj = json.loads(out)
    assert 'fidelity' not in obj
    assert 0.0 <= obj['similarity'] <= 1.0


def test_visibility_out_writes_amplitudes_beside(tmp_path, capsys):
    vis_out = tmp_path / 'v.json'
    code, _, _ = run(capsys, 'visibility', '--matrix', 'ideal', '--out', str(vis_out))
    assert code == 0
    assert np.allclose(dataio.load_amplitude(tmp_path / 'v_amp.json').probs, 1 / 3)


def test_report_on_compare_and_fringe(tmp_path, capsys):
    cmp_report, fringe_report = tmp_path / 'cmp.json', tmp_path / 'fringe.json'
    assert run(capsys, 'compare', '--a', 'fixture:v', '--b', 'fixture:w',
               '--report', str(cmp_report))[0] == 0
    assert run(capsys, 'fringe', '--matrix', 'ideal', '--pair', '01:01', '--points', '3',
               '--report', str(fringe_report))[0] == 0
    obj = json.loads(cmp_report.read_text())
    assert obj['command'] == 'compare'
    assert obj['metrics']['fidelity'] == pytest.approx(0.971, abs=0.008)
    assert json.loads(fringe_report.read_text())['command'] == 'fringe'


def test_reconstruct_composed_weighting_flag(capsys):
    base = ['reconstruct', '--vis', 'fixture:v_m', '--uf', 'fixture:u_f', '--ub', 'fixture:u_b']
    _, out, _ = run(capsys, *base)
    assert 'chi2' in json.loads(out)
    _, out, _ = run(capsys, *base, '--weighting', 'none')
    assert 'chi2' not in json.loads(out)
    assert run(capsys, *base, '--weighting', 'loud')[0] == 2
