"""File formats and phase literals."""
import json

import numpy as np
import pytest

import dataio
import interference as itf
import multiport as mp
from errors import DataFormatError, UsageError


@pytest.mark.parametrize('text, expected', [
    ('0.383pi', 0.383 * np.pi),
    ('-0.596pi', -0.596 * np.pi),
    ('pi', np.pi),
    ('-pi', -np.pi),
    ('0.5*pi', 0.5 * np.pi),
    ('2π', 2 * np.pi),
    ('1.25', 1.25),
    (0, 0.0),
])
def test_parse_phase(text, expected):
    assert dataio.parse_phase(text) == pytest.approx(expected)


@pytest.mark.parametrize('text', ['', 'half', '0.3 rad', 'pi/2'])
def test_parse_phase_rejects(text):
    with pytest.raises(UsageError):
        dataio.parse_phase(text)


def test_format_phase():
    assert dataio.format_phase(0.383 * np.pi) == '0.383pi'


def test_parse_pair_spec():
    assert dataio.parse_pair_spec('01:12') == (0, 1, 1, 2)
    for bad in ('0112', '01:1', 'ab:cd', '012:12'):
        with pytest.raises(UsageError):
            dataio.parse_pair_spec(bad)


def test_canonical_files_rewrite_byte_identical(tmp_path):
    u = mp.random_unitary(3, 6)
    vis = itf.visibility_matrix(mp.identity())
    amp = itf.amplitude_distribution(u)
    counts = itf.synth_counts(u, 5000, seed=2)
    cases = [
        (dataio.write_matrix, dataio.load_matrix, u),
        (dataio.write_visibility, dataio.load_visibility, vis),
        (dataio.write_amplitude, dataio.load_amplitude, amp),
        (dataio.write_counts, dataio.load_counts, counts),
    ]
    for n, (write, load, obj) in enumerate(cases):
        first, second = tmp_path / f'{n}a.json', tmp_path / f'{n}b.json'
        write(first, obj)
        write(second, load(first))
        assert first.read_bytes() == second.read_bytes()


def test_matrix_round_trip_exact(tmp_path):
    u = mp.random_unitary(3, 99)
    dataio.write_matrix(tmp_path / 'u.json', u)
    assert np.array_equal(dataio.load_matrix(tmp_path / 'u.json').entries, u.entries)


def test_polar_matrix():
    obj = {'dim': 2, 'polar': [[{'mag': 1.0, 'phase_pi': 0.0}, {'mag': 0.0}],
                               [{'mag': 0.0}, {'mag': 1.0, 'phase_pi': 0.5}]]}
    u = dataio.matrix_from_json(obj)
    assert np.allclose(u.entries, np.diag([1, 1j]))


def test_matrix_json_errors(tmp_path):
    with pytest.raises(DataFormatError):
        dataio.matrix_from_json({'dim': 3, 'convention': 'row=input,col=output', 'entries': []})
    with pytest.raises(DataFormatError):
        dataio.matrix_from_json({'dim': 3})
    bad = tmp_path / 'bad.json'
    bad.write_text('{"dim": 3, "entries": [[{"re": 1}]]}')
    with pytest.raises(DataFormatError):
        dataio.load_matrix(bad)
    with pytest.raises(DataFormatError):
        dataio.load_matrix(tmp_path / 'missing.json')
    (tmp_path / 'garbage.json').write_text('not json')
    with pytest.raises(DataFormatError):
        dataio.read_json(tmp_path / 'garbage.json')


def test_visibility_undefined_key_only_when_needed():
    assert 'undefined' not in dataio.visibility_to_json(itf.visibility_matrix(mp.ideal_tritter()))
    assert 'undefined' in dataio.visibility_to_json(itf.visibility_matrix(mp.identity()))


def test_visibility_transpose_and_labels():
    obj = {'vals': [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]]}
    v = dataio.visibility_from_json(obj, transpose=True)
    assert v.vals[0, 1] == pytest.approx(0.4)
    with pytest.raises(DataFormatError):
        dataio.visibility_from_json({**obj, 'input_pairs': ['01', '12', '02']})


def test_measured_amplitude_renormalised():
    obj = {'kind': 'measured', 'probs': [[0.6, 0.3, 0.1], [0.2, 0.2, 0.61], [0.1, 0.8, 0.1]]}
    amp = dataio.amplitude_from_json(obj)
    assert amp.axis == 'rows'
    assert np.allclose(amp.probs.sum(axis=1), 1)


def test_model_amplitude_strict():
    with pytest.raises(ValueError):
        dataio.amplitude_from_json({'probs': [[0.5, 0.5], [0.51, 0.5]]})


def test_fringe_csv(tmp_path):
    rows = [(-10.0, 2.5, 3), (0.0, 1.25, None)]
    path = tmp_path / 'scan.csv'
    dataio.write_fringe_csv(path, rows)
    assert path.read_text().splitlines()[0] == 'delay_um,expected,counts'
    assert dataio.read_fringe_csv(path) == rows


def test_run_report(tmp_path):
    src = tmp_path / 'in.json'
    dataio.write_json(src, {'a': 1})
    report = dataio.run_report('simulate', ['simulate'], {'tritter': src}, {'phi1': 0.0},
                               7, 0.12345)
    assert report['inputs']['tritter']['sha256'] == dataio.file_digest(src)
    assert report['wall_clock_s'] == 0.123
    assert json.loads(dataio.dumps(report))['seed'] == 7
