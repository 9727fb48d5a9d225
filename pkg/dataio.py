"""
File formats: transfer matrices, phases, visibility matrices, amplitude
distributions, count tables, reconstruction results, fringe CSV, run reports.

All JSON is written with sorted structure and indent=2 so that loading and
re-writing a canonical file reproduces it byte for byte.
"""
import csv
import hashlib
import io
import json
import logging
import re
from contextlib import contextmanager

import numpy as np

from errors import DataFormatError, UsageError
from interference import (AmplitudeDistribution, CountTable, VisibilityMatrix,
                          MEASURED_SUM_TOL, pair_label, port_pairs, stochastic_axis)
from multiport import PhaseShifts, TransferMatrix

log = logging.getLogger('DataIO')

CONVENTION = 'row=output,col=input'
_PHASE_RE = re.compile(r'^\s*([+-]?(?:\d+\.?\d*|\.\d+)?(?:[eE][+-]?\d+)?)\s*\*?\s*(?:pi|π)\s*$')


# ---------------------------------------------------------------------------
# Phase literals
# ---------------------------------------------------------------------------

def parse_phase(text):
    """Radians from '0.383pi', '-pi', '0.5*pi' or a plain number."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _PHASE_RE.match(str(text))
    if m:
        coeff = m.group(1)
        if coeff in ('', '+'):
            return float(np.pi)
        if coeff == '-':
            return float(-np.pi)
        return float(coeff) * float(np.pi)
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"cannot read phase {text!r}; use radians or '<x>pi'")


def format_phase(rad, digits=3):
    return f"{rad / np.pi:.{digits}f}pi"


def parse_pair_spec(spec):
    """'01:12' -> (0, 1, 1, 2); range checks are left to the forward model."""
    try:
        inp, out = str(spec).split(':')
        if len(inp) != 2 or len(out) != 2:
            raise ValueError
        return int(inp[0]), int(inp[1]), int(out[0]), int(out[1])
    except ValueError:
        raise UsageError(f"pair spec must look like 01:12, got {spec!r}")


# ---------------------------------------------------------------------------
# Low-level JSON helpers
# ---------------------------------------------------------------------------

@contextmanager
def reading(path):
    try:
        yield
    except DataFormatError:
        raise
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as e:
        raise DataFormatError(f"{path}: {e}") from e


def read_json(path):
    with reading(path):
        with open(path, 'r', encoding='utf-8') as fh:
            return json.load(fh)


def dumps(obj):
    return json.dumps(obj, indent=2, ensure_ascii=False) + '\n'


def write_json(path, obj):
    try:
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write(dumps(obj))
    except OSError as e:
        raise DataFormatError(f"{path}: {e}") from e


def file_digest(path):
    h = hashlib.sha256()
    try:
        with open(path, 'rb') as fh:
            for chunk in iter(lambda: fh.read(65536), b''):
                h.update(chunk)
    except OSError as e:
        raise DataFormatError(f"{path}: {e}") from e
    return h.hexdigest()


def _floats(arr):
    return [[float(x) for x in row] for row in np.asarray(arr)]


# ---------------------------------------------------------------------------
# Transfer matrices and phases
# ---------------------------------------------------------------------------

def matrix_to_json(u):
    return {
        'dim': u.dim,
        'convention': CONVENTION,
        'entries': [[{'re': float(z.real), 'im': float(z.imag)} for z in row]
                    for row in u.entries],
    }


def matrix_from_json(obj):
    """Accepts re/im entries or, for tables printed as |u| e^{i x pi}, polar entries."""
    if obj.get('convention', CONVENTION) != CONVENTION:
        raise DataFormatError(f"unsupported matrix convention {obj['convention']!r}")
    if 'entries' in obj:
        m = np.array([[e['re'] + 1j * e['im'] for e in row] for row in obj['entries']])
    elif 'polar' in obj:
        m = np.array([[e['mag'] * np.exp(1j * np.pi * e.get('phase_pi', 0.0)) for e in row]
                      for row in obj['polar']])
    else:
        raise DataFormatError("matrix JSON needs 'entries' or 'polar'")
    if 'dim' in obj and m.shape != (obj['dim'], obj['dim']):
        raise DataFormatError(f"matrix declares dim {obj['dim']} but has shape {m.shape}")
    return TransferMatrix(m)


def load_matrix(path):
    with reading(path):
        return matrix_from_json(read_json(path))


def write_matrix(path, u):
    write_json(path, matrix_to_json(u))


def phases_to_json(ph):
    obj = {'phi1': ph.phi1, 'phi2': ph.phi2}
    if ph.extra:
        obj['extra'] = list(ph.extra)
    return obj


def phases_from_json(obj):
    return PhaseShifts(parse_phase(obj['phi1']), parse_phase(obj['phi2']),
                       tuple(parse_phase(x) for x in obj.get('extra', ())))


# ---------------------------------------------------------------------------
# Visibility matrices and amplitude distributions
# ---------------------------------------------------------------------------

def visibility_to_json(v):
    labels = [pair_label(p) for p in v.pairs]
    obj = {'input_pairs': labels, 'output_pairs': labels, 'vals': _floats(v.vals)}
    if v.sigma is not None:
        obj['sigma'] = _floats(v.sigma)
    if v.undefined.any():
        obj['undefined'] = [[bool(x) for x in row] for row in v.undefined]
    return obj


def visibility_from_json(obj, transpose=False):
    v = VisibilityMatrix(obj['vals'], obj.get('sigma'), obj.get('undefined'))
    expected = [pair_label(p) for p in v.pairs]
    for key in ('input_pairs', 'output_pairs'):
        if key in obj and list(obj[key]) != expected:
            raise DataFormatError(f"{key} must be {expected}, got {obj[key]}")
    return v.transposed() if transpose else v


def load_visibility(path, transpose=False):
    with reading(path):
        return visibility_from_json(read_json(path), transpose)


def write_visibility(path, v):
    write_json(path, visibility_to_json(v))


def amplitude_to_json(a):
    obj = {'dim': a.dim, 'convention': CONVENTION, 'axis': a.axis, 'probs': _floats(a.probs)}
    if a.sigma is not None:
        obj['sigma'] = _floats(a.sigma)
    return obj


def amplitude_from_json(obj):
    """
    Model files are checked to 1e-6 along their declared axis. Files marked
    "kind": "measured" are checked to 0.05 along whichever axis is closer to
    stochastic, then renormalised along it.
    """
    probs = np.array(obj['probs'], dtype=float)
    sigma = obj.get('sigma')
    if obj.get('kind') == 'measured':
        axis = obj.get('axis') or stochastic_axis(probs)
        log.debug("measured amplitude distribution normalised along %s", axis)
        return AmplitudeDistribution(probs, axis, sigma, MEASURED_SUM_TOL).normalized()
    return AmplitudeDistribution(probs, obj.get('axis', 'cols'), sigma)


def load_amplitude(path):
    with reading(path):
        return amplitude_from_json(read_json(path))


def write_amplitude(path, a):
    write_json(path, amplitude_to_json(a))


# ---------------------------------------------------------------------------
# Count tables
# ---------------------------------------------------------------------------

def counts_to_json(c):
    coinc = []
    for inp in port_pairs(c.dim):
        for out in port_pairs(c.dim):
            if (inp, out) in c.coincidences:
                dist, indist = c.coincidences[(inp, out)]
                coinc.append({'inputs': pair_label(inp), 'outputs': pair_label(out),
                              'distinguishable': int(dist), 'indistinguishable': int(indist)})
    return {'dim': c.dim, 'singles': [[int(x) for x in row] for row in c.singles],
            'coincidences': coinc}


def counts_from_json(obj):
    coinc = {}
    for e in obj.get('coincidences', []):
        inp = (int(e['inputs'][0]), int(e['inputs'][1]))
        out = (int(e['outputs'][0]), int(e['outputs'][1]))
        coinc[(inp, out)] = (int(e['distinguishable']), int(e['indistinguishable']))
    return CountTable(obj['singles'], coinc)


def load_counts(path):
    with reading(path):
        return counts_from_json(read_json(path))


def write_counts(path, c):
    write_json(path, counts_to_json(c))


# ---------------------------------------------------------------------------
# Results, fringes, reports
# ---------------------------------------------------------------------------

def result_to_json(r):
    obj = {
        'matrix': matrix_to_json(r.matrix),
        'objective': float(r.objective),
        'similarity': float(r.similarity),
        'converged': bool(r.converged),
        'restarts_used': int(r.restarts_used),
        'conjugated': r.conjugated,
        'n_used': int(r.n_used),
    }
    if r.stage1_objective is not None:
        obj['stage1_objective'] = float(r.stage1_objective)
    if r.chi2 is not None:
        obj['chi2'] = float(r.chi2)
    if r.phases is not None:
        obj['phases'] = phases_to_json(r.phases)
    if r.minima:
        obj['minima'] = [dict(phases_to_json(m.phases), objective=float(m.objective))
                         for m in r.minima]
    if r.sigma is not None:
        obj['sigma'] = {k: _floats(v) for k, v in r.sigma.items()}
    return obj


def format_fringe_csv(rows):
    """rows: (delay_um, expected, counts-or-None)"""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(['delay_um', 'expected', 'counts'])
    for delay, expected, counts in rows:
        w.writerow([repr(float(delay)), repr(float(expected)),
                    '' if counts is None else int(counts)])
    return buf.getvalue()


def write_fringe_csv(path, rows):
    try:
        with open(path, 'w', newline='', encoding='utf-8') as fh:
            fh.write(format_fringe_csv(rows))
    except OSError as e:
        raise DataFormatError(f"{path}: {e}") from e


def read_fringe_csv(path):
    with reading(path):
        with open(path, newline='', encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh))
        return [(float(r['delay_um']), float(r['expected']),
                 int(r['counts']) if r.get('counts') else None) for r in rows]


def run_report(command, argv, inputs, metrics, seed, wall_clock):
    """inputs: {name: path}; digests are recorded so reruns can be matched to their data."""
    return {
        'command': command,
        'argv': list(argv),
        'inputs': {name: {'path': str(p), 'sha256': file_digest(p)}
                   for name, p in sorted(inputs.items())},
        'metrics': metrics,
        'seed': seed,
        'wall_clock_s': round(float(wall_clock), 3),
    }
