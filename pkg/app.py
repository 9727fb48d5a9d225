#!/usr/bin/env python3
"""
Multiport API - the forward model and reconstruction over JSON HTTP.

Request bodies use the same JSON layouts as the files the CLI reads; wherever
a matrix is expected a body may also pass "ideal", "identity" or
"fixture:<name>".
"""
import logging

import numpy as np
from flask import Flask, jsonify, request

import config
import dataio
import fixtures
import interference as itf
import multiport as mp
import reconstruction as rc
from errors import MultiportError, NonConvergence, UncertaintyFailure, UsageError

log = logging.getLogger('API')

app = Flask(__name__)

SOLVER_FIELDS = ('restarts', 'max_iters', 'ftol', 'seed', 'stage', 'workers', 'refine_top',
                 'weighting')


def _body():
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        raise UsageError("request body must be a JSON object")
    return data


def _required(data, key):
    if key not in data:
        raise UsageError(f"missing field {key!r}")
    return data[key]


def _matrix(ref):
    if isinstance(ref, str):
        if ref == 'ideal':
            return mp.ideal_tritter()
        if ref == 'identity':
            return mp.identity()
        if ref.startswith(fixtures.FIXTURE_PREFIX):
            return dataio.load_matrix(fixtures.resolve(ref))
        raise UsageError(f"matrix reference {ref!r} is not 'ideal', 'identity' or a fixture")
    with dataio.reading('request body'):
        return dataio.matrix_from_json(ref)


def _visibility(ref):
    if isinstance(ref, str):
        return dataio.load_visibility(fixtures.resolve(ref))
    with dataio.reading('request body'):
        return dataio.visibility_from_json(ref)


def _amplitude(ref):
    if isinstance(ref, str):
        return dataio.load_amplitude(fixtures.resolve(ref))
    with dataio.reading('request body'):
        return dataio.amplitude_from_json(ref)


@app.errorhandler(MultiportError)
def handle_error(e):
    status = 422 if isinstance(e, (NonConvergence, UncertaintyFailure)) else 400
    log.warning("%s: %s", type(e).__name__, e)
    return jsonify({'success': False, 'error': str(e)}), status


@app.errorhandler(ValueError)
def handle_value_error(e):
    return jsonify({'success': False, 'error': str(e)}), 400


@app.route('/')
def index():
    return jsonify({
        'service': 'multiport',
        'status': 'operational',
        'convention': dataio.CONVENTION,
        'fixtures': len(fixtures.CATALOG),
    })


@app.route('/api/fixtures')
def list_fixtures():
    return jsonify(fixtures.FixtureSet().listing())


@app.route('/api/simulate', methods=['POST'])
def simulate():
    """Compose a multiport from a tritter and mirror phases"""
    data = _body()
    uf = _matrix(data.get('tritter', 'ideal'))
    ph = mp.PhaseShifts(dataio.parse_phase(data.get('phi1', 0)),
                        dataio.parse_phase(data.get('phi2', 0)))
    mode = data.get('mode', 'unbiased')
    if mode == 'biased':
        u = mp.compose_biased(uf, ph)
    elif mode == 'unbiased':
        u = mp.compose_unbiased(uf, ph)
    elif mode == 'general':
        u = mp.compose_general(_matrix(_required(data, 'ub')), ph, uf)
    else:
        raise UsageError(f"mode must be biased, unbiased or general, got {mode!r}")
    if data.get('real_border'):
        u, _ = mp.real_border(u)
    return jsonify({'success': True, 'matrix': dataio.matrix_to_json(u),
                    'unitarity_deviation': mp.unitarity_deviation(u)})


@app.route('/api/visibility', methods=['POST'])
def visibility():
    u = _matrix(_required(_body(), 'matrix'))
    return jsonify({'success': True,
                    'visibility': dataio.visibility_to_json(itf.visibility_matrix(u)),
                    'amplitude': dataio.amplitude_to_json(itf.amplitude_distribution(u))})


@app.route('/api/compare', methods=['POST'])
def compare():
    data = _body()
    a, b = _matrix(_required(data, 'a')), _matrix(_required(data, 'b'))
    out = {'success': True,
           'similarity': rc.similarity(itf.visibility_matrix(a), itf.visibility_matrix(b))}
    if data.get('gauge_aware'):
        cmp = rc.compare_up_to_gauge(a, b)
        out.update(fidelity=cmp.fidelity, conjugated=cmp.conjugated)
    else:
        out['fidelity'] = mp.fidelity(a, b)
    return jsonify(out)


@app.route('/api/reconstruct', methods=['POST'])
def reconstruct():
    """Direct reconstruction from vis + amp, or composed from vis + uf + ub"""
    data = _body()
    try:
        cfg = rc.OptimizerConfig.from_env(**{k: data.get(k) for k in SOLVER_FIELDS})
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad solver options: {e}")
    target = _visibility(_required(data, 'vis'))
    if data.get('transpose_vis'):
        target = target.transposed()
    if 'uf' in data or 'ub' in data:
        _, _, result = rc.reconstruct_composed(_matrix(_required(data, 'uf')),
                                               _matrix(_required(data, 'ub')), target, cfg)
    else:
        reference = _matrix(data['reference']) if data.get('reference') else None
        result = rc.reconstruct_direct(target, _amplitude(_required(data, 'amp')), cfg,
                                       reference=reference)
    if data.get('strict'):
        rc.require_converged(result)
    return jsonify({'success': True, 'result': dataio.result_to_json(result)})


@app.route('/api/fringe', methods=['POST'])
def fringe():
    """Expected coincidences over a delay scan"""
    data = _body()
    u = _matrix(_required(data, 'matrix'))
    i, j, k, l = dataio.parse_pair_spec(_required(data, 'pair'))
    if 'delays' in data:
        delays = np.asarray(data['delays'], dtype=float)
    else:
        half = float(data.get('range', 1000.0))
        delays = np.linspace(-half, half, int(data.get('points', 81)))
    fm = itf.FringeModel(float(data.get('sigma', itf.DEFAULT_COHERENCE_SIGMA_UM)),
                         float(data.get('rate', 1.0)))
    rows = itf.fringe(u, i, j, k, l, delays, fm)
    return jsonify({'success': True,
                    'rows': [{'delay_um': d, 'expected': e} for d, e in rows]})


if __name__ == '__main__':
    config.setup_logging()
    log.info("serving on %s:%d", config.HOST, config.PORT)
    app.run(host=config.HOST, port=config.PORT, debug=False)
