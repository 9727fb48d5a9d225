#!/usr/bin/env python3
"""
multiport - forward model and transfer-matrix reconstruction for linear-optical
multiports.

    multiport_cli.py simulate --mode unbiased --tritter ideal --phi1 0.3pi
    multiport_cli.py visibility --matrix fixture:v
    multiport_cli.py reconstruct --vis fixture:v_m --amp fixture:u_m --reference fixture:v
    multiport_cli.py reconstruct --vis fixture:v_m --uf fixture:u_f --ub fixture:u_b
    multiport_cli.py compare --a fixture:v --b fixture:w --metric fidelity
    multiport_cli.py fringe --matrix ideal --pair 01:01 --rate 9000
    multiport_cli.py fixtures list

Any file argument also accepts fixture:<name> for the bundled tables.
Exit codes: 2 usage, 3 I/O, 4 shape, 5 non-convergence (with --strict).
"""
import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

import config
import dataio
import fixtures
import interference as itf
import multiport as mp
import reconstruction as rc
from errors import DimensionMismatch, MultiportError, NonConvergence, UsageError

log = logging.getLogger('CLI')

PHASE_FLAGS = ('--phi1', '--phi2')


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _path(ref):
    return fixtures.resolve(ref)


def _load_matrix(ref):
    if ref == 'ideal':
        return mp.ideal_tritter()
    if ref == 'identity':
        return mp.identity()
    return dataio.load_matrix(_path(ref))


def _load_vis_or_matrix(ref):
    """Visibility matrix from a visibility file, or computed from a matrix file."""
    if ref in ('ideal', 'identity'):
        return itf.visibility_matrix(_load_matrix(ref))
    path = _path(ref)
    obj = dataio.read_json(path)
    if 'vals' in obj:
        with dataio.reading(path):
            return dataio.visibility_from_json(obj)
    with dataio.reading(path):
        return itf.visibility_matrix(dataio.matrix_from_json(obj))


def _is_matrix_ref(ref):
    if ref in ('ideal', 'identity'):
        return True
    return 'vals' not in dataio.read_json(_path(ref))


def _amp_path(out):
    p = Path(out)
    return p.with_name(f"{p.stem}_amp{p.suffix or '.json'}")


def _emit(obj, out):
    if out:
        dataio.write_json(out, obj)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(dataio.dumps(obj))


def _solver_cfg(args):
    try:
        return rc.OptimizerConfig.from_env(
            restarts=args.restarts, max_iters=args.max_iters, ftol=args.ftol,
            seed=args.seed, stage=args.stage, workers=args.workers,
            refine_top=args.refine_top, weighting=args.weighting,
            lattice=False if args.no_lattice else None)
    except ValueError as e:
        raise UsageError(str(e))


def _report(args, command, inputs, metrics, seed, started):
    if not getattr(args, 'report', None):
        return
    files = {k: _path(v) for k, v in inputs.items()
             if v is not None and v not in ('ideal', 'identity')}
    report = dataio.run_report(command, args.argv, files, metrics, seed,
                               time.perf_counter() - started)
    dataio.write_json(args.report, report)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    started = time.perf_counter()
    uf = _load_matrix(args.tritter)
    ph = mp.PhaseShifts(dataio.parse_phase(args.phi1), dataio.parse_phase(args.phi2))
    if args.mode == 'biased':
        u = mp.compose_biased(uf, ph)
    elif args.mode == 'unbiased':
        u = mp.compose_unbiased(uf, ph)
    else:
        if not args.ub:
            raise UsageError("--mode general needs --ub")
        ub = _load_matrix(args.ub)
        if ub.dim != uf.dim:
            raise DimensionMismatch(f"--ub is {ub.dim}x{ub.dim} but --tritter is {uf.dim}x{uf.dim}")
        u = mp.compose_general(ub, ph, uf)
    if args.real_border:
        u, _ = mp.real_border(u)
    dev = mp.unitarity_deviation(u)
    print(f"unitarity deviation: {dev:.3e}", file=sys.stderr)
    _emit(dataio.matrix_to_json(u), args.out)
    _report(args, 'simulate', {'tritter': args.tritter, 'ub': args.ub},
            {'phi1': ph.phi1, 'phi2': ph.phi2, 'mode': args.mode, 'unitarity_deviation': dev},
            None, started)
    return 0


def cmd_visibility(args):
    started = time.perf_counter()
    u = _load_matrix(args.matrix)
    vis = itf.visibility_matrix(u)
    amp = itf.amplitude_distribution(u)
    if args.out:
        amp_out = args.amp_out or _amp_path(args.out)
        dataio.write_visibility(args.out, vis)
        dataio.write_amplitude(amp_out, amp)
        log.info("wrote %s and %s", args.out, amp_out)
    else:
        _emit({'visibility': dataio.visibility_to_json(vis),
               'amplitude': dataio.amplitude_to_json(amp)}, None)
    if vis.undefined.any():
        log.info("%d visibilities undefined (no distinguishable coincidences)",
                 int(vis.undefined.sum()))
    _report(args, 'visibility', {'matrix': args.matrix},
            {'undefined': int(vis.undefined.sum())}, None, started)
    return 0


def cmd_reconstruct(args):
    started = time.perf_counter()
    cfg = _solver_cfg(args)
    target = dataio.load_visibility(_path(args.vis), args.transpose_vis)
    metrics = {}
    if args.uf or args.ub:
        if not (args.uf and args.ub):
            raise UsageError("composed reconstruction needs both --uf and --ub")
        ph, _, result = rc.reconstruct_composed(_load_matrix(args.uf), _load_matrix(args.ub),
                                                target, cfg)
        metrics.update(phi1=ph.phi1, phi2=ph.phi2, phi1_pi=ph.phi1 / np.pi, phi2_pi=ph.phi2 / np.pi)
    else:
        if not args.amp:
            raise UsageError("direct reconstruction needs --amp")
        amp = dataio.load_amplitude(_path(args.amp))
        reference = _load_matrix(args.reference) if args.reference else None
        result = rc.reconstruct_direct(target, amp, cfg, reference=reference)
    if args.reference:
        cmp = rc.compare_up_to_gauge(_load_matrix(args.reference), result.matrix)
        metrics.update(reference_fidelity=cmp.fidelity, conjugated=cmp.conjugated)
    metrics.update(objective=result.objective, similarity=result.similarity,
                   converged=result.converged)
    obj = dataio.result_to_json(result)
    if 'reference_fidelity' in metrics:
        obj['reference_fidelity'] = metrics['reference_fidelity']
    _emit(obj, args.out)
    _report(args, 'reconstruct',
            {'vis': args.vis, 'amp': args.amp, 'uf': args.uf, 'ub': args.ub,
             'reference': args.reference},
            metrics, cfg.seed, started)
    if args.strict:
        rc.require_converged(result)
    return 0


def cmd_compare(args):
    started = time.perf_counter()
    out = {}
    fid = args.metric == 'fidelity' or (
        args.metric == 'both' and _is_matrix_ref(args.a) and _is_matrix_ref(args.b))
    if args.metric == 'both' and not fid:
        log.info("fidelity skipped: both inputs must be transfer matrices")
    if fid:
        a, b = _load_matrix(args.a), _load_matrix(args.b)
        if a.dim != b.dim:
            raise DimensionMismatch(f"{a.dim}x{a.dim} vs {b.dim}x{b.dim}")
        if args.gauge_aware:
            cmp = rc.compare_up_to_gauge(a, b)
            out.update(fidelity=cmp.fidelity, conjugated=cmp.conjugated)
        else:
            out['fidelity'] = mp.fidelity(a, b)
    if args.metric in ('similarity', 'both'):
        va = _load_vis_or_matrix(args.a)
        vb = _load_vis_or_matrix(args.b)
        out['similarity'] = rc.similarity(va, vb)
    print(' '.join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}"
                   for k, v in out.items()), file=sys.stderr)
    _emit(out, args.out)
    _report(args, 'compare', {'a': args.a, 'b': args.b}, out, None, started)
    return 0


def _delays(args):
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    if args.points == 1:
        return np.array([0.0])
    return np.linspace(-args.range, args.range, args.points)


def cmd_fringe(args):
    started = time.perf_counter()
    u = _load_matrix(args.matrix)
    i, j, k, l = dataio.parse_pair_spec(args.pair)
    try:
        fm = itf.FringeModel(args.sigma, args.rate)
    except ValueError as e:
        raise UsageError(str(e))
    rows = itf.fringe(u, i, j, k, l, _delays(args), fm)
    counts = [None] * len(rows)
    if args.seed is not None:
        rng = np.random.default_rng(args.seed)
        counts = [int(rng.poisson(e)) for _, e in rows]
    table = [(d, e, c) for (d, e), c in zip(rows, counts)]
    if args.out:
        dataio.write_fringe_csv(args.out, table)
    else:
        sys.stdout.write(dataio.format_fringe_csv(table))
    _report(args, 'fringe', {'matrix': args.matrix},
            {'pair': args.pair, 'points': len(table), 'rate': args.rate, 'sigma': args.sigma},
            args.seed, started)
    return 0


def cmd_fit_fringe(args):
    started = time.perf_counter()
    rows = dataio.read_fringe_csv(_path(args.csv))
    delays = [r[0] for r in rows]
    counts = [r[2] if r[2] is not None else r[1] for r in rows]
    try:
        fit = itf.fit_fringe(delays, counts)
    except RuntimeError as e:
        raise NonConvergence(f"fringe fit failed: {e}")
    _emit(fit._asdict(), args.out)
    _report(args, 'fit-fringe', {'csv': args.csv}, fit._asdict(), None, started)
    return 0


def cmd_synth(args):
    started = time.perf_counter()
    u = _load_matrix(args.matrix)
    table = itf.synth_counts(u, args.totals, args.seed, args.poisson)
    _emit(dataio.counts_to_json(table), args.out)
    if args.vis_out:
        dataio.write_visibility(args.vis_out, itf.visibility_from_counts(table))
    if args.amp_out:
        dataio.write_amplitude(args.amp_out, itf.normalize_counts(table))
    _report(args, 'synth', {'matrix': args.matrix},
            {'totals': args.totals, 'poisson': args.poisson}, args.seed, started)
    return 0


def cmd_random(args):
    started = time.perf_counter()
    u = mp.random_unitary(args.dim, args.seed)
    _emit(dataio.matrix_to_json(u), args.out)
    _report(args, 'random-unitary', {}, {'dim': args.dim,
            'unitarity_deviation': mp.unitarity_deviation(u)}, args.seed, started)
    return 0


def cmd_uncertainty(args):
    started = time.perf_counter()
    cfg = _solver_cfg(args)
    target = dataio.load_visibility(_path(args.vis), args.transpose_vis)
    if args.uf or args.ub:
        if not (args.uf and args.ub):
            raise UsageError("composed mode needs both --uf and --ub")
        est = rc.estimate_composed_uncertainty(_load_matrix(args.uf), _load_matrix(args.ub),
                                               target, cfg, args.samples)
    else:
        if not args.amp:
            raise UsageError("direct mode needs --amp")
        est = rc.estimate_uncertainty(target, dataio.load_amplitude(_path(args.amp)),
                                      cfg, args.samples)
    obj = dataio.result_to_json(est.result)
    obj.update(samples=est.samples, failures=est.failures)
    if est.phi_sigma is not None:
        obj['phi_sigma'] = {'phi1': est.phi_sigma[0], 'phi2': est.phi_sigma[1]}
    _emit(obj, args.out)
    _report(args, 'uncertainty', {'vis': args.vis, 'amp': args.amp, 'uf': args.uf, 'ub': args.ub},
            {'max_magnitude_sigma': float(est.mag_sigma.max()), 'failures': est.failures},
            cfg.seed, started)
    if args.strict:
        rc.require_converged(est.result)
    return 0


def cmd_fixtures(args):
    fx = fixtures.FixtureSet()
    if args.action == 'list':
        for row in fx.listing():
            note = f"  ({row['note']})" if row['note'] else ''
            print(f"{row['group']:<20} {row['file']:<16} {row['description']}{note}")
    elif args.action == 'export':
        if not args.dest:
            raise UsageError("fixtures export needs a destination directory")
        fx.export(args.dest)
    else:
        problems = fx.verify()
        if problems:
            for p in problems:
                print(p, file=sys.stderr)
            return 3
        print(f"{len(fixtures.CATALOG)} fixtures verified")
    return 0


def cmd_serve(args):
    from app import app
    app.run(host=args.host, port=args.port, debug=False)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_solver_flags(p):
    p.add_argument('--restarts', type=int, help=f"random starts (default {config.RESTARTS})")
    p.add_argument('--max-iters', type=int,
                   help=f"iterations per start (default {config.MAX_ITERS})")
    p.add_argument('--ftol', type=float, help=f"objective tolerance (default {config.FTOL:g})")
    p.add_argument('--seed', type=int, help=f"random seed (default {config.SEED})")
    p.add_argument('--stage', choices=rc.STAGES, help="search stages (default both)")
    p.add_argument('--workers', type=int, help="threads for independent restarts")
    p.add_argument('--refine-top', type=int, help="stage-1 fits refined in stage 2")
    p.add_argument('--weighting', choices=rc.WEIGHTINGS,
                   help="residual weights (default auto: 1/sigma^2 for composed fits)")
    p.add_argument('--no-lattice', action='store_true', help="skip the 3^4 tritter phase lattice")
    p.add_argument('--transpose-vis', action='store_true',
                   help="read visibility files with rows = output pairs")
    p.add_argument('--strict', action='store_true', help="exit 5 if the solver does not converge")
    p.add_argument('--out')
    p.add_argument('--report', help="write a RunReport JSON here")


def build_parser():
    parser = argparse.ArgumentParser(prog='multiport', description=__doc__.split('\n\n')[0])
    parser.add_argument('--log-level', default=None, help=f"default {config.LOG_LEVEL}")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help="compose a multiport transfer matrix")
    p.add_argument('--mode', choices=['biased', 'unbiased', 'general'], default='unbiased')
    p.add_argument('--tritter', default='ideal', help="'ideal' or a matrix file")
    p.add_argument('--ub', help="backward tritter matrix (general mode)")
    p.add_argument('--phi1', default='0', help="radians or '<x>pi'")
    p.add_argument('--phi2', default='0', help="radians or '<x>pi'")
    p.add_argument('--real-border', action='store_true')
    p.add_argument('--out')
    p.add_argument('--report')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('visibility', help="visibility matrix and amplitude distribution")
    p.add_argument('--matrix', required=True)
    p.add_argument('--out')
    p.add_argument('--amp-out', help="amplitude file (default <out>_amp.json)")
    p.add_argument('--report')
    p.set_defaults(func=cmd_visibility)

    p = sub.add_parser('reconstruct', help="recover a transfer matrix from data")
    p.add_argument('--vis', required=True)
    p.add_argument('--amp')
    p.add_argument('--uf')
    p.add_argument('--ub')
    p.add_argument('--reference', help="matrix to report gauge-aware fidelity against")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser('compare', help="fidelity / similarity between two files")
    p.add_argument('--a', required=True)
    p.add_argument('--b', required=True)
    p.add_argument('--metric', choices=['fidelity', 'similarity', 'both'], default='both')
    p.add_argument('--gauge-aware', action='store_true')
    p.add_argument('--out')
    p.add_argument('--report')
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser('fringe', help="expected coincidences vs delay (CSV)")
    p.add_argument('--matrix', required=True)
    p.add_argument('--pair', required=True, help="inputs:outputs, e.g. 01:12")
    p.add_argument('--range', type=float, default=1000.0, help="half-range of the scan in um")
    p.add_argument('--points', type=int, default=81)
    p.add_argument('--sigma', type=float, default=itf.DEFAULT_COHERENCE_SIGMA_UM,
                   help="Gaussian envelope width in um")
    p.add_argument('--rate', type=float, default=1.0)
    p.add_argument('--seed', type=int, help="also draw Poisson counts with this seed")
    p.add_argument('--out')
    p.add_argument('--report')
    p.set_defaults(func=cmd_fringe)

    p = sub.add_parser('fit-fringe', help="fit visibility and width to a delay scan CSV")
    p.add_argument('--csv', required=True)
    p.add_argument('--out')
    p.add_argument('--report')
    p.set_defaults(func=cmd_fit_fringe)

    p = sub.add_parser('synth', help="synthetic single and coincidence counts")
    p.add_argument('--matrix', required=True)
    p.add_argument('--totals', type=int, required=True)
    p.add_argument('--seed', type=int, default=config.SEED)
    p.add_argument('--poisson', action='store_true', help="Poisson noise instead of exact means")
    p.add_argument('--out')
    p.add_argument('--vis-out', help="also write the visibility matrix measured from the counts")
    p.add_argument('--amp-out', help="also write the normalised amplitude distribution")
    p.add_argument('--report')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('random-unitary', help="seeded Haar-random unitary")
    p.add_argument('--dim', type=int, default=3)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out')
    p.add_argument('--report')
    p.set_defaults(func=cmd_random)

    p = sub.add_parser('uncertainty', help="Monte-Carlo error propagation")
    p.add_argument('--vis', required=True)
    p.add_argument('--amp')
    p.add_argument('--uf')
    p.add_argument('--ub')
    p.add_argument('--samples', type=int, default=200)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser('fixtures', help="bundled experimental tables")
    p.add_argument('action', choices=['list', 'export', 'verify'])
    p.add_argument('dest', nargs='?')
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser('serve', help="run the JSON HTTP API")
    p.add_argument('--host', default=config.HOST)
    p.add_argument('--port', type=int, default=config.PORT)
    p.set_defaults(func=cmd_serve)
    return parser


def _attach_phase_values(argv):
    """'--phi2 -0.596pi' -> '--phi2=-0.596pi'; argparse reads a leading '-' as a flag."""
    out = []
    tokens = iter(argv)
    for tok in tokens:
        value = next(tokens, None) if tok in PHASE_FLAGS else None
        out.append(tok if value is None else f"{tok}={value}")
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(_attach_phase_values(argv))
    except SystemExit as e:
        return e.code
    args.argv = argv
    try:
        config.setup_logging(args.log_level)
        return args.func(args)
    except MultiportError as e:
        log.error("%s", e)
        return e.exit_code
    except ValueError as e:
        # invalid numeric input that slipped past argparse, e.g. a bad phase combination
        log.error("%s", e)
        return UsageError.exit_code


if __name__ == '__main__':
    sys.exit(main())
