"""
Inverse problem: recover a 3x3 transfer matrix from HOM visibilities and
single-photon amplitude distributions.

Direct reconstruction searches the real-bordered form

    | |u00|  |u01|            |u02|           |
    | |u10|  |u11| e^{i a}    |u12| e^{i b}   |
    | |u20|  |u21| e^{i c}    |u22| e^{i d}   |

in two stages: the four phases with magnitudes pinned to sqrt(amplitude
distribution), then all thirteen parameters from the best phase fit.
Composed reconstruction fits only the two mirror phases of W = U_B Phi U_F
and keeps every distinct local minimum it visits.

Visibilities and amplitudes cannot tell U from conj(U); results report which
branch matched a reference instead of silently picking one.

A fit is converged when its objective is at most 100 * ftol. For data that
carry error bars the search also counts as converged once at least two
independent starts land on the same best objective.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize

import config
from errors import DegenerateGauge, DimensionMismatch, NonConvergence, UncertaintyFailure
from interference import (AmplitudeDistribution, VisibilityMatrix, visibility_matrix,
                          visibility_values)
from multiport import (PhaseShifts, TransferMatrix, compose_general, fidelity,
                       real_border, wrap_phase)

log = logging.getLogger('Reconstruct')

STAGES = ('phases_only', 'full', 'both')
WEIGHTINGS = ('auto', 'sigma', 'none')
PHASE_LATTICE = (-2 * np.pi / 3, 0.0, 2 * np.pi / 3)
COMPOSED_GRID = 24
# objectives within this relative distance of the best count as the same minimum
AGREE_RTOL = 1e-3
# largest |u|^2 change stage 2 may make away from the measured amplitudes
AMP_DRIFT_TOL = 0.05
_INNER = (slice(1, None), slice(1, None))


@dataclass(frozen=True)
class RealBorderedParams:
    mags: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        m = np.array(self.mags, dtype=float).reshape(3, 3)
        p = np.array(self.phases, dtype=float).reshape(4)
        if np.any(m < 0):
            raise ValueError("magnitudes must be non-negative")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(p))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, 'mags', m)
        object.__setattr__(self, 'phases', p)


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 64
    max_iters: int = 2000
    ftol: float = 1e-10
    seed: int = 0
    stage: str = 'both'
    workers: int = 1
    refine_top: int = 1
    lattice: bool = True
    # 'auto' weights composed fits by 1/sigma^2 when the target has error bars
    weighting: str = 'auto'

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.ftol > 0:
            raise ValueError("ftol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if self.workers < 1 or self.refine_top < 1:
            raise ValueError("workers and refine_top must be >= 1")

    @classmethod
    def from_env(cls, **overrides):
        base = cls(restarts=config.RESTARTS, max_iters=config.MAX_ITERS,
                   ftol=config.FTOL, seed=config.SEED, workers=config.WORKERS,
                   refine_top=config.REFINE_TOP, weighting=config.WEIGHTING)
        return replace(base, **{k: v for k, v in overrides.items() if v is not None})


@dataclass(frozen=True)
class ReconstructionResult:
    matrix: TransferMatrix
    objective: float
    similarity: float
    restarts_used: int
    converged: bool
    sigma: Optional[dict] = None
    conjugated: Optional[bool] = None
    n_used: int = 9
    stage1_objective: Optional[float] = None
    history: tuple = ()
    phases: Optional[PhaseShifts] = None
    chi2: Optional[float] = None
    minima: tuple = ()


class GaugeComparison(NamedTuple):
    fidelity: float
    conjugated: bool


class LocalMinimum(NamedTuple):
    phases: PhaseShifts
    objective: float
    chi2: Optional[float]


@dataclass(frozen=True)
class UncertaintyEstimate:
    result: ReconstructionResult
    mag_sigma: np.ndarray
    phase_sigma: np.ndarray
    samples: int
    failures: int
    phi_sigma: Optional[tuple] = None


# ---------------------------------------------------------------------------
# Parametrisation and metrics
# ---------------------------------------------------------------------------

def _assemble(mags, phases):
    ph = np.zeros((3, 3))
    ph[_INNER] = np.reshape(phases, (2, 2))
    return mags * np.exp(1j * ph)


def params_to_matrix(p):
    return TransferMatrix(_assemble(p.mags, p.phases))


def matrix_to_params(u):
    if u.dim != 3:
        raise DimensionMismatch("the real-bordered parametrisation is 3x3 only")
    w, _ = real_border(u)
    return RealBorderedParams(np.abs(w.entries), np.angle(w.entries[_INNER]).ravel())


def _target_arrays(target):
    mask = ~target.undefined
    return np.asarray(target.vals), mask


def _has_errors(target, mask):
    return target.sigma is not None and bool(np.all(target.sigma[mask] > 0))


def _weights(target, mask, enabled):
    """1/sigma^2 over the defined entries, or None for a plain sum of squares."""
    if not enabled or target.sigma is None:
        return None
    s = target.sigma[mask]
    if np.any(s <= 0):
        log.debug("zero sigma on a defined visibility; fitting unweighted")
        return None
    w = np.ones(target.shape)
    w[mask] = 1.0 / s ** 2
    return w


def _sq_distance(m, t_vals, mask, w=None):
    v, _ = visibility_values(m)
    d2 = ((v - t_vals)[mask]) ** 2
    if w is not None:
        d2 = d2 * w[mask]
    return float(np.sum(d2))


def rms_objective(p, target):
    """Sum of squared visibility differences over the target's defined entries."""
    t_vals, mask = _target_arrays(target)
    return _sq_distance(_assemble(p.mags, p.phases), t_vals, mask)


def similarity(a, b):
    """1 - sum|a - b| / (2 * entries); 1 is a perfect overlap, 0 full anti-correlation."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"visibility matrices differ in shape: {a.shape} vs {b.shape}")
    return float(1.0 - np.sum(np.abs(a.vals - b.vals)) / (2.0 * a.vals.size))


def compare_up_to_gauge(a, b):
    """Fidelity after real-bordering both, maximised over b and conj(b)."""
    ra, _ = real_border(a)
    rb, _ = real_border(b)
    direct = fidelity(ra, rb)
    twin = fidelity(ra, rb.conj())
    if twin > direct:
        return GaugeComparison(twin, True)
    return GaugeComparison(direct, False)


def _agreeing(objs, best, cfg):
    tol = 100 * cfg.ftol + AGREE_RTOL * abs(best)
    return sum(1 for o in objs if abs(o - best) <= tol)


def _is_converged(objective, search, cfg, noisy):
    """
    objective is the plain sum of squares of the final fit; search holds what
    every start of the multistart stage reached.
    """
    if objective <= 100 * cfg.ftol:
        return True
    return noisy and _agreeing(search, min(search), cfg) >= 2


def _border(u):
    """Real-bordered form, or u itself when a border entry vanishes."""
    try:
        return real_border(u)[0]
    except DegenerateGauge as e:
        log.info("keeping the unbordered matrix: %s", e)
        return u


# ---------------------------------------------------------------------------
# Direct reconstruction
# ---------------------------------------------------------------------------

def _normalise(mags, axis):
    mags = np.abs(np.reshape(mags, (3, 3)))
    norm = np.linalg.norm(mags, axis=0 if axis == 'cols' else 1, keepdims=True)
    return mags / np.maximum(norm, 1e-15)


def _phase_starts(cfg):
    starts = []
    if cfg.lattice:
        starts.extend(np.array(p) for p in product(PHASE_LATTICE, repeat=4))
    for r in range(cfg.restarts):
        rng = np.random.default_rng((cfg.seed, r))
        starts.append(rng.uniform(-np.pi, np.pi, size=4))
    return starts


def _run_pool(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _nelder_mead(f, x0, cfg):
    # the 13-parameter refinement gets a proportionally larger budget
    iters = cfg.max_iters * (1 if len(x0) <= 4 else 5)
    return minimize(f, x0, method='Nelder-Mead',
                    options={'maxiter': iters, 'maxfev': 2 * iters,
                             'xatol': 1e-7, 'fatol': cfg.ftol, 'adaptive': len(x0) > 4})


def _stage_phases(mags, t_vals, mask, w, cfg, x0):
    res = _nelder_mead(lambda x: _sq_distance(_assemble(mags, x), t_vals, mask, w), x0, cfg)
    return float(res.fun), wrap_phase(res.x)


def _stage_full(mags0, phases0, axis, t_vals, mask, w, cfg):
    def f(x):
        return _sq_distance(_assemble(_normalise(x[:9], axis), x[9:]), t_vals, mask, w)

    res = _nelder_mead(f, np.concatenate((np.ravel(mags0), phases0)), cfg)
    return float(res.fun), _normalise(res.x[:9], axis), wrap_phase(res.x[9:])


def _drift_limit(amp):
    if amp.sigma is None:
        return AMP_DRIFT_TOL
    return max(AMP_DRIFT_TOL, 3.0 * float(np.max(amp.sigma)))


def _distinct(cands, top):
    """Best candidates whose phases differ by more than 1e-3 rad."""
    picked = []
    for c in sorted(cands, key=lambda c: c[0]):
        if all(np.max(np.abs(wrap_phase(c[1] - p[1]))) > 1e-3 for p in picked):
            picked.append(c)
        if len(picked) == top:
            break
    return picked


def reconstruct_direct(target, amp, cfg=None, reference=None):
    """
    Fit a real-bordered matrix to a visibility matrix and amplitude distribution.

    Stage 1 pins |u| = sqrt(amp) and searches the four phases from every start
    (the 3^4 tritter lattice plus cfg.restarts seeded random points). Stage 2
    frees all parameters, renormalising |u|^2 along amp.axis, starting from the
    cfg.refine_top best distinct stage-1 fits (1 by default). A stage-2 fit
    replaces the stage-1 fit only if it lowers the objective and every |u|^2
    stays within the amplitude tolerance of the measured distribution.
    """
    cfg = cfg or OptimizerConfig()
    if target.shape != (3, 3) or amp.dim != 3:
        raise DimensionMismatch("reconstruction is implemented for 3x3 multiports")
    t_vals, mask = _target_arrays(target)
    n_used = int(mask.sum())
    mags0 = _normalise(np.sqrt(np.clip(amp.probs, 0.0, None)), amp.axis)

    if n_used == 0:
        log.warning("target has no defined visibilities; nothing to fit")
        matrix = TransferMatrix(_assemble(mags0, np.zeros(4)))
        return ReconstructionResult(matrix, 0.0, similarity(visibility_matrix(matrix), target),
                                    0, False, n_used=0)

    w = _weights(target, mask, cfg.weighting == 'sigma')
    noisy = _has_errors(target, mask)
    starts = _phase_starts(cfg)
    history = []
    best_so_far = np.inf

    if cfg.stage == 'full':
        runs = _run_pool(lambda x0: _stage_full(mags0, x0, amp.axis, t_vals, mask, w, cfg),
                         starts, cfg.workers)
        for r in runs:
            best_so_far = min(best_so_far, r[0])
            history.append(best_so_far)
        fit, mags, phases = min(runs, key=lambda r: r[0])
        search = [r[0] for r in runs]
        stage1 = None
    else:
        fits = _run_pool(lambda x0: _stage_phases(mags0, t_vals, mask, w, cfg, x0),
                         starts, cfg.workers)
        for r in fits:
            best_so_far = min(best_so_far, r[0])
            history.append(best_so_far)
        fit, phases = min(fits, key=lambda f: f[0])
        search = [f[0] for f in fits]
        stage1 = fit
        mags = mags0
        log.debug("stage 1: best of %d starts %.3e", len(fits), stage1)
        if cfg.stage == 'both':
            refined = _run_pool(
                lambda c: _stage_full(mags0, c[1], amp.axis, t_vals, mask, w, cfg),
                _distinct(fits, cfg.refine_top), cfg.workers)
            limit = _drift_limit(amp)
            for r in refined:
                drift = float(np.max(np.abs(r[1] ** 2 - mags0 ** 2)))
                if drift > limit:
                    log.debug("stage 2 candidate rejected: |u|^2 moved by %.3f", drift)
                    continue
                best_so_far = min(best_so_far, r[0])
                history.append(best_so_far)
                if r[0] <= fit:
                    fit, mags, phases = r

    # non-negative magnitudes with phases only in the inner block: already real-bordered
    matrix = TransferMatrix(_assemble(mags, phases))
    obj = _sq_distance(matrix.entries, t_vals, mask)
    converged = _is_converged(obj, search, cfg, noisy)
    sim = similarity(visibility_matrix(matrix), target)
    conjugated = None
    if reference is not None:
        conjugated = compare_up_to_gauge(reference, matrix).conjugated
    log.info("direct reconstruction: objective %.4g, similarity %.4f over %d starts",
             obj, sim, len(starts))
    if not converged:
        log.warning("direct reconstruction did not converge (objective %.3g)", obj)
    return ReconstructionResult(matrix, obj, sim, len(starts), converged,
                                conjugated=conjugated, n_used=n_used,
                                stage1_objective=stage1, history=tuple(history),
                                chi2=None if w is None else fit)


# ---------------------------------------------------------------------------
# Composed reconstruction
# ---------------------------------------------------------------------------

def _composed_grid():
    step = 2 * np.pi / COMPOSED_GRID
    return -np.pi + step * np.arange(1, COMPOSED_GRID + 1)


def _mirror_objective(uf, ub, t_vals, mask, w):
    f_m, b_m = uf.entries, ub.entries

    def rms2(x):
        w0 = b_m @ np.diag(np.exp(1j * np.array([0.0, x[0], x[1]]))) @ f_m
        return _sq_distance(w0, t_vals, mask, w)

    return rms2


def _grid_seeds(scores, top):
    """Grid local minima (periodic), the best point's neighbours and the top points."""
    n = scores.shape[0]
    picked = set()
    for a in range(n):
        for b in range(n):
            around = [scores[(a + da) % n, (b + db) % n]
                      for da in (-1, 0, 1) for db in (-1, 0, 1) if da or db]
            if scores[a, b] <= min(around):
                picked.add((a, b))
    order = np.argsort(scores, axis=None)
    a0, b0 = (int(x) for x in np.unravel_index(order[0], scores.shape))
    picked.update(((a0 + da) % n, (b0 + db) % n) for da in (-1, 0, 1) for db in (-1, 0, 1))
    picked.update(tuple(int(x) for x in np.unravel_index(k, scores.shape)) for k in order[:top])
    return sorted(picked, key=lambda ab: scores[ab])


def _local_minima(runs, plain):
    """Distinct refined minima, best first."""
    out = []
    for fun, x in sorted(runs, key=lambda r: r[0]):
        if all(np.max(np.abs(wrap_phase(x - (m.phases.phi1, m.phases.phi2)))) > 1e-2 for m in out):
            ph = PhaseShifts(float(x[0]), float(x[1]))
            out.append(LocalMinimum(ph, plain(x), fun))
    return out


def reconstruct_composed(uf, ub, target, cfg=None):
    """
    Fit the mirror phases of W = U_B Phi U_F to a visibility matrix.

    A 24x24 grid over (-pi, pi]^2 seeds Nelder-Mead from every grid local
    minimum, the neighbours of the best grid point and the cfg.refine_top best
    points, then restarts four times around the best fit. With weighting
    'auto' or 'sigma' and error bars on the target, residuals are weighted by
    1/sigma^2. Returns (phases, real-bordered W, result); result.minima ranks the
    distinct local minima found.
    """
    cfg = cfg or OptimizerConfig()
    if uf.dim != 3 or ub.dim != 3 or target.shape != (3, 3):
        raise DimensionMismatch("composed reconstruction is implemented for 3x3 multiports")
    t_vals, mask = _target_arrays(target)
    n_used = int(mask.sum())

    if n_used == 0:
        log.warning("target has no defined visibilities; mirror phases are unconstrained")
        ph = PhaseShifts(0.0, 0.0)
        w = _border(compose_general(ub, ph, uf))
        return ph, w, ReconstructionResult(w, 0.0, similarity(visibility_matrix(w), target),
                                           0, False, n_used=0, phases=ph)

    weights = _weights(target, mask, cfg.weighting in ('auto', 'sigma'))
    noisy = _has_errors(target, mask)
    rms2 = _mirror_objective(uf, ub, t_vals, mask, weights)
    plain = rms2 if weights is None else _mirror_objective(uf, ub, t_vals, mask, None)

    grid = _composed_grid()
    scores = np.array([[rms2((a, b)) for b in grid] for a in grid])
    seeds = [np.array((grid[a], grid[b])) for a, b in _grid_seeds(scores, cfg.refine_top)]
    fits = _run_pool(lambda x0: _nelder_mead(rms2, x0, cfg), seeds, cfg.workers)
    runs = [(float(r.fun), wrap_phase(r.x)) for r in fits]
    # restart around the best fit, half a grid step off on each diagonal
    top = min(runs, key=lambda r: r[0])[1]
    half = np.pi / COMPOSED_GRID
    around = [top + (da * half, db * half) for da in (-1, 1) for db in (-1, 1)]
    runs += [(float(r.fun), wrap_phase(r.x))
             for r in _run_pool(lambda x0: _nelder_mead(rms2, x0, cfg), around, cfg.workers)]

    history = []
    best_so_far = float(scores.min())
    for fun, _ in runs:
        best_so_far = min(best_so_far, fun)
        history.append(best_so_far)
    minima = _local_minima(runs, plain)
    best = minima[0]
    ph = best.phases
    w = _border(compose_general(ub, ph, uf))
    converged = _is_converged(best.objective, [r[0] for r in runs], cfg, noisy)
    sim = similarity(visibility_matrix(w), target)
    log.info("composed reconstruction: phi = (%.3f pi, %.3f pi), RMS2 %.4g, similarity %.4f, "
             "%d distinct minima", ph.phi1 / np.pi, ph.phi2 / np.pi, best.objective, sim,
             len(minima))
    chi2 = None if weights is None else best.chi2
    minima = tuple(m._replace(chi2=None) if weights is None else m for m in minima)
    return ph, w, ReconstructionResult(w, best.objective, sim, len(runs), converged,
                                       n_used=n_used, history=tuple(history), phases=ph,
                                       chi2=chi2, minima=minima)


def require_converged(result):
    """Raise NonConvergence for callers that treat it as fatal (--strict)."""
    if not result.converged:
        raise NonConvergence(f"solver did not converge (objective {result.objective:.3g})",
                             result)
    return result


# ---------------------------------------------------------------------------
# Monte-Carlo uncertainty
# ---------------------------------------------------------------------------

def _circular_std(phases, axis=0):
    r = np.abs(np.mean(np.exp(1j * np.asarray(phases)), axis=axis))
    return np.sqrt(-2.0 * np.log(np.clip(r, 1e-300, 1.0)))


def _perturb_target(target, rng):
    noisy = np.clip(target.vals + rng.normal(0.0, 1.0, target.shape) * target.sigma, -1.0, 1.0)
    return VisibilityMatrix(noisy, target.sigma, target.undefined)


def _perturb_amp(amp, rng):
    noisy = np.clip(amp.probs + rng.normal(0.0, 1.0, amp.probs.shape) * amp.sigma, 0.0, 1.0)
    return AmplitudeDistribution(noisy, amp.axis, amp.sigma, tolerance=None).normalized()


def _check_mc_inputs(target, samples, amp=None):
    if samples < 10:
        raise ValueError("uncertainty estimation needs at least 10 samples")
    if target.sigma is None or (amp is not None and amp.sigma is None):
        raise ValueError("uncertainty estimation needs sigma on every input")


def estimate_uncertainty(target, amp, cfg=None, samples=200):
    """
    Propagate the stated input errors by Monte Carlo: perturb every visibility
    and amplitude entry with Gaussian noise of its sigma, re-run the direct
    reconstruction and report per-entry spreads of the real-bordered results.
    Each sample is aligned to the unperturbed fit's conjugation branch first.
    """
    cfg = cfg or OptimizerConfig()
    _check_mc_inputs(target, samples, amp)
    baseline = reconstruct_direct(target, amp, cfg)
    inner = replace(cfg, workers=1)

    def one(s):
        rng = np.random.default_rng((cfg.seed, 104729, s))
        res = reconstruct_direct(_perturb_target(target, rng), _perturb_amp(amp, rng), inner)
        m = res.matrix
        if fidelity(baseline.matrix, m.conj()) > fidelity(baseline.matrix, m):
            m = m.conj()
        return res.converged, m.entries

    runs = _run_pool(one, range(samples), cfg.workers)
    failures = sum(1 for ok, _ in runs if not ok)
    if failures > samples / 2:
        raise UncertaintyFailure(f"{failures} of {samples} Monte-Carlo samples did not converge")
    mats = np.array([m for ok, m in runs if ok])
    mag_sigma = np.std(np.abs(mats), axis=0, ddof=1)
    phase_sigma = _circular_std(np.angle(mats))
    log.info("uncertainty: %d samples, %d failures, max |u| sigma %.3g",
             samples, failures, float(mag_sigma.max()))
    result = replace(baseline, sigma={'magnitude': mag_sigma, 'phase': phase_sigma})
    return UncertaintyEstimate(result, mag_sigma, phase_sigma, samples, failures)


def estimate_composed_uncertainty(uf, ub, target, cfg=None, samples=200):
    """
    Monte-Carlo spread of the fitted mirror phases and of W from visibility noise.

    Each perturbed sample is refit locally from the unperturbed phases, so the
    spread describes the basin the fit sits in. A sample fails when
    Nelder-Mead runs out of iterations.
    """
    cfg = cfg or OptimizerConfig()
    _check_mc_inputs(target, samples)
    base_ph, _, baseline = reconstruct_composed(uf, ub, target, cfg)
    x0 = np.array((base_ph.phi1, base_ph.phi2))
    weighted = cfg.weighting in ('auto', 'sigma')

    def one(s):
        rng = np.random.default_rng((cfg.seed, 130363, s))
        noisy = _perturb_target(target, rng)
        t_vals, mask = _target_arrays(noisy)
        rms2 = _mirror_objective(uf, ub, t_vals, mask, _weights(noisy, mask, weighted))
        res = _nelder_mead(rms2, x0, cfg)
        phi = wrap_phase(res.x)
        w = _border(compose_general(ub, PhaseShifts(float(phi[0]), float(phi[1])), uf))
        return bool(res.success), phi, w.entries

    runs = _run_pool(one, range(samples), cfg.workers)
    failures = sum(1 for ok, _, _ in runs if not ok)
    if failures > samples / 2:
        raise UncertaintyFailure(f"{failures} of {samples} Monte-Carlo samples did not converge")
    phis = np.array([p for ok, p, _ in runs if ok])
    mats = np.array([m for ok, _, m in runs if ok])
    mag_sigma = np.std(np.abs(mats), axis=0, ddof=1)
    phase_sigma = _circular_std(np.angle(mats))
    phi_sigma = tuple(float(x) for x in _circular_std(phis))
    log.info("composed uncertainty: %d samples, %d failures, phi sigma (%.3f pi, %.3f pi)",
             samples, failures, phi_sigma[0] / np.pi, phi_sigma[1] / np.pi)
    result = replace(baseline, sigma={'magnitude': mag_sigma, 'phase': phase_sigma})
    return UncertaintyEstimate(result, mag_sigma, phase_sigma, samples, failures,
                               phi_sigma=phi_sigma)
