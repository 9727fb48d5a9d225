"""
Forward model: single-photon amplitude distributions, two-photon coincidence
probabilities, HOM visibility matrices, delay scans and synthetic counts.

Visibility matrices are indexed [input pair][output pair] with both pair lists
in canonical order (0,1), (0,2), (1,2).
"""
import logging
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import curve_fit

from errors import EmptyInput, InvalidPorts
from multiport import TransferMatrix

log = logging.getLogger('Interference')

VIS_EPS = 1e-12
MODEL_SUM_TOL = 1e-6
MEASURED_SUM_TOL = 0.05
# 440 um coherence length read as the FWHM of a Gaussian envelope
DEFAULT_COHERENCE_SIGMA_UM = 440.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


def port_pairs(dim=3):
    return tuple(combinations(range(dim), 2))


def pair_label(pair):
    return f"{pair[0]}{pair[1]}"


def _check_ports(dim, i, j, k, l):
    for p in (i, j, k, l):
        if not 0 <= p < dim:
            raise InvalidPorts(f"port {p} out of range for a {dim}-mode device")
    if i == j:
        raise InvalidPorts(f"input ports must differ, got ({i},{j})")
    if k == l:
        raise InvalidPorts(f"output ports must differ, got ({k},{l})")


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

def stochastic_axis(probs):
    """'cols' if columns are closer to summing to 1 than rows, else 'rows'."""
    probs = np.asarray(probs, dtype=float)
    col_err = np.max(np.abs(probs.sum(axis=0) - 1.0))
    row_err = np.max(np.abs(probs.sum(axis=1) - 1.0))
    return 'cols' if col_err <= row_err else 'rows'


@dataclass(frozen=True)
class AmplitudeDistribution:
    """
    probs[k][i] = probability that a photon entering input i leaves output k.

    axis names the direction that sums to one: 'cols' (per input, as counts
    are normalised) or 'rows'. tolerance=None skips the sum check, used for
    distributions derived from non-unitary matrices.
    """
    probs: np.ndarray
    axis: str = 'cols'
    sigma: Optional[np.ndarray] = None
    tolerance: Optional[float] = MODEL_SUM_TOL

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"amplitude distribution must be square, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("amplitude distribution contains non-finite values")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("amplitude distribution entries must lie in [0, 1]")
        if self.axis not in ('cols', 'rows'):
            raise ValueError(f"axis must be 'cols' or 'rows', got {self.axis!r}")
        if self.tolerance is not None:
            sums = p.sum(axis=0 if self.axis == 'cols' else 1)
            worst = float(np.max(np.abs(sums - 1.0)))
            if worst > self.tolerance:
                raise ValueError(f"{self.axis} sum to 1 within {worst:.3g}, "
                                 f"tolerance is {self.tolerance:g}")
        p.setflags(write=False)
        object.__setattr__(self, 'probs', p)
        if self.sigma is not None:
            s = np.array(self.sigma, dtype=float)
            if s.shape != p.shape or np.any(s < 0):
                raise ValueError("sigma must match probs and be non-negative")
            s.setflags(write=False)
            object.__setattr__(self, 'sigma', s)

    @property
    def dim(self):
        return self.probs.shape[0]

    def normalized(self):
        """Renormalise along the declared axis, e.g. after adding noise."""
        p = np.clip(self.probs, 0.0, None)
        p = p / p.sum(axis=0 if self.axis == 'cols' else 1, keepdims=True)
        return AmplitudeDistribution(p, self.axis, self.sigma, self.tolerance)

    def transposed(self):
        return AmplitudeDistribution(
            self.probs.T, 'rows' if self.axis == 'cols' else 'cols',
            None if self.sigma is None else self.sigma.T, self.tolerance)


@dataclass(frozen=True)
class VisibilityMatrix:
    vals: np.ndarray
    sigma: Optional[np.ndarray] = None
    undefined: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.vals, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"visibility matrix must be square, got {v.shape}")
        if np.any(np.isnan(v)):
            raise ValueError("visibility matrix may not contain NaN")
        if np.any(np.abs(v) > 1 + 1e-9):
            raise ValueError("visibility values must lie in [-1, 1]")
        v.setflags(write=False)
        object.__setattr__(self, 'vals', v)
        und = np.zeros(v.shape, dtype=bool) if self.undefined is None \
            else np.array(self.undefined, dtype=bool)
        und.setflags(write=False)
        object.__setattr__(self, 'undefined', und)
        if self.sigma is not None:
            s = np.array(self.sigma, dtype=float)
            if s.shape != v.shape or np.any(s < 0):
                raise ValueError("sigma must match vals and be non-negative")
            s.setflags(write=False)
            object.__setattr__(self, 'sigma', s)

    @property
    def shape(self):
        return self.vals.shape

    @property
    def pairs(self):
        # P pairs of D modes: P = D(D-1)/2
        n_pairs = self.vals.shape[0]
        dim = int(round((1 + np.sqrt(1 + 8 * n_pairs)) / 2))
        return port_pairs(dim)

    def transposed(self):
        return VisibilityMatrix(self.vals.T,
                                None if self.sigma is None else self.sigma.T,
                                self.undefined.T)

    def with_sigma(self, sigma):
        return VisibilityMatrix(self.vals, sigma, self.undefined)


@dataclass(frozen=True)
class CountTable:
    """
    singles[i][k]: counts at output k for a single photon sent into input i.
    coincidences[((i, j), (k, l))] = (distinguishable, indistinguishable).
    """
    singles: np.ndarray
    coincidences: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.singles, dtype=np.int64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"singles must be square, got {s.shape}")
        if np.any(s < 0):
            raise ValueError("counts must be non-negative")
        s.setflags(write=False)
        object.__setattr__(self, 'singles', s)
        pairs = set(port_pairs(s.shape[0]))
        for (inp, out), (dist, indist) in self.coincidences.items():
            if tuple(inp) not in pairs or tuple(out) not in pairs:
                raise ValueError(f"coincidence key {inp}->{out} is not a canonical pair")
            if dist < 0 or indist < 0:
                raise ValueError("counts must be non-negative")

    @property
    def dim(self):
        return self.singles.shape[0]


@dataclass(frozen=True)
class FringeModel:
    coherence_sigma: float = DEFAULT_COHERENCE_SIGMA_UM
    rate: float = 1.0

    def __post_init__(self):
        if not self.coherence_sigma > 0:
            raise ValueError("coherence_sigma must be positive")
        if not self.rate > 0:
            raise ValueError("rate must be positive")


class Visibility(NamedTuple):
    value: float
    undefined: bool


class FringeFit(NamedTuple):
    visibility: float
    visibility_err: float
    width: float
    width_err: float
    baseline: float
    baseline_err: float
    center: float


# ---------------------------------------------------------------------------
# Single photons
# ---------------------------------------------------------------------------

def amplitude_distribution(u):
    probs = np.abs(u.entries) ** 2
    if u.unitary:
        return AmplitudeDistribution(probs, 'cols')
    return AmplitudeDistribution(probs, stochastic_axis(probs), tolerance=None)


def normalize_counts(c):
    """|u_ki|^2 = n_ki / sum_k n_ki, with binomial standard errors."""
    n = c.singles.astype(float)
    totals = n.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        raise EmptyInput(f"no single-photon counts recorded for input port {int(empty[0])}")
    p = (n / totals[:, None]).T
    sigma = np.sqrt(p * (1 - p) / totals[None, :])
    return AmplitudeDistribution(p, 'cols', sigma)


# ---------------------------------------------------------------------------
# Two photons
# ---------------------------------------------------------------------------

def coincidence_distinguishable(u, i, j, k, l):
    _check_ports(u.dim, i, j, k, l)
    m = u.entries
    return float(abs(m[k, i] * m[l, j]) ** 2 + abs(m[l, i] * m[k, j]) ** 2)


def coincidence_indistinguishable(u, i, j, k, l):
    _check_ports(u.dim, i, j, k, l)
    m = u.entries
    return float(abs(m[k, i] * m[l, j] + m[l, i] * m[k, j]) ** 2)


def visibility(c, q):
    """(C - Q) / C; zero with the undefined flag when C vanishes."""
    if c <= VIS_EPS:
        return Visibility(0.0, True)
    return Visibility((c - q) / c, False)


def _pair_index(dim):
    pairs = np.array(port_pairs(dim))
    i = pairs[:, 0][:, None]
    j = pairs[:, 1][:, None]
    k = pairs[:, 0][None, :]
    l = pairs[:, 1][None, :]
    return i, j, k, l


def coincidence_tables(m):
    """C and Q for every (input pair, output pair) at once."""
    m = np.asarray(m)
    i, j, k, l = _pair_index(m.shape[0])
    a = m[k, i] * m[l, j]
    b = m[l, i] * m[k, j]
    c = np.abs(a) ** 2 + np.abs(b) ** 2
    q = np.abs(a + b) ** 2
    return c, q


def visibility_values(m):
    """Raw visibility array and undefined mask for a complex matrix; the hot path of the solver."""
    c, q = coincidence_tables(m)
    undefined = c <= VIS_EPS
    safe = np.where(undefined, 1.0, c)
    return np.where(undefined, 0.0, (c - q) / safe), undefined


def visibility_matrix(u):
    vals, undefined = visibility_values(u.entries)
    return VisibilityMatrix(vals, undefined=undefined)


def permanent(m):
    m = np.asarray(m)
    n = m.shape[0]
    return sum(np.prod(m[np.arange(n), list(p)]) for p in permutations(range(n)))


def two_photon_distribution(u, i, j, distinguishable=False):
    """
    Output distribution for one photon in each of inputs i and j.

    Keys are output pairs (k, l) with k <= l; k == l are bunched events. For
    indistinguishable photons the probability is |perm(U_sub)|^2 / (n_k! n_l!),
    for distinguishable ones perm(|U_sub|^2) / (n_k! n_l!).
    """
    if i == j or not (0 <= i < u.dim and 0 <= j < u.dim):
        raise InvalidPorts(f"need two different input ports, got ({i},{j})")
    m = u.entries
    out = {}
    for k in range(u.dim):
        for l in range(k, u.dim):
            sub = m[np.ix_([k, l], [i, j])]
            norm = 2.0 if k == l else 1.0
            if distinguishable:
                p = permanent(np.abs(sub) ** 2).real
            else:
                p = abs(permanent(sub)) ** 2
            out[(k, l)] = float(p / norm)
    return out


# ---------------------------------------------------------------------------
# Delay scans
# ---------------------------------------------------------------------------

def _fringe_shape(delay, baseline, vis, width, center):
    return baseline * (1.0 - vis * np.exp(-(delay - center) ** 2 / (2.0 * width ** 2)))


def fringe(u, i, j, k, l, delays, fm):
    """Expected coincidences vs delay: rate * [C - (C - Q) * exp(-delay^2 / 2 sigma^2)]."""
    c = coincidence_distinguishable(u, i, j, k, l)
    q = coincidence_indistinguishable(u, i, j, k, l)
    d = np.asarray(delays, dtype=float)
    expected = fm.rate * (c - (c - q) * np.exp(-d ** 2 / (2.0 * fm.coherence_sigma ** 2)))
    return [(float(x), float(y)) for x, y in zip(d, expected)]


def fit_fringe(delays, counts, width_guess=DEFAULT_COHERENCE_SIGMA_UM):
    """Fit baseline * (1 - V * gaussian) to a delay scan; V > 0 is a dip, V < 0 a peak."""
    d = np.asarray(delays, dtype=float)
    n = np.asarray(counts, dtype=float)
    if d.size < 4:
        raise EmptyInput("a fringe fit needs at least 4 delay points")
    far = np.argsort(np.abs(d))[-max(2, d.size // 4):]
    baseline0 = float(np.mean(n[far])) or 1.0
    center_idx = int(np.argmax(np.abs(n - baseline0)))
    vis0 = 1.0 - n[center_idx] / baseline0
    p0 = (baseline0, vis0, width_guess, d[center_idx])
    popt, pcov = curve_fit(_fringe_shape, d, n, p0=p0,
                           sigma=np.sqrt(np.maximum(n, 1.0)), absolute_sigma=True,
                           maxfev=20000)
    err = np.sqrt(np.diag(pcov))
    return FringeFit(visibility=float(popt[1]), visibility_err=float(err[1]),
                     width=float(abs(popt[2])), width_err=float(err[2]),
                     baseline=float(popt[0]), baseline_err=float(err[0]),
                     center=float(popt[3]))


# ---------------------------------------------------------------------------
# Counts
# ---------------------------------------------------------------------------

def synth_counts(u, totals, seed, poisson=True):
    """
    Draw a CountTable from the model: singles with mean totals * |u_ki|^2,
    each coincidence rate independently with mean totals * C (or Q).
    """
    if totals <= 0:
        raise ValueError("totals must be positive")
    rng = np.random.default_rng(seed)

    def draw(mean):
        mean = np.asarray(mean, dtype=float)
        if poisson:
            return rng.poisson(mean)
        return np.rint(mean).astype(np.int64)

    singles = draw(totals * (np.abs(u.entries) ** 2).T)
    c, q = coincidence_tables(u.entries)
    pairs = port_pairs(u.dim)
    coinc = {}
    for r, inp in enumerate(pairs):
        for s, out in enumerate(pairs):
            coinc[(inp, out)] = (int(draw(totals * c[r, s])), int(draw(totals * q[r, s])))
    return CountTable(singles, coinc)


def visibility_from_counts(c):
    """Measured V = (N_dist - N_indist) / N_dist with Poisson errors."""
    pairs = port_pairs(c.dim)
    n = len(pairs)
    vals = np.zeros((n, n))
    sigma = np.zeros((n, n))
    undefined = np.zeros((n, n), dtype=bool)
    for r, inp in enumerate(pairs):
        for s, out in enumerate(pairs):
            if (inp, out) not in c.coincidences:
                undefined[r, s] = True
                continue
            dist, indist = (float(x) for x in c.coincidences[(inp, out)])
            vis = visibility(dist, indist)
            if vis.undefined:
                undefined[r, s] = True
                continue
            vals[r, s] = vis.value
            sigma[r, s] = np.sqrt(indist / dist ** 2 + indist ** 2 / dist ** 3)
    if np.any(np.abs(vals) > 1):
        log.warning("count noise pushed %d visibilities outside [-1, 1]; clipping",
                    int(np.sum(np.abs(vals) > 1)))
        vals = np.clip(vals, -1.0, 1.0)
    return VisibilityMatrix(vals, sigma, undefined)
