"""
Transfer-matrix algebra for directionally-biased and directionally-unbiased
linear-optical multiports.

Convention: entries[k][i] is the amplitude for a photon entering input port i
to leave from output port k (row = output, column = input).

Backward propagation through a tritter is the plain TRANSPOSE of its forward
matrix, not the conjugate transpose. Swapping the roles of input and output
ports of a reciprocal device transposes its transfer matrix.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from errors import DegenerateGauge, DimensionMismatch

log = logging.getLogger('Multiport')

UNITARY_TOL = 1e-9
GAUGE_EPS = 1e-12


def wrap_phase(phi):
    """Reduce phases to the canonical range (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), 2 * np.pi)


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    unitary: bool = False

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"transfer matrix must be square, got shape {m.shape}")
        if m.shape[0] < 2:
            raise DimensionMismatch("transfer matrix needs at least 2 modes")
        if not np.all(np.isfinite(m)):
            raise ValueError("transfer matrix entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, 'entries', m)
        if self.unitary:
            dev = unitarity_deviation(m)
            if dev > UNITARY_TOL:
                raise ValueError(f"matrix flagged unitary deviates by {dev:.3g}")

    @property
    def dim(self):
        return self.entries.shape[0]

    def __getitem__(self, idx):
        return self.entries[idx]

    def conj(self):
        return TransferMatrix(self.entries.conj(), unitary=self.unitary)

    def magnitudes(self):
        return np.abs(self.entries)

    def phases(self):
        return np.angle(self.entries)


@dataclass(frozen=True)
class PhaseShifts:
    """Mirror/arm phases; mode 0 is the fixed reference (phase 0)."""
    phi1: float = 0.0
    phi2: float = 0.0
    extra: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite([self.phi1, self.phi2, *self.extra])):
            raise ValueError("phase shifts must be finite")

    def as_array(self):
        return np.array([0.0, self.phi1, self.phi2, *self.extra], dtype=float)

    def reduced(self):
        w = wrap_phase([self.phi1, self.phi2, *self.extra])
        return PhaseShifts(float(w[0]), float(w[1]), tuple(float(x) for x in w[2:]))

    @classmethod
    def from_array(cls, phis):
        phis = [float(p) for p in phis]
        return cls(phis[0], phis[1], tuple(phis[2:]))


@dataclass(frozen=True)
class GaugePhases:
    """Output-side phases (left) and input-side phases (right, mode 0 excluded)."""
    left: tuple = field(default=(0.0, 0.0, 0.0))
    right: tuple = field(default=(0.0, 0.0))

    def left_matrix(self):
        return np.diag(np.exp(1j * np.asarray(self.left, dtype=float)))

    def right_matrix(self):
        return np.diag(np.exp(1j * np.concatenate(([0.0], np.asarray(self.right, dtype=float)))))


def unitarity_deviation(m):
    m = np.asarray(m.entries if isinstance(m, TransferMatrix) else m, dtype=complex)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def _check_same_dim(*mats):
    dims = {m.dim for m in mats}
    if len(dims) != 1:
        raise DimensionMismatch(f"matrices have different dimensions: {sorted(dims)}")


def ideal_tritter(dim=3):
    """The symmetric N-mode Fourier multiport; dim=3 is the ideal tritter."""
    w = np.exp(2j * np.pi / dim)
    k, i = np.indices((dim, dim))
    return TransferMatrix(w ** (k * i) / np.sqrt(dim), unitary=True)


def identity(dim=3):
    return TransferMatrix(np.eye(dim), unitary=True)


def phase_matrix(ph, dim=None):
    phis = ph.as_array()
    if dim is not None and dim != len(phis):
        raise DimensionMismatch(f"{len(phis) - 1} phase shifts given for a {dim}-mode device")
    return TransferMatrix(np.diag(np.exp(1j * phis)), unitary=True)


def backward(uf):
    """Transfer matrix of the same device traversed in reverse: U_B = U_F^T."""
    return TransferMatrix(uf.entries.T, unitary=uf.unitary)


def compose_general(ub, ph, uf):
    """W = U_B . Phi . U_F for independently characterised forward/backward passes."""
    _check_same_dim(ub, uf)
    phi = phase_matrix(ph, dim=uf.dim)
    return TransferMatrix(ub.entries @ phi.entries @ uf.entries,
                          unitary=ub.unitary and uf.unitary)


def compose_biased(uf, ph):
    """Expanded Mach-Zehnder: two identical tritters around a phase section."""
    return compose_general(uf, ph, uf)


def compose_unbiased(uf, ph):
    """Expanded Michelson: tritter, mirrors, then the same tritter backwards."""
    return compose_general(backward(uf), ph, uf)


def fidelity(a, b):
    """|Tr(a^dagger b)| / dim."""
    _check_same_dim(a, b)
    return float(np.abs(np.sum(a.entries.conj() * b.entries)) / a.dim)


def real_border(u):
    """
    Gauge-fix u so that row 0 and column 0 are real and non-negative.

    Returns (W, gauge) with W = diag(e^{i left}) . u . diag(1, e^{i right}).
    Diagonal phase matrices on either side leave amplitude distributions and
    HOM visibilities unchanged, so W describes the same device as u.
    """
    m = u.entries
    n = u.dim
    for r in range(n):
        if abs(m[r, 0]) < GAUGE_EPS:
            raise DegenerateGauge(r, 0, abs(m[r, 0]))
    for c in range(1, n):
        if abs(m[0, c]) < GAUGE_EPS:
            raise DegenerateGauge(0, c, abs(m[0, c]))

    left = -np.angle(m[:, 0])
    right = -np.angle(m[0, 1:]) - left[0]
    gauge = GaugePhases(tuple(float(x) for x in left), tuple(float(x) for x in right))
    w = gauge.left_matrix() @ m @ gauge.right_matrix()
    # border is real by construction; drop the rounding residue
    w[0, :] = np.abs(w[0, :])
    w[:, 0] = np.abs(w[:, 0])
    return TransferMatrix(w), gauge


def random_unitary(dim, seed):
    """Haar-random unitary from QR of a complex Ginibre matrix, deterministic per seed."""
    if dim < 2:
        raise DimensionMismatch("random_unitary needs dim >= 2")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = qr(z)
    d = np.diag(r)
    q = q * (d / np.abs(d))
    return TransferMatrix(q, unitary=True)
