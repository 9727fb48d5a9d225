"""
Bundled experimental tables: the measured and reconstructed matrices of the
fiber tritter multiport, stored with the printed three-digit precision.

Fixture files live in fixtures/ (MULTIPORT_FIXTURES_DIR overrides). Each file
is pinned to a sha256 digest so silent edits are caught by `verify()`.
"""
import logging
import os
import shutil
from dataclasses import dataclass

import numpy as np

import config
import dataio
from errors import DataFormatError, UsageError

log = logging.getLogger('Fixtures')

FIXTURE_PREFIX = 'fixture:'


@dataclass(frozen=True)
class FixtureInfo:
    name: str
    kind: str          # matrix | visibility | amplitude | phases
    group: str
    description: str
    sha256: str
    note: str = ''


CATALOG = {f.name: f for f in (
    FixtureInfo('v_m', 'visibility', 'multiport/measured', 'measured HOM visibilities of the unbiased multiport',
                'abe9a2cd3337ce43e50e8cc82304adb8012ec5565221e114b3c5c9987f78bf48'),
    FixtureInfo('u_m', 'amplitude', 'multiport/measured', 'measured amplitude distribution of the unbiased multiport',
                '628cdaeca554a16c272d39038a8a8635789d2bb18b69d4f9f0f01d6c245eb482'),
    FixtureInfo('v', 'matrix', 'multiport/direct fit', 'directly reconstructed transfer matrix V',
                'ed9395a14f3ea187e696e022d94db037d6142a3cb39744ea4ca043ced8930b05'),
    FixtureInfo('u_f', 'matrix', 'tritter/forward', 'forward tritter U_F',
                'be1cd0b9bcf8ddc63d6a913fa0e07e645809599956a178d40fccebcea950874d'),
    FixtureInfo('u_b', 'matrix', 'tritter/backward', 'backward tritter U_B',
                '33254da4bc0d3606ce50f982643da3adc647636683f773708f6883956d30e8f7'),
    FixtureInfo('w', 'matrix', 'multiport/composed', 'composed matrix W = U_B Phi U_F, real-bordered',
                'a751626731293af2d579eb1b967d506342f04a7278d8a720898d6478943e6de6',
                note='W[1][1] phase stored as +0.407pi; printed -0.407pi disagrees with '
                     'U_B Phi U_F (+0.409pi), F(V,W)=0.971 and S_MW=0.972'),
    FixtureInfo('w_printed', 'matrix', 'multiport/composed', 'W exactly as printed',
                'b06440d143ede6d2526e091219b03e082e38f70014caefbe473bac63645a79d5',
                note='keeps the printed W[1][1] phase sign; see w'),
    FixtureInfo('v_f', 'visibility', 'tritter/forward', 'measured visibilities, tritter forward',
                '0fe5a70e217b2f0480c614ed4ae9be7bb4e356f78522de7225cac9a4c0b6752e'),
    FixtureInfo('u_f2', 'amplitude', 'tritter/forward', 'measured amplitude distribution, tritter forward',
                '5d689a783ad06d443843283795c4695c26ddfb0a14ed50e5db68f4965513c8f7'),
    FixtureInfo('v_b', 'visibility', 'tritter/backward', 'measured visibilities, tritter backward',
                '4d502d02fb96ed3811b282fc11d870660d46d3251f6dbf7d9f0d8230ce7c5fad'),
    FixtureInfo('u_b2', 'amplitude', 'tritter/backward', 'measured amplitude distribution, tritter backward',
                '39bcf9b28f9eec7d1e42cef94e2ed04be9d4bcb0e34774b657cb1a4de8fe12e6'),
    FixtureInfo('phases', 'phases', 'multiport/composed', 'fitted mirror phases [phi1, phi2]',
                '3d5f80339970a32a3786762c488c6f5244c0a946f4e0eb9ddf8478ccf1dfced0'),
)}


class FixtureSet:
    def __init__(self, directory=None):
        self.directory = directory or config.FIXTURES_DIR
        self._cache = {}

    def path(self, name):
        if name not in CATALOG:
            raise UsageError(f"unknown fixture {name!r}; known: {', '.join(CATALOG)}")
        return os.path.join(self.directory, f"{name}.json")

    def _load(self, name, kind, loader):
        info = CATALOG.get(name)
        if info is not None and info.kind != kind:
            raise UsageError(f"fixture {name!r} is a {info.kind}, not a {kind}")
        if name not in self._cache:
            self._cache[name] = loader(self.path(name))
        return self._cache[name]

    def matrix(self, name):
        return self._load(name, 'matrix', dataio.load_matrix)

    def visibility(self, name):
        return self._load(name, 'visibility', dataio.load_visibility)

    def amplitude(self, name):
        return self._load(name, 'amplitude', dataio.load_amplitude)

    def phases(self):
        """(PhaseShifts, (sigma_phi1, sigma_phi2)) in radians."""
        obj = self._load('phases', 'phases', dataio.read_json)
        sig = obj.get('sigma', {})
        return (dataio.phases_from_json(obj),
                (dataio.parse_phase(sig.get('phi1', 0)), dataio.parse_phase(sig.get('phi2', 0))))

    def matrix_sigma(self, name):
        """Printed standard deviations as (magnitude, phase in radians) arrays."""
        sig = dataio.read_json(self.path(name)).get('sigma')
        if sig is None:
            return None
        return np.array(sig['magnitude'], dtype=float), np.pi * np.array(sig['phase_pi'], dtype=float)

    def load(self, name):
        kind = CATALOG[name].kind if name in CATALOG else None
        if kind == 'matrix':
            return self.matrix(name)
        if kind == 'visibility':
            return self.visibility(name)
        if kind == 'amplitude':
            return self.amplitude(name)
        if kind == 'phases':
            return self.phases()
        raise UsageError(f"unknown fixture {name!r}")

    def verify(self):
        """Check digests and re-validate every fixture; returns a list of problems."""
        problems = []
        for name, info in CATALOG.items():
            try:
                digest = dataio.file_digest(self.path(name))
                if digest != info.sha256:
                    problems.append(f"{name}: digest {digest[:12]}... does not match the catalog")
                    continue
                self.load(name)
            except (DataFormatError, ValueError) as e:
                problems.append(f"{name}: {e}")
        for p in problems:
            log.warning(p)
        return problems

    def listing(self):
        return [{'name': f.name, 'kind': f.kind, 'group': f.group,
                 'file': f"{f.name}.json", 'description': f.description, 'note': f.note}
                for f in CATALOG.values()]

    def export(self, dest):
        os.makedirs(dest, exist_ok=True)
        for name in CATALOG:
            shutil.copyfile(self.path(name), os.path.join(dest, f"{name}.json"))
        log.info("exported %d fixtures to %s", len(CATALOG), dest)


def resolve(ref, fixtures=None):
    """Map 'fixture:<name>' to its bundled file; other references are paths."""
    if ref is not None and str(ref).startswith(FIXTURE_PREFIX):
        return (fixtures or FixtureSet()).path(str(ref)[len(FIXTURE_PREFIX):])
    return ref
