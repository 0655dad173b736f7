"""Polarization and qudit state algebra.

Jones vectors live in the (H, V) frame with
``|sigma+> = (1, i)/sqrt2`` and ``|sigma-> = (1, -i)/sqrt2``.

Qudit slots in the ``circ-oam`` basis::

    |1> = |sigma+, l=0>    |2> = |sigma-, l=0>
    |3> = |sigma+, l=-2>   |4> = |sigma-, l=+2>

and in the ``lin-hb`` basis ``|1~> = |H>|HB20>, |2~> = |V>|HB11>,
|3~> = |H>|HB11>, |4~> = |V>|HB02>``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ValidityError

log = logging.getLogger(__name__)

SQ2 = math.sqrt(2.0)
BASES = ("circ-oam", "lin-hb")

# (polarization, OAM charge) carried by each circ-oam slot.
CIRC_SLOTS = (("sigma+", 0), ("sigma-", 0), ("sigma+", -2), ("sigma-", 2))
LIN_HB_SLOTS = (("H", "HB20"), ("V", "HB11"), ("H", "HB11"), ("V", "HB02"))

_JONES = {
    "H": (1.0, 0.0),
    "V": (0.0, 1.0),
    "D": (1 / SQ2, 1 / SQ2),
    "A": (1 / SQ2, -1 / SQ2),
    "sigma+": (1 / SQ2, 1j / SQ2),
    "sigma-": (1 / SQ2, -1j / SQ2),
}


@dataclass(frozen=True)
class JonesVector:
    c_H: complex
    c_V: complex
    name: str = ""

    def __post_init__(self):
        nrm = abs(self.c_H) ** 2 + abs(self.c_V) ** 2
        if abs(nrm - 1.0) > 1e-12:
            raise ValidityError(f"Jones vector not normalized (|c|^2 = {nrm!r})")

    @classmethod
    def from_array(cls, v, name="", renormalize=False):
        v = np.asarray(v, dtype=complex)
        if renormalize:
            v = v / np.linalg.norm(v)
        return cls(complex(v[0]), complex(v[1]), name)

    def as_array(self) -> np.ndarray:
        return np.array([self.c_H, self.c_V], dtype=complex)

    def circular(self) -> np.ndarray:
        """Amplitudes over ``(sigma+, sigma-)``."""
        return circular_coeffs(self)


def polarization(name: str) -> JonesVector:
    try:
        c_h, c_v = _JONES[name]
    except KeyError:
        raise InputError(f"unknown polarization {name!r}; expected one of {sorted(_JONES)}") from None
    return JonesVector(complex(c_h), complex(c_v), name)


def circular_coeffs(p: JonesVector) -> np.ndarray:
    c_h, c_v = p.c_H, p.c_V
    return np.array([(c_h - 1j * c_v) / SQ2, (c_h + 1j * c_v) / SQ2])


def _lin_hb_vectors() -> np.ndarray:
    # The H- and J_- outputs of the coupler, h and v, plus their opposite-sign
    # partners h', v' span B_circ. Each lin-hb pair is fixed so that
    # h = (|1~> - |2~>)/sqrt2 and v = (|3~> - |4~>)/sqrt2, matching the
    # linear-input rows of the composite map.
    h = np.array([-1, 1, -1, 1]) / 2
    h_p = np.array([1, 1, 1, 1]) / 2
    v = np.array([-1, -1, 1, 1]) / 2
    v_p = np.array([1, -1, -1, 1]) / 2
    cols = [(h + h_p) / SQ2, (h_p - h) / SQ2, (v + v_p) / SQ2, (v_p - v) / SQ2]
    return np.array(cols, dtype=complex).T


# Columns are |k~> written in circ-oam; rows of CIRC_TO_LIN are <k~|.
LIN_HB_IN_CIRC = _lin_hb_vectors()
CIRC_TO_LIN = LIN_HB_IN_CIRC.conj().T


@dataclass
class SpinOrbitState:
    amplitudes: np.ndarray
    basis: str = "circ-oam"

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if self.basis not in BASES and self.basis != "circ-oam-ext":
            raise InputError(f"unknown basis {self.basis!r}")
        nrm = np.linalg.norm(self.amplitudes)
        if abs(nrm - 1.0) > 1e-12:
            raise ValidityError(f"state not normalized (norm = {nrm!r})")

    def density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), self.basis)


@dataclass
class DensityMatrix:
    entries: np.ndarray
    basis: str = "circ-oam"

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError(f"density matrix must be square, got shape {m.shape}")
        if self.basis not in BASES:
            raise InputError(f"unknown basis {self.basis!r}")
        check_density(m)
        self.entries = m

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def check_density(m, herm_tol=1e-12, eig_tol=1e-10, trace_tol=1e-10) -> None:
    herm = np.max(np.abs(m - m.conj().T))
    if herm > herm_tol:
        raise ValidityError(f"matrix not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(m).real
    if abs(tr - 1.0) > trace_tol:
        raise ValidityError(f"trace {tr!r} differs from 1")
    lam = np.linalg.eigvalsh(m).min()
    if lam < -eig_tol:
        raise ValidityError(f"matrix not PSD (min eigenvalue {lam:.3g})")


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, DensityMatrix):
        return x.entries
    if isinstance(x, SpinOrbitState):
        return np.outer(x.amplitudes, x.amplitudes.conj())
    m = np.asarray(x, dtype=complex)
    if m.ndim == 1:
        return np.outer(m, m.conj())
    return m


def change_basis(s, target: str):
    """Re-express a state in ``target`` (``circ-oam`` or ``lin-hb``)."""
    if target not in BASES:
        raise InputError(f"unknown basis {target!r}")
    if s.basis == target:
        return s
    u = CIRC_TO_LIN if target == "lin-hb" else LIN_HB_IN_CIRC
    if isinstance(s, SpinOrbitState):
        return SpinOrbitState(u @ s.amplitudes, target)
    if isinstance(s, DensityMatrix):
        return DensityMatrix(u @ s.entries @ u.conj().T, target)
    raise InputError(f"cannot change basis of {type(s).__name__}")


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Matrix square root of a Hermitian PSD matrix; negative eigenvalues are clamped."""
    lam, vec = np.linalg.eigh((m + m.conj().T) / 2)
    if lam.min() < 0:
        log.debug("psd_sqrt: clamped eigenvalue %.3g", lam.min())
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def fidelity(rho, target) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) target sqrt(rho)))**2``.

    Either argument may be a :class:`DensityMatrix`, a :class:`SpinOrbitState`,
    a state vector or a plain matrix. A rank-one target short-circuits to
    ``<psi|rho|psi>``.
    """
    for x in (rho, target):
        if isinstance(x, (DensityMatrix, SpinOrbitState)) and x.basis not in BASES:
            raise InputError(f"unknown basis {x.basis!r}")
    if isinstance(rho, (DensityMatrix, SpinOrbitState)) and isinstance(target, (DensityMatrix, SpinOrbitState)):
        if rho.basis != target.basis:
            raise InputError(f"basis mismatch: {rho.basis} vs {target.basis}")
    a, b = _as_matrix(rho), _as_matrix(target)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    check_density(a, herm_tol=1e-9)
    check_density(b, herm_tol=1e-9)

    lam, vec = np.linalg.eigh(b)
    if lam.size == 1 or lam[-2] < 1e-12:
        psi = vec[:, -1]
        f = float(np.real(psi.conj() @ a @ psi))
    else:
        # Tr sqrt(sqrt(a) b sqrt(a)) is the trace norm of sqrt(a) sqrt(b);
        # singular values stay accurate near zero where sqrt of eigenvalues does not.
        f = float(np.sum(np.linalg.svd(psd_sqrt(a) @ psd_sqrt(b), compute_uv=False)) ** 2)
    return min(max(f, 0.0), 1.0)


def purity(rho) -> float:
    m = _as_matrix(rho)
    return float(np.real(np.trace(m @ m)))


# --- persistence ------------------------------------------------------------


def density_to_dict(rho: DensityMatrix) -> dict:
    return {
        "basis": rho.basis,
        "re": rho.entries.real.tolist(),
        "im": rho.entries.imag.tolist(),
    }


def density_from_dict(doc: dict) -> DensityMatrix:
    try:
        basis = doc["basis"]
        m = np.array(doc["re"], dtype=float) + 1j * np.array(doc["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed density-matrix document: {exc}") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"density matrix must be square, got shape {m.shape}")
    herm = np.max(np.abs(m - m.conj().T))
    if herm > 1e-9:
        raise ValidityError(f"density matrix not Hermitian (max deviation {herm:.3g})")
    # Symmetrize away sub-tolerance asymmetry so the stricter type invariant holds.
    return DensityMatrix((m + m.conj().T) / 2, basis)


def save_density(rho: DensityMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(density_to_dict(rho), fh, indent=1)
        fh.write("\n")


def load_density(path) -> DensityMatrix:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read density matrix {path}: {exc}") from exc
    return density_from_dict(doc)
