"""Wigner function of one photon shared among ``d`` field modes.

For a state confined to the one-photon subspace with single-photon density
matrix ``rho1`` the Wigner function is

    W(z) = (2/pi)^d exp(-2 |z|^2) (4 z^dag rho1 z - 1)

with one complex coordinate ``z_i`` per mode. It follows from rotating the
photon into a single mode, where W is a product of one Fock-1 and
``d - 1`` vacuum factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import full_channel
from .errors import InputError
from .states import check_density, polarization

# Coordinate index within (Re z_a, Im z_a, Re z_b, Im z_b).
_COORD = {"ReA": 0, "ImA": 1, "ReB": 2, "ImB": 3}
PAIR_IDS = ("ReA-ImA", "ReB-ImB", "ReA-ReB", "ImA-ImB", "ReA-ImB", "ReB-ImA")
DEFAULT_POINTS = 121
DEFAULT_EXTENT = 3.0

# Output mode pairs (0-based circ-oam slots) for the circular inputs and the
# full slot list for the linear ones.
STATE_MODES = {
    "J1": (0, 3),
    "J-1": (1, 2),
    "J+": (0, 1, 2, 3),
    "J-": (0, 1, 2, 3),
}
_STATE_INPUT = {"J1": "sigma+", "J-1": "sigma-", "J+": "H", "J-": "V"}


@dataclass
class SinglePhotonModeState:
    """``rho1[i, j]`` couples "photon in mode i" with "photon in mode j"."""

    rho1: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        m = np.asarray(self.rho1, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise InputError(f"rho1 must be a square matrix, got shape {m.shape}")
        check_density(m)
        self.rho1 = m
        if not self.labels:
            self.labels = tuple(f"mode{i}" for i in range(m.shape[0]))
        if len(self.labels) != m.shape[0]:
            raise InputError("one label per mode is required")

    @property
    def dim(self) -> int:
        return self.rho1.shape[0]

    @classmethod
    def pure(cls, amplitudes, labels=()):
        a = np.asarray(amplitudes, dtype=complex)
        a = a / np.linalg.norm(a)
        return cls(np.outer(a, a.conj()), tuple(labels))


def mode_pair_state(name: str) -> SinglePhotonModeState:
    """Single-photon state of the out-coupled output for ``J1``, ``J-1``, ``J+`` or ``J-``.

    ``J1``/``J-1`` keep the two occupied circ-oam slots (d = 2); ``J+``/``J-``
    are the linear-input outputs over all four slots (d = 4).
    """
    try:
        slots = STATE_MODES[name]
    except KeyError:
        raise InputError(f"unknown state {name!r}; expected one of {sorted(STATE_MODES)}") from None
    amps = full_channel(polarization(_STATE_INPUT[name])).amplitudes[list(slots)]
    return SinglePhotonModeState.pure(amps, tuple(f"slot{k + 1}" for k in slots))


def orthogonal_partner(s: SinglePhotonModeState) -> SinglePhotonModeState:
    """For a pure two-mode state ``a|A> + b|B>`` return ``conj(b)|A> - conj(a)|B>``."""
    if s.dim != 2:
        raise InputError("orthogonal partner is defined for d = 2")
    lam, vec = np.linalg.eigh(s.rho1)
    a, b = vec[:, -1]
    return SinglePhotonModeState.pure([np.conj(b), -np.conj(a)], s.labels)


def admix(s: SinglePhotonModeState, other: SinglePhotonModeState, eps: float) -> SinglePhotonModeState:
    """``(1 - eps) s + eps other``."""
    if not 0.0 <= eps <= 1.0:
        raise InputError(f"eps must lie in [0, 1], got {eps}")
    if s.dim != other.dim:
        raise InputError("states differ in mode count")
    return SinglePhotonModeState((1 - eps) * s.rho1 + eps * other.rho1, s.labels)


def wigner_value(s: SinglePhotonModeState, z) -> float:
    z = np.asarray(z, dtype=complex)
    if z.shape != (s.dim,):
        raise InputError(f"phase point has {z.size} coordinates, state has {s.dim} modes")
    if not np.all(np.isfinite(z)):
        raise InputError("phase point must be finite")
    return float(wigner_grid(s, z[None, :])[0])


def wigner_grid(s: SinglePhotonModeState, z: np.ndarray) -> np.ndarray:
    """Vectorized ``W`` over points ``z`` of shape ``(..., d)``."""
    z = np.asarray(z, dtype=complex)
    if z.shape[-1] != s.dim:
        raise InputError(f"points have {z.shape[-1]} coordinates, state has {s.dim} modes")
    quad = np.einsum("...i,ij,...j->...", z.conj(), s.rho1, z).real
    norm2 = np.sum(np.abs(z) ** 2, axis=-1)
    return (2 / math.pi) ** s.dim * np.exp(-2 * norm2) * (4 * quad - 1)


@dataclass
class WignerSlice:
    pair: str
    n_points: int
    extent: float
    values: np.ndarray
    modes: tuple = (0, 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.n_points)


def _parse_pair(pair: str):
    if pair not in PAIR_IDS:
        raise InputError(f"unknown slice {pair!r}; expected one of {PAIR_IDS}")
    first, second = pair.split("-")
    return _COORD[first], _COORD[second]


def wigner_slice(
    s: SinglePhotonModeState,
    pair: str,
    n_points: int = DEFAULT_POINTS,
    extent: float = DEFAULT_EXTENT,
    modes=(0, 1),
) -> WignerSlice:
    """``values[i, j] = W`` with the first coordinate at ``axis[i]``, the second at ``axis[j]``.

    ``A`` and ``B`` refer to ``modes[0]`` and ``modes[1]``; every other
    coordinate is held at the origin.
    """
    if int(n_points) != n_points or n_points < 3:
        raise InputError(f"n_points must be an integer >= 3, got {n_points}")
    if not (extent > 0 and math.isfinite(extent)):
        raise InputError(f"extent must be positive, got {extent}")
    modes = tuple(int(m) for m in modes)
    if len(modes) != 2 or modes[0] == modes[1] or not all(0 <= m < s.dim for m in modes):
        raise InputError(f"modes must name two distinct modes of {s.dim}, got {modes}")
    i, j = _parse_pair(pair)
    n_points = int(n_points)
    axis = np.linspace(-extent, extent, n_points)
    coords = np.zeros((n_points, n_points, 4))
    coords[:, :, i] = axis[:, None]
    coords[:, :, j] = axis[None, :]
    z = np.zeros((n_points, n_points, s.dim), dtype=complex)
    z[..., modes[0]] = coords[..., 0] + 1j * coords[..., 1]
    z[..., modes[1]] = coords[..., 2] + 1j * coords[..., 3]
    values = wigner_grid(s, z)
    if not np.all(np.isfinite(values)):
        raise InputError("non-finite Wigner values")
    lam_max = float(np.linalg.eigvalsh(s.rho1)[-1])
    bound = (2 / math.pi) ** s.dim * max(4 * extent**2 * lam_max, 1.0)
    if np.max(np.abs(values)) > bound * (1 + 1e-12):
        raise InputError("Wigner slice exceeds its analytic bound")
    return WignerSlice(pair, n_points, float(extent), values, modes)


def all_slices(s, n_points=DEFAULT_POINTS, extent=DEFAULT_EXTENT, modes=(0, 1)) -> list:
    return [wigner_slice(s, p, n_points, extent, modes) for p in PAIR_IDS]


def slice_difference(a: WignerSlice, b: WignerSlice):
    if a.pair != b.pair or a.n_points != b.n_points or a.extent != b.extent:
        raise InputError(
            f"slices differ in pair or grid: {a.pair}/{a.n_points}/{a.extent} vs {b.pair}/{b.n_points}/{b.extent}"
        )
    diff = a.values - b.values
    return float(np.max(np.abs(diff))), diff


def _gauss_grid(extent: float, n_points: int):
    x, w = np.polynomial.legendre.leggauss(int(n_points))
    return x * extent, w * extent


def phase_space_average(s: SinglePhotonModeState, weight, extent: float = 4.0, n_points: int = 41) -> float:
    """Gauss-Legendre integral of ``W(z) * weight(z)`` over the 4D box ``[-extent, extent]^4``."""
    if s.dim != 2:
        raise InputError("4D quadrature needs d = 2")
    if extent < 3:
        raise InputError(f"quadrature extent must be >= 3, got {extent}")
    x, w = _gauss_grid(extent, n_points)
    # Sum over (Re a, Im a) for each fixed (Re b, Im b) to bound memory.
    ra, ia = np.meshgrid(x, x, indexing="ij")
    wa = np.outer(w, w)
    za = ra + 1j * ia
    total = 0.0
    for k, rb in enumerate(x):
        zb = rb + 1j * x[:, None, None]  # (n, 1, 1) over Im b
        z = np.stack(np.broadcast_arrays(za[None], zb), axis=-1)
        vals = wigner_grid(s, z) * weight(z)
        total += w[k] * float(np.einsum("b,bij,ij->", w, vals, wa))
    return total


def wigner_norm(s: SinglePhotonModeState, extent: float = 4.0, n_points: int = 41) -> float:
    """Integral of ``W`` over phase space; 1 for any valid ``rho1``."""
    return phase_space_average(s, lambda z: np.ones(z.shape[:-1]), extent, n_points)


def photon_number(s: SinglePhotonModeState, extent: float = 4.0, n_points: int = 41) -> float:
    """Mean total photon number from the Weyl symbol ``sum_i |z_i|^2 - d/2``."""
    return phase_space_average(s, lambda z: np.sum(np.abs(z) ** 2, axis=-1) - s.dim / 2, extent, n_points)


def rank_profile(values: np.ndarray) -> np.ndarray:
    """Singular values of a slice, largest first, relative to the largest."""
    sv = np.linalg.svd(values, compute_uv=False)
    return sv / sv[0] if sv[0] > 0 else sv


def rank1_residual(values: np.ndarray) -> float:
    """Max-abs residual of the best rank-one approximation ``f(x) g(y)``."""
    u, sv, vt = np.linalg.svd(values)
    approx = sv[0] * np.outer(u[:, 0], vt[0])
    return float(np.max(np.abs(values - approx)))


# --- slice CSV --------------------------------------------------------------


def save_slice_csv(sl: WignerSlice, path) -> None:
    """Header line, axis row, then one row of values per first-coordinate sample."""
    lines = [f"# pair={sl.pair},n_points={sl.n_points},extent={sl.extent!r},modes={sl.modes[0]}:{sl.modes[1]}"]
    lines.append(",".join(repr(float(a)) for a in sl.axis))
    for row in sl.values:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_slice_csv(path) -> WignerSlice:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        rows = [line.strip() for line in fh if line.strip()]
    try:
        fields = dict(item.split("=", 1) for item in header.lstrip("# ").split(","))
        pair, n, extent = fields["pair"], int(fields["n_points"]), float(fields["extent"])
        modes = tuple(int(m) for m in fields.get("modes", "0:1").split(":"))
        axis = np.array([float(t) for t in rows[0].split(",")])
        values = np.array([[float(t) for t in r.split(",")] for r in rows[1:]])
    except (ValueError, KeyError, IndexError) as exc:
        raise InputError(f"{path}: malformed slice file ({exc})") from exc
    _parse_pair(pair)
    if values.shape != (n, n) or axis.size != n:
        raise InputError(f"{path}: expected {n}x{n} values")
    return WignerSlice(pair, n, extent, values, modes)
