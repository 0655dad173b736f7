"""Free-space transverse modes sampled on the camera grid.

OAM ring modes ``u_l(r, phi) = R_|l|(r) exp(i l phi)`` and the Hermite-Bessel
combinations built from them. All lengths are dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InputError, ResolutionError

MAX_ABS_L = 8

# Hermite-Bessel modes as coefficients over the OAM modes (l=-2, l=0, l=+2).
HB_COEFFS = {
    "HB11": np.array([1j, 0.0, -1j]) / math.sqrt(2.0),
    "HB20": np.array([1.0, 2.0, 1.0]) / 2.0,
    "HB02": np.array([-1.0, 2.0, -1.0]) / 2.0,
}
OAM_ORDERS = (-2, 0, 2)


@dataclass(frozen=True)
class GridSpec:
    """Square pixel grid with centers at ``-extent + (i + 0.5) * pitch``."""

    n_pixels: int = 128
    extent: float = 4.0

    def __post_init__(self):
        if int(self.n_pixels) != self.n_pixels or self.n_pixels < 8:
            raise InputError(f"n_pixels must be an integer >= 8, got {self.n_pixels}")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise InputError(f"extent must be positive, got {self.extent}")

    @property
    def pitch(self) -> float:
        return 2.0 * self.extent / self.n_pixels

    @property
    def pixel_area(self) -> float:
        return self.pitch**2

    def axis(self) -> np.ndarray:
        return -self.extent + (np.arange(self.n_pixels) + 0.5) * self.pitch

    def mesh(self):
        """Return ``(x, y)`` arrays indexed ``[row, col] = [y, x]``."""
        a = self.axis()
        return np.meshgrid(a, a, indexing="xy")

    def polar(self):
        x, y = self.mesh()
        return np.hypot(x, y), np.arctan2(y, x)


@dataclass(frozen=True)
class RadialProfile:
    kind: str = "bessel-windowed"
    ring_scale: float = 1.5
    window_width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bessel-windowed", "gaussian-ring"):
            raise InputError(f"unknown radial profile kind {self.kind!r}")
        if not self.ring_scale > 0 or not self.window_width > 0:
            raise InputError("ring_scale and window_width must be positive")

    def evaluate(self, order: int, r: np.ndarray) -> np.ndarray:
        order = abs(int(order))
        envelope_arg = r**2 / self.window_width**2
        if self.kind == "bessel-windowed":
            return bessel_j(order, self.ring_scale * r) * np.exp(-envelope_arg)
        rho = r / self.ring_scale
        return rho**order * np.exp(-((r - self.ring_scale) ** 2) / self.window_width**2)


def default_profile(grid: GridSpec) -> RadialProfile:
    # Window of extent/4 keeps |u|^2 below ~1e-14 at the frame edge.
    return RadialProfile("bessel-windowed", 6.0 / grid.extent, grid.extent / 4.0)


def bessel_j(order: int, x):
    """Bessel function of the first kind for integer order."""
    return special.jv(order, x)


@dataclass
class ModeField:
    grid: GridSpec
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        n = self.grid.n_pixels
        if self.values.shape != (n, n):
            raise InputError(f"values shape {self.values.shape} does not match grid {n}x{n}")

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.values) ** 2)) * self.grid.pixel_area)

    def normalized(self) -> "ModeField":
        return normalize(self)

    def intensity(self) -> np.ndarray:
        return np.abs(self.values) ** 2


def normalize(u: ModeField) -> ModeField:
    nrm = u.norm()
    if nrm == 0:
        raise InputError(f"cannot normalize the zero field {u.label!r}")
    if nrm == 1.0:
        return ModeField(u.grid, u.values.copy(), u.label)
    return ModeField(u.grid, u.values / nrm, u.label)


def oam_mode(l: int, grid: GridSpec, profile: RadialProfile | None = None) -> ModeField:
    """Normalized OAM mode of charge ``l`` on ``grid``."""
    if int(l) != l:
        raise InputError(f"OAM charge must be an integer, got {l}")
    l = int(l)
    if abs(l) > MAX_ABS_L:
        raise InputError(f"|l| must be <= {MAX_ABS_L}, got {l}")
    if grid.n_pixels < 8 * abs(l):
        raise ResolutionError(f"{grid.n_pixels} pixels cannot resolve l={l}; need >= {8 * abs(l)}")
    profile = profile or default_profile(grid)
    r, phi = grid.polar()
    values = profile.evaluate(l, r) * np.exp(1j * l * phi)
    return normalize(ModeField(grid, values, f"l={l:+d}" if l else "l=0"))


def oam_basis(grid: GridSpec, profile: RadialProfile | None = None, orders=OAM_ORDERS):
    return [oam_mode(l, grid, profile) for l in orders]


def combine(coeffs, modes, label="") -> ModeField:
    """Unnormalized linear combination ``sum_k coeffs[k] * modes[k]``."""
    if len(coeffs) != len(modes):
        raise InputError("coefficient and mode counts differ")
    grid = modes[0].grid
    values = np.zeros((grid.n_pixels, grid.n_pixels), dtype=complex)
    for c, m in zip(coeffs, modes):
        if m.grid != grid:
            raise InputError("modes live on different grids")
        values += c * m.values
    return ModeField(grid, values, label)


def hermite_bessel_mode(kind: str, grid: GridSpec, profile: RadialProfile | None = None) -> ModeField:
    try:
        coeffs = HB_COEFFS[kind]
    except KeyError:
        raise InputError(f"unknown Hermite-Bessel mode {kind!r}") from None
    return normalize(combine(coeffs, oam_basis(grid, profile), kind))


def hb_basis(grid: GridSpec, profile: RadialProfile | None = None):
    modes = oam_basis(grid, profile)
    return [normalize(combine(HB_COEFFS[k], modes, k)) for k in ("HB11", "HB20", "HB02")]


def inner_product(a: ModeField, b: ModeField) -> complex:
    """Discrete ``<a|b>`` with the pixel-area quadrature weight."""
    if a.grid != b.grid:
        raise InputError(f"grid mismatch: {a.grid} vs {b.grid}")
    return complex(np.sum(np.conj(a.values) * b.values) * a.grid.pixel_area)


def rotate90(u: ModeField, k: int = 1) -> ModeField:
    """Field sampled on the grid rotated by ``k`` quarter turns.

    Returns ``v`` with ``v(x, y) = u(R^-1 (x, y))``: the pattern turns
    counter-clockwise by ``k * 90`` degrees.
    """
    return ModeField(u.grid, np.rot90(u.values, -k), u.label)


# --- CSV export -------------------------------------------------------------


def _fmt_complex(z: complex) -> str:
    return f"{z.real!r}{z.imag:+}j"


def save_mode_csv(u: ModeField, path) -> None:
    if "," in u.label or "\n" in u.label:
        raise InputError("mode labels cannot contain commas or newlines")
    lines = [f"# {u.label},{u.grid.n_pixels},{u.grid.extent!r}"]
    for row in u.values:
        lines.append(",".join(_fmt_complex(complex(z)) for z in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mode_csv(path) -> ModeField:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise InputError(f"{path}: missing '# label,n_pixels,extent' header")
        try:
            label, n, extent = header[2:].rstrip("\n").rsplit(",", 2)
            grid = GridSpec(int(n), float(extent))
        except ValueError as exc:
            raise InputError(f"{path}: bad header {header!r}") from exc
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if len(rows) != grid.n_pixels or any(len(r) != grid.n_pixels for r in rows):
        raise InputError(f"{path}: expected {grid.n_pixels}x{grid.n_pixels} values")
    values = np.array([[complex(tok) for tok in row] for row in rows])
    return ModeField(grid, values, label)
