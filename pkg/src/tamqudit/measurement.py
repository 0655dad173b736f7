"""Heralded single-photon imaging of the out-coupled qudit.

Each heralded frame lights at most one signal pixel, drawn from the
Fourier-plane intensity of the analyzer-projected state. Dark counts are
added independently per pixel.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import full_channel
from .errors import DarkProjectionError, InputError
from .modes import OAM_ORDERS, GridSpec, RadialProfile, default_profile, oam_basis
from .states import CIRC_SLOTS, JonesVector, SpinOrbitState, circular_coeffs, polarization

POLARIZATIONS = ("H", "V", "sigma+", "sigma-")
DARK_PROB = 1e-15
# Frames per random stream; fixed so output does not depend on thread count.
FRAME_CHUNK = 8192
PIXEL_CHUNK = 4096
_SIGNAL_STREAM, _DARK_STREAM = 0, 1


@dataclass(frozen=True)
class NoiseModel:
    dark_count_prob: float = 1e-5
    detection_efficiency: float = 1.0
    background_uniform: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise InputError(f"dark_count_prob must lie in [0, 1), got {self.dark_count_prob}")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise InputError(f"detection_efficiency must lie in (0, 1], got {self.detection_efficiency}")
        if not 0.0 <= self.background_uniform <= 1.0:
            raise InputError(f"background_uniform must lie in [0, 1], got {self.background_uniform}")

    def background_fraction(self, n_pixels: int) -> float:
        """Expected fraction of counts that carry no information about the state."""
        eta, bg = self.detection_efficiency, self.background_uniform
        dark = n_pixels * self.dark_count_prob
        total = eta + dark
        return (eta * bg + dark) / total if total > 0 else 0.0


NOISELESS = NoiseModel(0.0, 1.0, 0.0)


@dataclass
class Projection:
    prob: float
    coeffs: np.ndarray  # normalized, over OAM_ORDERS
    raw: np.ndarray
    dark: bool = False


@dataclass
class IntensityImage:
    grid: GridSpec
    probabilities: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class CountsImage:
    grid: GridSpec
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def analyzer_row(a: JonesVector) -> np.ndarray:
    """``<a|sigma>`` for each circ-oam slot."""
    bra = circular_coeffs(a).conj()
    return np.array([bra[0] if pol == "sigma+" else bra[1] for pol, _ in CIRC_SLOTS])


def analyzer_matrix(a: JonesVector) -> np.ndarray:
    """3x4 map from circ-oam amplitudes to OAM coefficients after analyzer ``a``."""
    row = analyzer_row(a)
    k = np.zeros((len(OAM_ORDERS), len(CIRC_SLOTS)), dtype=complex)
    for j, (_, l) in enumerate(CIRC_SLOTS):
        k[OAM_ORDERS.index(l), j] = row[j]
    return k


def project_analyzer(s: SpinOrbitState, a: JonesVector) -> Projection:
    if s.basis != "circ-oam":
        raise InputError(f"projection needs a circ-oam state, got {s.basis}")
    raw = analyzer_matrix(a) @ s.amplitudes
    prob = float(np.sum(np.abs(raw) ** 2))
    if prob < DARK_PROB:
        return Projection(prob, np.zeros(len(OAM_ORDERS), dtype=complex), raw, dark=True)
    return Projection(prob, raw / math.sqrt(prob), raw)


@functools.lru_cache(maxsize=16)
def _mode_stack(grid: GridSpec, profile: RadialProfile) -> np.ndarray:
    stack = np.array([m.values for m in oam_basis(grid, profile)])
    stack.setflags(write=False)
    return stack


def render_intensity(coeffs, grid: GridSpec, profile: RadialProfile | None = None, meta=None) -> IntensityImage:
    """Pixel probabilities proportional to ``|sum_l c_l u_l|^2``."""
    profile = profile or default_profile(grid)
    c = np.asarray(coeffs, dtype=complex)
    if c.shape != (len(OAM_ORDERS),):
        raise InputError(f"expected {len(OAM_ORDERS)} OAM coefficients, got shape {c.shape}")
    if not np.any(np.abs(c) > 0):
        raise DarkProjectionError("all-zero coefficients: nothing to render")
    c = c / np.linalg.norm(c)
    field_ = np.tensordot(c, _mode_stack(grid, profile), axes=1)
    inten = np.abs(field_) ** 2
    return IntensityImage(grid, inten / inten.sum(), dict(meta or {}))


def design_matrix(analyzer, grid: GridSpec, profile: RadialProfile | None = None) -> np.ndarray:
    """Rows ``F_x`` such that pixel ``x`` sees intensity ``F_x rho F_x^dag``.

    ``rho`` is a circ-oam density matrix and ``analyzer`` a name or Jones vector.
    """
    a = polarization(analyzer) if isinstance(analyzer, str) else analyzer
    stack = _mode_stack(grid, profile or default_profile(grid)).reshape(len(OAM_ORDERS), -1)
    return (analyzer_matrix(a).T @ stack).T


def density_image(rho, analyzer, grid: GridSpec, profile: RadialProfile | None = None, meta=None) -> IntensityImage:
    """Pixel probabilities of a (possibly mixed) circ-oam state behind ``analyzer``."""
    m = rho.entries if hasattr(rho, "entries") else np.asarray(rho, dtype=complex)
    f = design_matrix(analyzer, grid, profile)
    inten = np.einsum("xi,ij,xj->x", f, m, f.conj()).real
    total = inten.sum()
    n = grid.n_pixels
    meta = dict(meta or {})
    meta.setdefault("projection_prob", float(total * grid.pixel_area))
    if total * grid.pixel_area < DARK_PROB:
        meta["dark"] = True
        return IntensityImage(grid, np.full((n, n), 1.0 / n**2), meta)
    meta.setdefault("dark", False)
    return IntensityImage(grid, np.clip(inten, 0.0, None).reshape(n, n) / total, meta)


def _chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, chunk])))


def _signal_chunk(cdf, eta, seed, chunk, n_frames):
    start = chunk * FRAME_CHUNK
    m = min(FRAME_CHUNK, n_frames - start)
    u = _chunk_rng(seed, _SIGNAL_STREAM, chunk).random((m, 2))
    hit = u[:, 0] < eta
    pix = np.searchsorted(cdf, u[hit, 1], side="right")
    return np.bincount(np.minimum(pix, cdf.size - 1), minlength=cdf.size)


def _dark_chunk(p_dark, seed, block, n_frames, n_pix):
    lo = block * PIXEL_CHUNK
    m = min(PIXEL_CHUNK, n_pix - lo)
    return _chunk_rng(seed, _DARK_STREAM, block).binomial(n_frames, p_dark, size=m)


def sample_counts(img: IntensityImage, n_frames: int, noise: NoiseModel = NOISELESS, seed: int = 0, threads: int = 1) -> CountsImage:
    """Accumulate ``n_frames`` heralded frames into a counts image.

    Randomness is keyed on ``(seed, stream, chunk)`` with fixed frame and
    pixel chunks, so the result is bitwise identical for any ``threads``.
    Dark counts are drawn per pixel as the binomial total over all frames,
    which has the same law as independent per-frame Bernoulli hits.
    """
    if int(n_frames) != n_frames or n_frames < 0:
        raise InputError(f"n_frames must be a non-negative integer, got {n_frames}")
    if int(seed) != seed or seed < 0:
        raise InputError(f"seed must be a non-negative integer, got {seed}")
    n_frames, seed = int(n_frames), int(seed)
    p = np.asarray(img.probabilities, dtype=float).ravel()
    n_pix = p.size
    counts = np.zeros(n_pix, dtype=np.int64)
    meta = dict(img.meta)
    meta.update(n_frames=n_frames, seed=seed, noise=noise_to_dict(noise))
    if n_frames == 0:
        return CountsImage(img.grid, counts.reshape(img.probabilities.shape), meta)

    dark_image = bool(meta.get("dark", False))
    workers = max(1, int(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        jobs = []
        if not dark_image:
            bg = noise.background_uniform
            mixed = (1.0 - bg) * p + bg / n_pix
            cdf = np.cumsum(mixed)
            cdf /= cdf[-1]
            n_chunks = -(-n_frames // FRAME_CHUNK)
            eta = noise.detection_efficiency
            jobs += [pool.submit(_signal_chunk, cdf, eta, seed, c, n_frames) for c in range(n_chunks)]
        for job in jobs:
            counts += job.result()
        if noise.dark_count_prob > 0:
            n_blocks = -(-n_pix // PIXEL_CHUNK)
            dark = [pool.submit(_dark_chunk, noise.dark_count_prob, seed, b, n_frames, n_pix) for b in range(n_blocks)]
            counts += np.concatenate([d.result() for d in dark])
    return CountsImage(img.grid, counts.reshape(img.probabilities.shape), meta)


def noise_to_dict(noise: NoiseModel) -> dict:
    return {
        "dark_count_prob": noise.dark_count_prob,
        "detection_efficiency": noise.detection_efficiency,
        "background_uniform": noise.background_uniform,
    }


@dataclass
class TomographyDataset:
    """Counts images indexed ``images[input_row][analyzer_col]``."""

    images: list
    inputs: tuple
    analyzers: tuple
    grid: GridSpec
    profile: RadialProfile
    noise: NoiseModel
    seed: int
    n_frames: int

    def row(self, input_name: str) -> list:
        try:
            return self.images[self.inputs.index(input_name)]
        except ValueError:
            raise InputError(f"input {input_name!r} not in dataset {self.inputs}") from None


def image_seed(seed: int, row: int, col: int) -> int:
    return seed + 16 * row + col


def ideal_image(input_pol: str, analyzer: str, grid: GridSpec, profile: RadialProfile, state: SpinOrbitState | None = None) -> IntensityImage:
    """Noise-free probability map for one (input, analyzer) panel.

    Dark projections come back as a uniform map flagged ``dark``.
    """
    s = state if state is not None else full_channel(polarization(input_pol))
    proj = project_analyzer(s, polarization(analyzer))
    meta = {"input_pol": input_pol, "analyzer": analyzer, "projection_prob": proj.prob, "dark": proj.dark}
    if proj.dark:
        n = grid.n_pixels
        return IntensityImage(grid, np.full((n, n), 1.0 / n**2), meta)
    return render_intensity(proj.coeffs, grid, profile, meta)


def synthesize_dataset(
    inputs=POLARIZATIONS,
    analyzers=POLARIZATIONS,
    n_frames: int = 10_000,
    grid: GridSpec | None = None,
    profile: RadialProfile | None = None,
    noise: NoiseModel | None = None,
    seed: int = 0,
    threads: int = 1,
) -> TomographyDataset:
    if int(n_frames) != n_frames or n_frames < 0:
        raise InputError(f"n_frames must be a non-negative integer, got {n_frames}")
    grid = grid or GridSpec()
    profile = profile or default_profile(grid)
    noise = noise if noise is not None else NoiseModel()
    rows = []
    for i, inp in enumerate(inputs):
        row = []
        for j, ana in enumerate(analyzers):
            img = ideal_image(inp, ana, grid, profile)
            row.append(sample_counts(img, n_frames, noise, image_seed(seed, i, j), threads))
        rows.append(row)
    return TomographyDataset(rows, tuple(inputs), tuple(analyzers), grid, profile, noise, seed, int(n_frames))
