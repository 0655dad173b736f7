import math

import numpy as np
import pytest
from scipy import ndimage
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_state
from tamqudit.channel import full_channel
from tamqudit.errors import DarkProjectionError, InputError
from tamqudit.measurement import (
    NOISELESS,
    NoiseModel,
    density_image,
    ideal_image,
    image_seed,
    project_analyzer,
    render_intensity,
    sample_counts,
    synthesize_dataset,
)
from tamqudit.modes import GridSpec, default_profile, rotate90, ModeField
from tamqudit.states import SpinOrbitState, polarization

SQ2 = math.sqrt(2)
GRID = GridSpec(64, 4.0)


def sigma_plus_output():
    return full_channel(polarization("sigma+"))


def test_projection_onto_opposite_circular():
    proj = project_analyzer(sigma_plus_output(), polarization("sigma-"))
    assert abs(proj.prob - 0.5) < 1e-12
    np.testing.assert_allclose(np.abs(proj.coeffs), [0, 0, 1], atol=1e-12)


def test_projection_onto_same_circular_keeps_sign():
    proj = project_analyzer(sigma_plus_output(), polarization("sigma+"))
    assert abs(proj.prob - 0.5) < 1e-12
    np.testing.assert_allclose(proj.raw, [0, -1 / SQ2, 0], atol=1e-12)


def test_projection_onto_h():
    proj = project_analyzer(sigma_plus_output(), polarization("H"))
    assert abs(proj.prob - 0.5) < 1e-12
    np.testing.assert_allclose(proj.coeffs, [0, -1 / SQ2, 1 / SQ2], atol=1e-12)


def test_dark_projection_flagged():
    # V behind a sigma+ input leaves l=0 and l=2 parts; an exactly dark case is
    # the sigma- slot pair under a sigma+ analyzer.
    s = SpinOrbitState([0, 1, 0, 0])
    proj = project_analyzer(s, polarization("sigma+"))
    assert proj.dark and proj.prob == 0
    img = ideal_image("x", "sigma+", GRID, default_profile(GRID), state=s)
    assert img.meta["dark"]
    np.testing.assert_allclose(img.probabilities, 1 / GRID.n_pixels**2)


def test_projection_rejects_lin_hb_state():
    with pytest.raises(InputError):
        project_analyzer(SpinOrbitState([1, 0, 0, 0], "lin-hb"), polarization("H"))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_analyzer_completeness(seed):
    s = SpinOrbitState(random_state(4, np.random.default_rng(seed)))
    p = {a: project_analyzer(s, polarization(a)).prob for a in ("H", "V", "sigma+", "sigma-")}
    assert abs(p["H"] + p["V"] - 1) < 1e-12
    assert abs(p["sigma+"] + p["sigma-"] - 1) < 1e-12


def test_l0_image_rotationally_symmetric():
    img = render_intensity([0, 1, 0], GRID)
    assert abs(img.probabilities.sum() - 1) < 1e-12
    assert np.abs(np.rot90(img.probabilities) - img.probabilities).max() <= 1e-12


def test_conjugate_charges_give_identical_images():
    a = render_intensity([1, 0, 0], GRID).probabilities
    b = render_intensity([0, 0, 1], GRID).probabilities
    assert np.abs(a - b).max() <= 1e-15


def test_global_phase_invariance():
    c = np.array([0.3, -0.5j, 0.8])
    a = render_intensity(c, GRID).probabilities
    b = render_intensity(c * np.exp(0.7j), GRID).probabilities
    assert np.abs(a - b).max() <= 1e-15


def test_delta_l_two_gives_two_petals():
    g = GridSpec(256, 4.0)
    p = render_intensity(np.array([0, -1, 1]) / SQ2, g).probabilities
    # Ring radius of the l=2 component, then the azimuthal cut through it.
    ring = render_intensity([0, 0, 1], g).probabilities
    r, _ = g.polar()
    ring_r = r.flat[np.argmax(ring)]
    theta = np.linspace(-math.pi, math.pi, 360, endpoint=False)
    to_index = lambda v: (v + g.extent) / g.pitch - 0.5  # noqa: E731
    rows, cols = to_index(ring_r * np.sin(theta)), to_index(ring_r * np.cos(theta))
    cut = ndimage.map_coordinates(p, [rows, cols], order=3)
    maxima = np.sum((cut > np.roll(cut, 1)) & (cut > np.roll(cut, -1)))
    assert maxima == 2


def test_render_rejects_zero_and_bad_shapes():
    with pytest.raises(DarkProjectionError):
        render_intensity([0, 0, 0], GRID)
    with pytest.raises(InputError):
        render_intensity([1, 0], GRID)


def test_density_image_matches_pure_render():
    s = full_channel(polarization("H"))
    for a in ("H", "V", "sigma+", "sigma-"):
        pure = ideal_image("H", a, GRID, default_profile(GRID)).probabilities
        mixed = density_image(s.density(), a, GRID).probabilities
        assert np.abs(pure - mixed).max() < 1e-15


def test_zero_frames_gives_zero_counts():
    img = render_intensity([0, 1, 0], GRID)
    assert sample_counts(img, 0, NoiseModel(), seed=1).counts.sum() == 0


def test_counts_concentrate_around_expectation():
    img = render_intensity(np.array([0.3, 0.6j, -0.74]), GRID)
    n = 10**6
    counts = sample_counts(img, n, NOISELESS, seed=5).counts
    p = img.probabilities
    assert counts.sum() == n
    sd = np.sqrt(n * p * (1 - p))
    inside = np.abs(counts - n * p) <= 5 * sd + 1e-12
    assert inside.mean() >= 0.999


def test_sampling_deterministic_and_thread_independent():
    img = render_intensity([0.5, 0.5, 0.7071], GRID)
    noise = NoiseModel(1e-3, 0.8, 0.05)
    a = sample_counts(img, 30_000, noise, seed=9, threads=1).counts
    b = sample_counts(img, 30_000, noise, seed=9, threads=1).counts
    c = sample_counts(img, 30_000, noise, seed=9, threads=4).counts
    assert np.array_equal(a, b) and np.array_equal(a, c)
    d = sample_counts(img, 30_000, noise, seed=10).counts
    assert not np.array_equal(a, d)


def _seed_mean(img, n_frames, noise, n_seeds=100):
    return sum(sample_counts(img, n_frames, noise, seed=s).counts for s in range(n_seeds)) / (n_seeds * n_frames)


def test_expectation_consistency_over_seeds():
    g = GridSpec(16, 4.0)
    img = render_intensity([0.2, 0.9, 0.3j], g)
    n_frames, n_seeds = 2000, 100
    p = img.probabilities
    mean = _seed_mean(img, n_frames, NOISELESS, n_seeds)
    assert np.all(np.abs(mean - p) <= 4 * np.sqrt(p / (n_seeds * n_frames)) + 1e-12)
    # With dark counts the dark hits fluctuate too, so their rate joins p
    # under the square root.
    dark = 1e-4
    mean = _seed_mean(img, n_frames, NoiseModel(dark, 1.0, 0.0), n_seeds)
    assert np.all(np.abs(mean - p) <= 4 * np.sqrt((p + dark) / (n_seeds * n_frames)) + dark)


def test_detection_efficiency_thins_signal():
    img = render_intensity([0, 1, 0], GRID)
    n = 40_000
    total = sample_counts(img, n, NoiseModel(0.0, 0.6, 0.0), seed=2).total
    assert abs(total - 0.6 * n) <= 5 * math.sqrt(n)


def test_noise_model_validation():
    for kwargs in ({"dark_count_prob": -1e-3}, {"detection_efficiency": 0.0}, {"background_uniform": 1.5}):
        with pytest.raises(InputError):
            NoiseModel(**kwargs)
    with pytest.raises(InputError):
        sample_counts(render_intensity([0, 1, 0], GRID), -1)


def test_synthesize_dataset_layout_and_seeds():
    ds = synthesize_dataset(n_frames=2000, grid=GridSpec(32, 4.0), seed=100)
    assert len(ds.images) == 4 and all(len(row) == 4 for row in ds.images)
    for i, row in enumerate(ds.images):
        for j, img in enumerate(row):
            assert img.meta["seed"] == image_seed(100, i, j) == 100 + 16 * i + j
            assert img.meta["input_pol"] == ds.inputs[i]
            assert img.meta["analyzer"] == ds.analyzers[j]
            assert img.grid == ds.grid


def test_sigma_plus_panels():
    g = GridSpec(65, 4.0)
    ds = synthesize_dataset(inputs=("sigma+",), n_frames=20_000, grid=g, noise=NOISELESS, seed=3)
    same, opposite = ds.row("sigma+")[2].counts, ds.row("sigma+")[3].counts
    center = (32, 32)
    # l=0 has its maximum on axis; the l=2 ring is dark there.
    assert same[center] > 0.5 * same.max()
    assert opposite[center] == 0
    r, _ = g.polar()
    core = r < 0.3
    p_core = ideal_image("sigma+", "sigma-", g, default_profile(g)).probabilities[core].sum()
    assert p_core < 0.01
    assert opposite[core].sum() <= 20_000 * p_core + 5 * math.sqrt(20_000 * p_core)
    assert same[core].sum() > 10 * opposite[core].sum()


def test_total_signal_counts():
    n = 10_000
    ds = synthesize_dataset(n_frames=n, grid=GridSpec(32, 4.0), noise=NoiseModel(0.0, 0.9, 0.0), seed=4)
    for row in ds.images:
        for img in row:
            assert abs(img.total - 0.9 * n) <= 5 * math.sqrt(n)


def test_dataset_rejects_negative_frames():
    with pytest.raises(InputError):
        synthesize_dataset(n_frames=-5, grid=GridSpec(16, 4.0))


def test_rotating_image_equals_rotating_modes():
    # Intensity of a superposition turns with the pattern: rendering then
    # rotating matches rotating each OAM mode (phases e^{-il pi/2}) then rendering.
    c = np.array([0.4, 0.5j, -0.3])
    img = render_intensity(c, GRID).probabilities
    phases = np.exp(-1j * np.array([-2, 0, 2]) * math.pi / 2)
    turned = render_intensity(c * phases, GRID).probabilities
    assert np.abs(np.rot90(img, -1) - turned).max() < 1e-15
    assert isinstance(rotate90(ModeField(GRID, img), 1), ModeField)
