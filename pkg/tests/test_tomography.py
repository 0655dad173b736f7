import math

import numpy as np
import pytest

from oracles import EQ3_AMPLITUDES, random_density, random_state
from tamqudit.errors import InputError
from tamqudit.measurement import (
    NOISELESS,
    CountsImage,
    NoiseModel,
    density_image,
    design_matrix,
    ideal_image,
    render_intensity,
    sample_counts,
    synthesize_dataset,
)
from tamqudit.modes import GridSpec, default_profile, hb_basis, oam_basis
from tamqudit.states import DensityMatrix, change_basis, fidelity, purity
from tamqudit.tomography import (
    REPORT_COLUMNS,
    _Likelihood,
    fit_coefficients,
    image_twin,
    invisible_directions,
    params_to_t,
    reconstruct_density,
    report,
    rho_to_params,
    summarize,
    t_to_rho,
    two_mode_block,
)

ANALYZERS = ("H", "V", "sigma+", "sigma-")
GRID = GridSpec(32, 4.0)
PROFILE = default_profile(GRID)


def ideal_images(inp, grid=GRID):
    return [ideal_image(inp, a, grid, default_profile(grid)) for a in ANALYZERS]


def overlap(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


# --- parametrization and likelihood ------------------------------------------


def test_cholesky_parametrization_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10):
        rho = random_density(4, rng)
        back = t_to_rho(params_to_t(rho_to_params(rho, jitter=0.0)))
        assert np.abs(back - rho).max() < 1e-12


def test_any_parameters_give_a_density_matrix():
    rng = np.random.default_rng(1)
    for _ in range(50):
        rho = t_to_rho(params_to_t(rng.normal(size=16) * 3))
        assert np.abs(rho - rho.conj().T).max() == 0 or np.abs(rho - rho.conj().T).max() < 1e-15
        assert abs(np.trace(rho) - 1) < 1e-12
        assert np.linalg.eigvalsh(rho).min() >= -1e-12


def test_likelihood_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    designs = [design_matrix(a, GRID, PROFILE) for a in ANALYZERS]
    data = [sample_counts(img, 5000, NoiseModel(), seed=k).counts.ravel().astype(float)
            for k, img in enumerate(ideal_images("H"))]
    lik = _Likelihood(designs, data, background=0.01)
    theta = rng.normal(size=16)
    _, grad = lik(theta)
    h = 1e-6
    fd = np.array([(lik(theta + h * e)[0] - lik(theta - h * e)[0]) / (2 * h) for e in np.eye(16)])
    assert np.abs(fd - grad).max() < 1e-7 * max(1.0, np.abs(grad).max())


# --- per-image fits ----------------------------------------------------------


def test_fit_recovers_pure_l0():
    img = render_intensity([0, 1, 0], GRID)
    fit = fit_coefficients(img, oam_basis(GRID, PROFILE))
    assert overlap(fit.coefficients, [0, 1, 0]) >= 1 - 1e-9
    assert fit.coefficients[np.flatnonzero(np.abs(fit.coefficients) > 1e-6)[0]].imag == 0


def test_fit_recovers_random_superpositions_up_to_image_twin():
    # c and conj(c[::-1]) render identical images, so either is a global optimum.
    rng = np.random.default_rng(3)
    basis = oam_basis(GRID, PROFILE)
    for _ in range(20):
        c = random_state(3, rng)
        fit = fit_coefficients(render_intensity(c, GRID), basis)
        best = max(overlap(fit.coefficients, c), overlap(fit.twin, c))
        assert best >= 1 - 1e-6
        assert overlap(image_twin(c, basis), np.conj(c[::-1])) > 1 - 1e-12


def test_fit_distinguishes_conjugate_fringe_orientation():
    basis = oam_basis(GRID, PROFILE)
    c = np.array([0.5, 0.5j, 0.5 + 0.5j]) / math.sqrt(1.25 + 0.25)
    c = c / np.linalg.norm(c)
    for truth in (c, np.conj(c)):
        fit = fit_coefficients(render_intensity(truth, GRID), basis)
        assert max(overlap(fit.coefficients, truth), overlap(fit.twin, truth)) >= 1 - 1e-6
    a = render_intensity(c, GRID).probabilities
    b = render_intensity(np.conj(c), GRID).probabilities
    assert np.abs(a - b).max() > 1e-3 * a.max()


def test_fit_in_hb_basis():
    basis = hb_basis(GRID, PROFILE)
    img = render_intensity(np.array([1, 2, 1]) / math.sqrt(6), GRID)  # HB20 over (l=-2, 0, 2)
    fit = fit_coefficients(img, basis)
    hb20 = [0, 1, 0]
    assert max(overlap(fit.coefficients, hb20), overlap(fit.twin, hb20)) >= 1 - 1e-9


def test_fit_rejects_empty_or_mismatched():
    basis = oam_basis(GRID, PROFILE)
    empty = CountsImage(GRID, np.zeros((32, 32), dtype=int))
    with pytest.raises(InputError):
        fit_coefficients(empty, basis)
    with pytest.raises(InputError):
        fit_coefficients(render_intensity([0, 1, 0], GridSpec(16, 4.0)), basis)


def test_fit_on_counts_is_close():
    c = np.array([0.6, -0.48, 0.64j])
    c = c / np.linalg.norm(c)
    counts = sample_counts(render_intensity(c, GRID), 200_000, NOISELESS, seed=4)
    fit = fit_coefficients(counts, oam_basis(GRID, PROFILE))
    assert max(overlap(fit.coefficients, c), overlap(fit.twin, c)) > 0.99


# --- density-matrix reconstruction -------------------------------------------


def test_noiseless_circular_reconstruction():
    res = reconstruct_density(ideal_images("sigma+"), GRID, PROFILE, input_pol="sigma+")
    assert res.fidelity_vs_ideal >= 0.999
    assert np.abs(res.rho.entries.imag).max() <= 1e-6
    assert res.converged


def test_reconstruction_is_psd_hermitian_unit_trace():
    ds = synthesize_dataset(inputs=("V",), n_frames=3000, grid=GRID, seed=5)
    res = reconstruct_density(ds.row("V"), GRID, PROFILE, input_pol="V", noise=ds.noise)
    rho = res.rho.entries
    assert np.array_equal(rho, rho.conj().T) or np.abs(rho - rho.conj().T).max() < 1e-15
    assert abs(np.trace(rho).real - 1) < 1e-12
    assert np.linalg.eigvalsh(rho).min() >= -1e-12


def test_likelihood_trace_is_monotone():
    ds = synthesize_dataset(inputs=("H",), n_frames=5000, grid=GRID, seed=6)
    res = reconstruct_density(ds.row("H"), GRID, PROFILE, input_pol="H", noise=ds.noise, tie_break=False)
    trace = np.array(res.trace)
    assert trace.size > 3
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace).max())


def test_maximally_mixed_data_gives_low_purity():
    images = []
    for k, a in enumerate(ANALYZERS):
        img = density_image(np.eye(4) / 4, a, GRID)
        images.append(sample_counts(img, 10_000, NoiseModel(), seed=20 + k))
    res = reconstruct_density(images, GRID, PROFILE, analyzers=ANALYZERS, noise=NoiseModel())
    assert purity(res.rho) <= 0.27
    # The bare likelihood maximum drifts towards the boundary on noise alone.
    bare = reconstruct_density(images, GRID, PROFILE, analyzers=ANALYZERS, noise=NoiseModel(), region_slack=None)
    assert bare.log_likelihood >= res.log_likelihood >= bare.log_likelihood - 0.5 - 1e-6


def test_likelihood_region_step_barely_moves_pure_states():
    ds = synthesize_dataset(inputs=("sigma+",), n_frames=10_000, grid=GRID, seed=8)
    a = reconstruct_density(ds.row("sigma+"), GRID, PROFILE, noise=ds.noise)
    b = reconstruct_density(ds.row("sigma+"), GRID, PROFILE, noise=ds.noise, region_slack=None)
    assert fidelity(a.rho, b.rho) > 0.995
    assert purity(a.rho) <= purity(b.rho) + 1e-12


def test_basis_covariance():
    images = ideal_images("H")
    circ = reconstruct_density(images, GRID, PROFILE, input_pol="H")
    lin = reconstruct_density(images, GRID, PROFILE, input_pol="H", basis="lin-hb")
    assert lin.rho.basis == "lin-hb"
    assert fidelity(change_basis(circ.rho, "lin-hb"), lin.rho) >= 0.999
    assert lin.fidelity_vs_ideal >= 0.999


def test_fidelity_degrades_gracefully_with_dark_counts():
    mean_fid = []
    for dark in (0.0, 1e-5, 1e-3):
        fids = []
        for seed in range(3):
            ds = synthesize_dataset(inputs=("sigma-",), n_frames=10_000, grid=GRID,
                                    noise=NoiseModel(dark, 1.0, 0.0), seed=seed)
            res = reconstruct_density(ds.row("sigma-"), GRID, PROFILE, input_pol="sigma-", noise=ds.noise)
            fids.append(res.fidelity_vs_ideal)
        mean_fid.append(np.mean(fids))
    assert mean_fid[1] <= mean_fid[0] + 0.01
    assert mean_fid[2] <= mean_fid[1] + 0.01


def test_unseen_directions_leave_images_unchanged():
    rho0 = np.outer(EQ3_AMPLITUDES["sigma+"], EQ3_AMPLITUDES["sigma+"].conj())
    designs = [design_matrix(a, GRID, PROFILE) for a in ANALYZERS]
    dirs = invisible_directions(rho0, designs)
    assert len(dirs) > 0
    for d in dirs:
        assert abs(np.trace(d)) < 1e-9
        assert np.abs(d - d.conj().T).max() < 1e-12
        moved = rho0 + 0.05 * d / np.abs(d).max()
        for f in designs:
            a = np.einsum("xi,ij,xj->x", f, rho0, f.conj()).real
            b = np.einsum("xi,ij,xj->x", f, moved, f.conj()).real
            assert np.abs(a / a.sum() - b / b.sum()).max() < 1e-9 * (a / a.sum()).max()


def test_reconstruction_deterministic():
    ds = synthesize_dataset(inputs=("H",), n_frames=2000, grid=GRID, seed=7)
    a = reconstruct_density(ds.row("H"), GRID, PROFILE, input_pol="H", noise=ds.noise)
    b = reconstruct_density(ds.row("H"), GRID, PROFILE, input_pol="H", noise=ds.noise)
    assert np.array_equal(a.rho.entries, b.rho.entries)


def test_reconstruction_input_errors():
    images = ideal_images("H")
    with pytest.raises(InputError):
        reconstruct_density(images[:3], GRID, PROFILE, analyzers=ANALYZERS[:3])
    empty = [CountsImage(GRID, np.zeros((32, 32), dtype=int), {"analyzer": a}) for a in ANALYZERS]
    with pytest.raises(InputError):
        reconstruct_density(empty, GRID, PROFILE)
    neg = [CountsImage(GRID, np.full((32, 32), -1), {"analyzer": a}) for a in ANALYZERS]
    with pytest.raises(InputError):
        reconstruct_density(neg, GRID, PROFILE)
    with pytest.raises(InputError):
        reconstruct_density(images, GRID, PROFILE, basis="lin-lg")
    with pytest.raises(InputError):
        reconstruct_density(images, GridSpec(16, 4.0), PROFILE)


# --- report ------------------------------------------------------------------


def _fake_result(inp):
    from tamqudit.tomography import ReconstructionResult

    rho = DensityMatrix(np.outer(EQ3_AMPLITUDES[inp], EQ3_AMPLITUDES[inp].conj()))
    return ReconstructionResult(rho, -1.0, 5, True, 1.0, inp)


def test_report_needs_four_results():
    with pytest.raises(InputError):
        report([_fake_result("H")] * 3)
    s = report([_fake_result(i) for i in ANALYZERS])
    assert [r["input"] for r in s.rows] == list(ANALYZERS)
    assert all(abs(r["purity"] - 1) < 1e-12 for r in s.rows)
    assert s.to_csv().splitlines()[0] == ",".join(REPORT_COLUMNS)
    text = s.to_text().splitlines()
    assert len(text) == 6 and len({len(line) for line in text}) == 1
    # V carries a global 1/i, so its density matrix is real.
    assert summarize([_fake_result("V")]).rows[0]["max_abs_imag"] < 1e-15
    psi = np.array([1, 1j, 0, 0]) / math.sqrt(2)
    from tamqudit.tomography import ReconstructionResult

    r = ReconstructionResult(DensityMatrix(np.outer(psi, psi.conj())), -1.0, 5, True, None, "x")
    row = summarize([r]).rows[0]
    assert row["max_abs_imag"] == pytest.approx(0.5)
    assert math.isnan(row["fidelity"])


def test_two_mode_block():
    rho = _fake_result("sigma+").rho
    block = two_mode_block(rho, (0, 3))
    np.testing.assert_allclose(block, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    with pytest.raises(InputError):
        two_mode_block(rho, (1, 2))
