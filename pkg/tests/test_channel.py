import math

import numpy as np
import pytest

from oracles import EQ3_AMPLITUDES, JONES, random_state
from tamqudit.channel import (
    CircuitModel,
    TamState,
    as_isometry,
    circuit_apply,
    full_channel,
    in_couple,
    out_couple,
    out_couple_vector,
)
from tamqudit.errors import InputError, ValidityError
from tamqudit.states import JonesVector, change_basis, fidelity, polarization, purity

SQ2 = math.sqrt(2)


def jones(v):
    return JonesVector.from_array(v, renormalize=True)


def test_in_couple_circular():
    np.testing.assert_allclose(in_couple(polarization("sigma+")).amplitudes, [0, 1], atol=1e-15)
    np.testing.assert_allclose(in_couple(polarization("sigma-")).amplitudes, [1, 0], atol=1e-15)


def test_in_couple_h_gives_symmetric_superposition():
    np.testing.assert_allclose(in_couple(polarization("H")).amplitudes, [1 / SQ2, 1 / SQ2], atol=1e-15)


def test_in_couple_preserves_norm():
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = in_couple(jones(random_state(2, rng)))
        assert abs(np.linalg.norm(t.amplitudes) - 1) < 1e-12


def test_out_couple_basis_states():
    np.testing.assert_allclose(out_couple(TamState([0, 1])).amplitudes, [-1 / SQ2, 0, 0, 1 / SQ2], atol=1e-15)
    np.testing.assert_allclose(out_couple(TamState([1, 0])).amplitudes, [0, 1 / SQ2, -1 / SQ2, 0], atol=1e-15)


def test_out_couple_radial_mode_sign_kept():
    v = out_couple_vector(0)
    # (|s+, l=-1> - |s-, l=+1>)/sqrt2 on the two extra slots.
    np.testing.assert_allclose(v, [0, 0, 0, 0, 1 / SQ2, -1 / SQ2], atol=1e-15)
    ext = out_couple(TamState([0, 1, 0]), extended=True)
    assert ext.basis == "circ-oam-ext"
    with pytest.raises(InputError):
        out_couple(TamState([0, 1, 0]))


def test_out_couple_preserves_norm():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = out_couple(TamState(random_state(2, rng)))
        assert abs(np.linalg.norm(s.amplitudes) - 1) < 1e-12


@pytest.mark.parametrize("name", ["sigma+", "sigma-", "H", "V"])
def test_full_channel_matches_composite_map(name):
    out = full_channel(polarization(name))
    assert np.abs(out.amplitudes - EQ3_AMPLITUDES[name]).max() < 1e-12


def test_circular_outputs_orthogonal():
    a, b = (full_channel(polarization(n)).amplitudes for n in ("sigma+", "sigma-"))
    assert abs(np.vdot(a, b)) < 1e-15


def test_linear_outputs_live_on_two_lin_hb_slots():
    h = change_basis(full_channel(polarization("H")), "lin-hb").amplitudes
    np.testing.assert_allclose(np.abs(h), [1 / SQ2, 1 / SQ2, 0, 0], atol=1e-12)
    v = change_basis(full_channel(polarization("V")), "lin-hb").amplitudes
    np.testing.assert_allclose(np.abs(v), [0, 0, 1 / SQ2, 1 / SQ2], atol=1e-12)


def test_channel_is_linear():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p1, p2 = random_state(2, rng), random_state(2, rng)
        a, b = rng.normal(size=2) + 1j * rng.normal(size=2)
        mix = a * p1 + b * p2
        nrm = np.linalg.norm(mix)
        lhs = full_channel(jones(mix)).amplitudes
        rhs = (a * full_channel(jones(p1)).amplitudes + b * full_channel(jones(p2)).amplitudes) / nrm
        assert np.abs(lhs - rhs).max() < 1e-12


def test_channel_covariance():
    # The unitary taking (s+, s-) to (H, V) takes their outputs along too.
    v = as_isometry().V
    u_in = np.array([circ(JONES["H"]), circ(JONES["V"])]).T
    for name, col in (("H", 0), ("V", 1)):
        assert np.abs(v @ u_in[:, col] - full_channel(polarization(name)).amplitudes).max() < 1e-12


def circ(j):
    return np.array([(j[0] - 1j * j[1]) / SQ2, (j[0] + 1j * j[1]) / SQ2])


def test_isometry():
    iso = as_isometry()
    assert np.abs(iso.V.conj().T @ iso.V - np.eye(2)).max() < 1e-12
    lam = np.sort(np.linalg.eigvalsh(iso.V @ iso.V.conj().T))
    np.testing.assert_allclose(lam, [0, 0, 1, 1], atol=1e-10)
    out = iso.apply(np.eye(2) / 2)
    assert abs(np.trace(out) - 1) < 1e-12
    assert abs(purity(out) - 0.5) < 1e-12
    with pytest.raises(ValidityError):
        type(iso)(np.ones((4, 2)))


@pytest.mark.parametrize("name", ["sigma+", "sigma-", "H", "V"])
def test_default_circuit_matches_channel(name):
    p = polarization(name)
    assert abs(fidelity(circuit_apply(CircuitModel(), p), full_channel(p)) - 1) < 1e-10
    assert np.abs(circuit_apply(CircuitModel(), p).amplitudes - full_channel(p).amplitudes).max() < 1e-12


def test_circuit_negative_control():
    model = CircuitModel(M2=np.eye(4, dtype=complex))
    worst = min(fidelity(circuit_apply(model, polarization(n)), full_channel(polarization(n)))
                for n in ("sigma+", "sigma-", "H", "V"))
    assert worst < 1 - 1e-3


def test_circuit_rejects_non_unitary():
    with pytest.raises(ValidityError):
        circuit_apply(CircuitModel(M1=np.ones((4, 4))), polarization("H"))


def test_circuit_reset_discards_tam_register():
    # The Kraus form, acting on any TAM register state, reproduces the pure output.
    model = CircuitModel()
    kraus = model.kraus()
    assert np.abs(sum(k.conj().T @ k for k in kraus) - np.eye(4)).max() < 1e-12
    p = circ(JONES["H"])
    for tam in (np.array([1, 0]), np.array([0, 1]), np.array([1, 1j]) / SQ2):
        reg = np.kron(tam, p)
        out = model.apply_channel(np.outer(reg, reg.conj()))
        target = full_channel(polarization("H")).amplitudes
        assert abs(np.real(target.conj() @ out @ target) - 1) < 1e-12
