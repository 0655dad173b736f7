"""The coupler as a quantum channel.

In-coupling sends circular polarization to a near-field TAM qubit
(``sigma+ -> |J+1>``, ``sigma- -> |J-1>``); out-coupling sends ``|J_n>`` to
``(|sigma->|l=n+1> - |sigma+>|l=n-1>)/sqrt2``. Their composition is an
isometry from polarization space into the four-slot ``circ-oam`` qudit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ValidityError
from .states import CIRC_SLOTS, JonesVector, SpinOrbitState, circular_coeffs, polarization

SQ2 = math.sqrt(2.0)

TAM_BASIS = ("J-1", "J+1")
TAM_BASIS_EXT = ("J-1", "J0", "J+1")
# Slots appended to circ-oam when the radial |J0> mode is allowed.
EXT_SLOTS = CIRC_SLOTS + (("sigma+", -1), ("sigma-", 1))

_SLOT_INDEX = {slot: k for k, slot in enumerate(EXT_SLOTS)}


@dataclass
class TamState:
    """Amplitudes over ``(|J-1>, |J+1>)`` or, extended, ``(|J-1>, |J0>, |J+1>)``."""

    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if self.amplitudes.size not in (2, 3):
            raise InputError(f"TAM state needs 2 or 3 amplitudes, got {self.amplitudes.size}")
        nrm = np.linalg.norm(self.amplitudes)
        if abs(nrm - 1.0) > 1e-12:
            raise ValidityError(f"TAM state not normalized (norm = {nrm!r})")

    @property
    def extended(self) -> bool:
        return self.amplitudes.size == 3

    def by_order(self) -> dict:
        names = TAM_BASIS_EXT if self.extended else TAM_BASIS
        orders = {"J-1": -1, "J0": 0, "J+1": 1}
        return {orders[k]: a for k, a in zip(names, self.amplitudes)}


def in_couple(p: JonesVector) -> TamState:
    c_plus, c_minus = circular_coeffs(p)
    return TamState([c_minus, c_plus])


def out_couple_vector(n: int) -> np.ndarray:
    """Image of ``|J_n>`` over the extended slots (``EXT_SLOTS``)."""
    out = np.zeros(len(EXT_SLOTS), dtype=complex)
    if n in (-1, 1):
        out[_SLOT_INDEX[("sigma-", n + 1)]] += 1 / SQ2
        out[_SLOT_INDEX[("sigma+", n - 1)]] -= 1 / SQ2
    elif n == 0:
        # Radial mode: sign and order as stated for the n=0 case, not the
        # general pattern (which would give the opposite overall sign).
        out[_SLOT_INDEX[("sigma+", -1)]] += 1 / SQ2
        out[_SLOT_INDEX[("sigma-", 1)]] -= 1 / SQ2
    else:
        raise InputError(f"no out-coupling rule for |J_{n}>")
    return out


def out_couple(t: TamState, extended: bool = False) -> SpinOrbitState:
    """Out-couple a TAM state into the free-space qudit.

    With ``extended=False`` the result lives in ``circ-oam``; a non-zero
    ``|J0>`` amplitude then raises, since its image leaves that basis.
    """
    amps = t.by_order()
    if not extended and abs(amps.get(0, 0.0)) > 0:
        raise InputError("|J0> component requires the extended out-coupling basis")
    out = sum(a * out_couple_vector(n) for n, a in amps.items())
    if extended:
        return SpinOrbitState(out, "circ-oam-ext")
    return SpinOrbitState(out[:4], "circ-oam")


def full_channel(p: JonesVector) -> SpinOrbitState:
    return out_couple(in_couple(p))


@dataclass(frozen=True)
class ChannelIsometry:
    """``V`` maps circular-polarization amplitudes ``(sigma+, sigma-)`` to ``circ-oam``."""

    V: np.ndarray

    def __post_init__(self):
        dev = np.max(np.abs(self.V.conj().T @ self.V - np.eye(self.V.shape[1])))
        if dev > 1e-12:
            raise ValidityError(f"V is not an isometry (max |V^dag V - I| = {dev:.3g})")

    def apply(self, rho_in: np.ndarray) -> np.ndarray:
        return self.V @ rho_in @ self.V.conj().T

    def kraus(self) -> list:
        return [self.V]


def as_isometry() -> ChannelIsometry:
    cols = [full_channel(polarization(n)).amplitudes for n in ("sigma+", "sigma-")]
    return ChannelIsometry(np.array(cols).T)


# --- two-qubit circuit realization ------------------------------------------

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / SQ2
I2 = np.eye(2, dtype=complex)
# Register order is |TAM, SAM>, index 2*tam + sam; SAM |0> = sigma+, |1> = sigma-.
# After M2 the same index is read as the circ-oam slot (|0,0> -> |1>, ...).
CNOT_SAM_TO_TAM = np.array(
    [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex
)


def _default_m2() -> np.ndarray:
    # Before M2 the TAM register holds |J-1> = |0>, |J+1> = |1> and the SAM
    # qubit is in the Hadamard basis. M2 sends |1,+> and |0,-> to the
    # out-coupled images of |J+1> and |J-1>, and the orthogonal pair to the
    # opposite-sign partners.
    plus = np.array([1, 1]) / SQ2
    minus = np.array([1, -1]) / SQ2
    e = np.eye(2)
    j_plus = out_couple_vector(1)[:4]
    j_minus = out_couple_vector(-1)[:4]
    j_plus_partner = np.abs(j_plus)
    j_minus_partner = np.abs(j_minus)
    pairs = [
        (np.kron(e[1], plus), j_plus),
        (np.kron(e[0], minus), j_minus),
        (np.kron(e[1], minus), j_plus_partner),
        (np.kron(e[0], plus), j_minus_partner),
    ]
    return sum(np.outer(out, inp.conj()) for inp, out in pairs)


@dataclass
class CircuitModel:
    """Two-qubit circuit: reset TAM, ``M1``, X on TAM, H on SAM, ``M2``.

    ``M1`` and ``M2`` are replaceable; ``x_on_tam`` and ``h_on_sam`` toggle the
    fixed single-qubit gates.
    """

    M1: np.ndarray = field(default_factory=lambda: CNOT_SAM_TO_TAM.copy())
    M2: np.ndarray = field(default_factory=_default_m2)
    x_on_tam: bool = True
    h_on_sam: bool = True

    def validate(self) -> None:
        for name in ("M1", "M2"):
            m = np.asarray(getattr(self, name), dtype=complex)
            if m.shape != (4, 4):
                raise ValidityError(f"{name} must be 4x4, got {m.shape}")
            dev = np.max(np.abs(m.conj().T @ m - np.eye(4)))
            if dev > 1e-12:
                raise ValidityError(f"{name} is not unitary (max deviation {dev:.3g})")

    def unitary(self) -> np.ndarray:
        """Unitary part applied after the reset."""
        self.validate()
        u = np.asarray(self.M1, dtype=complex)
        if self.x_on_tam:
            u = np.kron(PAULI_X, I2) @ u
        if self.h_on_sam:
            u = np.kron(I2, HADAMARD) @ u
        return np.asarray(self.M2, dtype=complex) @ u

    def kraus(self) -> list:
        """Kraus operators of the full two-qubit channel, reset included."""
        w = self.unitary()
        reset = [np.outer([1, 0], [1, 0]), np.outer([1, 0], [0, 1])]
        return [w @ np.kron(k, I2) for k in reset]

    def apply_channel(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus())


def circuit_apply(model: CircuitModel, p: JonesVector) -> SpinOrbitState:
    """Run the circuit on the SAM qubit prepared from ``p``.

    The reset leaves the TAM register in ``|0>`` whatever it held, so the
    input register after the dissipative step is the product ``|0> (x) p``.
    """
    sam = circular_coeffs(p)
    register = np.kron(np.array([1, 0], dtype=complex), sam)
    out = model.unitary() @ register
    return SpinOrbitState(out, "circ-oam")
