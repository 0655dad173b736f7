"""State reconstruction from analyzer-resolved photon-count images.

Two estimators:

* :func:`fit_coefficients` fits one image to a pure superposition of spatial
  modes by least squares on normalized intensities.
* :func:`reconstruct_density` fits a 4x4 density matrix jointly to the four
  analyzer images of one input by maximum likelihood, with
  ``rho = T^dag T / Tr(T^dag T)`` and ``T`` lower triangular.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .channel import full_channel
from .errors import InputError, NonConvergenceError
from .measurement import CountsImage, IntensityImage, NoiseModel, design_matrix
from .modes import GridSpec, RadialProfile, default_profile, inner_product, oam_basis
from .states import (
    LIN_HB_IN_CIRC,
    DensityMatrix,
    change_basis,
    fidelity,
    polarization,
    purity,
)

N_RESTARTS = 8
LOG_FLOOR = 1e-12
# Relative singular-value cut for directions the images cannot see.
NULL_RTOL = 1e-9
REQUIRED_ANALYZERS = ("H", "V", "sigma+", "sigma-")


def _image_data(img) -> np.ndarray:
    if isinstance(img, CountsImage):
        return np.asarray(img.counts, dtype=float).ravel()
    if isinstance(img, IntensityImage):
        return np.asarray(img.probabilities, dtype=float).ravel()
    raise InputError(f"expected a counts or intensity image, got {type(img).__name__}")


# --- per-image mode fits ----------------------------------------------------


@dataclass
class CoefficientFit:
    coefficients: np.ndarray
    residual: float
    basis: str
    twin: np.ndarray | None = None
    converged: bool = True
    restarts: list = field(default_factory=list)


def _gauge(c: np.ndarray) -> np.ndarray:
    c = c / np.linalg.norm(c)
    big = np.flatnonzero(np.abs(c) >= 1e-6 * np.abs(c).max())[0]
    return c * np.exp(-1j * np.angle(c[big]))


def _oam_decomposition(basis) -> np.ndarray | None:
    """Matrix ``B`` with ``basis[k] = sum_l B[l, k] u_l`` or ``None`` if outside the span."""
    grid = basis[0].grid
    try:
        oam = oam_basis(grid)
    except InputError:
        return None
    b = np.array([[inner_product(u, m) for m in basis] for u in oam])
    for k, m in enumerate(basis):
        rebuilt = sum(b[l, k] * oam[l].values for l in range(len(oam)))
        if np.max(np.abs(rebuilt - m.values)) > 1e-8 * np.max(np.abs(m.values)):
            return None
    return b


def image_twin(coeffs, basis) -> np.ndarray | None:
    """Coefficients of the mirror-conjugate superposition with an identical image.

    Over OAM charges ``(-2, 0, 2)`` sharing one radial profile per ``|l|``,
    ``c`` and ``conj(c[::-1])`` give the same intensity everywhere.
    """
    b = _oam_decomposition(basis)
    if b is None:
        return None
    c_oam = b @ np.asarray(coeffs, dtype=complex)
    twin_oam = np.conj(c_oam[::-1])
    twin = np.linalg.lstsq(b, twin_oam, rcond=None)[0]
    return _gauge(twin)


def fit_coefficients(img, basis, label: str = "", restarts: int = N_RESTARTS, seed: int = 7) -> CoefficientFit:
    """Least-squares fit of an image to ``|sum_k c_k basis_k|^2``.

    Both data and model are normalized to unit sum over pixels, so absolute
    rates do not enter. Starts are drawn from a fixed generator, which makes
    the result deterministic.
    """
    data = _image_data(img)
    total = data.sum()
    if total <= 0:
        raise InputError("image has no counts to fit")
    data = data / total
    if not basis:
        raise InputError("empty mode basis")
    grid = basis[0].grid
    if grid != img.grid or any(m.grid != grid for m in basis):
        raise InputError("basis modes and image must share one grid")
    modes = np.array([m.values.ravel() for m in basis])
    k = len(basis)

    def split(x):
        return x[:k] + 1j * x[k:]

    def resid(x):
        f = split(x) @ modes
        inten = np.abs(f) ** 2
        return data - inten / inten.sum()

    def jac(x):
        f = split(x) @ modes
        inten = np.abs(f) ** 2
        s = inten.sum()
        g = np.conj(f) * modes  # (k, npix)
        d_int = np.concatenate([2 * g.real, -2 * g.imag])
        d_model = d_int / s - np.outer(d_int.sum(axis=1), inten) / s**2
        return -d_model.T

    rng = np.random.default_rng(seed)
    starts = [np.eye(k)[j] for j in range(k)]
    while len(starts) < restarts:
        starts.append(rng.normal(size=k) + 1j * rng.normal(size=k))
    best, log = None, []
    for c0 in starts[:restarts]:
        x0 = np.concatenate([np.real(c0), np.imag(c0)]).astype(float)
        res = optimize.least_squares(resid, x0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        mse = float(np.mean(res.fun**2))
        log.append({"mse": mse, "status": int(res.status), "nfev": int(res.nfev)})
        if best is None or mse < best[0]:
            best = (mse, res)
    mse, res = best
    c = _gauge(split(res.x))
    fit = CoefficientFit(c, mse, label, image_twin(c, basis), converged=any(r["status"] > 0 for r in log), restarts=log)
    if not fit.converged:
        raise NonConvergenceError("coefficient fit did not converge in any restart", best=fit)
    return fit


# --- joint maximum-likelihood density matrix --------------------------------


@dataclass
class ReconstructionResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    fidelity_vs_ideal: float | None
    input_pol: str | None = None
    grad_norm: float = 0.0
    trace: list = field(default_factory=list)
    restarts: list = field(default_factory=list)


N_PARAMS = 16
_TRIL = np.tril_indices(4, -1)


def params_to_t(theta: np.ndarray) -> np.ndarray:
    t = np.diag(theta[:4].astype(complex))
    t[_TRIL] = theta[4:10] + 1j * theta[10:16]
    return t


def t_to_rho(t: np.ndarray) -> np.ndarray:
    a = t.conj().T @ t
    return a / np.trace(a).real


def rho_to_params(rho: np.ndarray, jitter: float = 1e-6) -> np.ndarray:
    """Parameters of a lower-triangular ``T`` with ``T^dag T`` proportional to ``rho``."""
    # Reversed-order Cholesky: flipping rows and columns turns a lower factor
    # of the flipped matrix into the lower-triangular T we need.
    p = np.eye(4)[::-1]
    m = p @ (rho + jitter * np.eye(4)) @ p
    lower = np.linalg.cholesky(m.conj())  # m* = L L^dag
    t = p @ lower.T @ p  # lower triangular, t^dag t = rho + jitter
    return np.concatenate([t.diagonal().real, t[_TRIL].real, t[_TRIL].imag])


class _Likelihood:
    """Negative log-likelihood per count over the analyzer images, as a function of ``T``."""

    def __init__(self, designs, data, background):
        self.f_nz, self.w_nz, self.gram = [], [], []
        self.n_pix = []
        for f, n in zip(designs, data):
            nz = n > 0
            self.f_nz.append(f[nz])
            self.w_nz.append(n[nz])
            self.gram.append(f.conj().T @ f)
            self.n_pix.append(f.shape[0])
        self.total = float(sum(w.sum() for w in self.w_nz))
        # log of the empirical pixel distribution; subtracting it per pixel
        # turns the objective into a KL divergence that is near zero at the
        # optimum, so tiny improvements are not lost to rounding.
        self.log_emp = [np.log(w / w.sum()) for w in self.w_nz]
        self.background = background

    def log_likelihood(self, rho) -> float:
        out = 0.0
        b = self.background
        for f, w, g, n_pix in zip(self.f_nz, self.w_nz, self.gram, self.n_pix):
            inten = np.einsum("xj,xj->x", f @ rho, f.conj()).real
            z = np.trace(rho @ g).real
            q = (1 - b) * inten / z + b / n_pix
            out += float(w @ np.log(np.maximum(q, LOG_FLOOR)))
        return out

    def value_and_grad_rho(self, rho):
        """Objective and Hermitian gradient ``G`` with ``d obj = Tr(G d rho)``."""
        b = self.background
        ll = 0.0
        grad = np.zeros((4, 4), dtype=complex)
        for f, w, g, n_pix, log_e in zip(self.f_nz, self.w_nz, self.gram, self.n_pix, self.log_emp):
            amp = f @ rho
            inten = np.einsum("xj,xj->x", amp, f.conj()).real
            z = np.trace(rho @ g).real
            q_raw = (1 - b) * inten / z + b / n_pix
            q = np.maximum(q_raw, LOG_FLOOR)
            ll += float(w @ (np.log(q) - log_e))
            ratio = np.where(q_raw > LOG_FLOOR, w / q, 0.0)
            wp = (f.conj().T * ratio) @ f  # sum_x ratio_x F_x^dag F_x
            grad += (1 - b) * (wp / z - (ratio @ inten) / z**2 * g)
        return -ll / self.total, -grad / self.total

    def __call__(self, theta):
        return _pull_back(theta, self.value_and_grad_rho)


def _pull_back(theta, value_and_grad_rho):
    """Value and ``theta``-gradient of a function of ``rho = T^dag T / Tr``."""
    t = params_to_t(theta)
    a = t.conj().T @ t
    tr = np.trace(a).real
    rho = a / tr
    obj, g = value_and_grad_rho(rho)
    g_a = (g - np.trace(g @ rho).real * np.eye(4)) / tr
    m = g_a @ t.conj().T
    # d obj = 2 Re sum_ij M[j, i] dT[i, j]
    d_t = 2 * m.T
    grad = np.concatenate([d_t.diagonal().real, d_t[_TRIL].real, -d_t[_TRIL].imag])
    return obj, grad


def least_pure_in_region(rho0: np.ndarray, lik: _Likelihood, slack: float) -> np.ndarray:
    """Least pure state whose log-likelihood is within ``slack`` of ``rho0``'s.

    With per-image normalization some combinations of entries, such as the
    balance between the two circular analyzer blocks near the maximally mixed
    state, are barely constrained by the data; the likelihood maximum then
    wanders to the boundary on sampling noise alone. Picking the highest
    entropy state inside the likelihood-ratio region removes that drift,
    while well-determined states move by much less than their statistical
    error.
    """
    obj0, _ = lik.value_and_grad_rho(rho0)
    budget = slack / lik.total

    def purity_and_grad(theta):
        return _pull_back(theta, lambda r: (float(np.vdot(r, r).real), 2 * r))

    def margin(theta):
        return (obj0 + budget - lik(theta)[0]) * lik.total

    def margin_grad(theta):
        return -lik(theta)[1] * lik.total

    theta0 = rho_to_params(rho0)
    res = optimize.minimize(
        purity_and_grad, theta0, jac=True, method="SLSQP",
        constraints=[{"type": "ineq", "fun": margin, "jac": margin_grad}],
        options={"ftol": 1e-12, "maxiter": 500},
    )
    candidates = [rho0, t_to_rho(params_to_t(theta0)), t_to_rho(params_to_t(res.x))]
    ok = [r for r in candidates if lik.value_and_grad_rho(r)[0] <= obj0 + budget]
    best = min(ok, key=lambda r: float(np.vdot(r, r).real))
    return (best + best.conj().T) / 2


def _hermitian_basis(d: int = 4) -> np.ndarray:
    """Real basis of d x d Hermitian matrices: diagonal, symmetric, antisymmetric."""
    out = []
    for i in range(d):
        e = np.zeros((d, d), dtype=complex)
        e[i, i] = 1
        out.append(e)
    for i, j in zip(*np.triu_indices(d, 1)):
        e = np.zeros((d, d), dtype=complex)
        e[i, j] = e[j, i] = 1
        out.append(e)
    for i, j in zip(*np.triu_indices(d, 1)):
        e = np.zeros((d, d), dtype=complex)
        e[i, j], e[j, i] = 1j, -1j
        out.append(e)
    return np.array(out)


def invisible_directions(rho0: np.ndarray, designs, rtol: float = NULL_RTOL) -> np.ndarray:
    """Traceless Hermitian directions that leave every normalized image unchanged.

    A direction ``D`` qualifies when each image of ``D`` is a multiple of the
    image of ``rho0``; then ``rho0 + s D`` gives identical normalized images
    for every ``s`` that keeps it positive.
    """
    basis = _hermitian_basis(rho0.shape[0])
    blocks = []
    n_img = len(designs)
    for a, f in enumerate(designs):
        # pixel intensity of each basis matrix: sum_ij F_xi E_ij conj(F_xj)
        outer = (f[:, :, None] * f.conj()[:, None, :]).reshape(f.shape[0], -1)
        cols = (outer @ basis.reshape(len(basis), -1).T).real
        ref = np.einsum("xj,xj->x", f @ rho0, f.conj()).real
        scale = np.zeros((f.shape[0], n_img))
        scale[:, a] = -ref
        blocks.append(np.hstack([cols, scale]))
    trace_row = np.zeros((1, len(basis) + n_img))
    trace_row[0, : rho0.shape[0]] = 1.0
    m = np.vstack(blocks + [trace_row * np.abs(blocks[0]).max()])
    # Reduce the tall system to its square R factor before the SVD.
    _, sv, vt = np.linalg.svd(np.linalg.qr(m, mode="r"))
    rank = int(np.sum(sv > rtol * sv[0]))
    null = vt[rank:, : len(basis)]
    null = null[np.linalg.norm(null, axis=1) > 1e-8]
    if null.size == 0:
        return np.zeros((0,) + rho0.shape, dtype=complex)
    q, r = np.linalg.qr(null.T)
    q = q[:, np.abs(np.diag(r)) > 1e-8]
    return np.einsum("km,kij->mij", q, basis)


def least_pure_equivalent(rho0: np.ndarray, designs) -> np.ndarray:
    """Least pure positive state with the same normalized images as ``rho0``."""
    dirs = invisible_directions(rho0, designs)
    if len(dirs) == 0:
        return rho0
    gram = np.einsum("mij,nij->mn", dirs.conj(), dirs).real
    lin = np.einsum("mij,ij->m", dirs.conj(), rho0).real

    def purity_of(s):
        return float(np.real(np.vdot(rho0, rho0))) + 2 * lin @ s + s @ gram @ s

    def min_eig(s):
        return np.linalg.eigvalsh(rho0 + np.tensordot(s, dirs, axes=1))[0]

    res = optimize.minimize(
        purity_of, np.zeros(len(dirs)), jac=lambda s: 2 * lin + 2 * gram @ s, method="SLSQP",
        constraints=[{"type": "ineq", "fun": min_eig}], options={"ftol": 1e-15, "maxiter": 500},
    )
    s = res.x if min_eig(res.x) >= -1e-12 and purity_of(res.x) <= purity_of(np.zeros(len(dirs))) else np.zeros(len(dirs))
    rho = rho0 + np.tensordot(s, dirs, axes=1)
    rho = (rho + rho.conj().T) / 2
    lam, vec = np.linalg.eigh(rho)
    lam = np.clip(lam, 0.0, None)
    rho = (vec * lam) @ vec.conj().T
    return rho / np.trace(rho).real


def reconstruct_density(
    images,
    grid: GridSpec | None = None,
    profile: RadialProfile | None = None,
    analyzers=None,
    input_pol: str | None = None,
    basis: str = "circ-oam",
    noise: NoiseModel | None = None,
    restarts: int = N_RESTARTS,
    seed: int = 11,
    tie_break: bool = True,
    region_slack: float | None = 0.5,
) -> ReconstructionResult:
    """Maximum-likelihood density matrix for one input polarization.

    Args:
        images: four counts (or probability) images, one per analyzer.
        analyzers: analyzer names; read from image metadata when omitted.
        basis: ``"circ-oam"`` or ``"lin-hb"``; the basis ``rho`` is fitted
            and returned in.
        noise: when given, the expected share of uniform background counts is
            folded into the pixel model so dark counts are not mistaken for
            signal.
        tie_break: the four images do not pin every entry of ``rho`` (for
            instance ``Im rho_12``). When set, the maximum-likelihood state is
            replaced by the least pure state that produces exactly the same
            normalized images, which is unique. This leaves the likelihood
            unchanged.
        region_slack: for count data, the state finally returned is the least
            pure one whose log-likelihood lies within this many units of the
            maximum (0.5 is the one-standard-error likelihood-ratio region).
            ``None`` returns the likelihood maximum itself.

    Raises:
        InputError: missing analyzers, mismatched grids or empty images.
        NonConvergenceError: no restart met the convergence test.
    """
    images = list(images)
    if analyzers is None:
        analyzers = [img.meta.get("analyzer") for img in images]
    if len(images) != len(analyzers):
        raise InputError("one analyzer name per image is required")
    missing = set(REQUIRED_ANALYZERS) - set(analyzers)
    if missing:
        raise InputError(f"images must span analyzers {REQUIRED_ANALYZERS}; missing {sorted(missing)}")
    grid = grid or images[0].grid
    profile = profile or default_profile(grid)
    if any(img.grid != grid for img in images):
        raise InputError("all images must share the reconstruction grid")
    if input_pol is None:
        input_pol = images[0].meta.get("input_pol")

    data = [_image_data(img) for img in images]
    if any(d.sum() <= 0 for d in data):
        raise InputError("every analyzer image needs at least one count")
    if any(np.any(d < 0) for d in data):
        raise InputError("negative counts")
    designs = [design_matrix(a, grid, profile) for a in analyzers]
    if basis == "lin-hb":
        designs = [f @ LIN_HB_IN_CIRC for f in designs]
    elif basis != "circ-oam":
        raise InputError(f"unknown basis {basis!r}")
    background = noise.background_fraction(grid.n_pixels**2) if noise is not None else 0.0
    lik = _Likelihood(designs, data, background)

    rng = np.random.default_rng(seed)
    runs = []
    for r in range(restarts):
        theta0 = rng.normal(size=N_PARAMS)
        trace = []

        def record(xk, trace=trace):
            trace.append(lik.log_likelihood(t_to_rho(params_to_t(xk))))

        res = optimize.minimize(
            lik, theta0, jac=True, method="L-BFGS-B", callback=record,
            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000, "maxcor": 30},
        )
        gnorm = float(np.linalg.norm(res.jac))
        ok = bool(res.success) or gnorm < 1e-6
        runs.append({"objective": float(res.fun), "iterations": int(res.nit), "converged": ok,
                     "grad_norm": gnorm, "message": str(res.message), "_x": res.x, "_trace": trace})

    ranked = sorted(range(len(runs)), key=lambda i: (not runs[i]["converged"], runs[i]["objective"], i))
    best = runs[ranked[0]]
    rho = t_to_rho(params_to_t(best["_x"]))
    rho = (rho + rho.conj().T) / 2
    if tie_break:
        rho = least_pure_equivalent(rho, designs)
    if region_slack is not None and all(isinstance(img, CountsImage) for img in images):
        rho = least_pure_in_region(rho, lik, region_slack)
    dm = DensityMatrix(rho, basis)
    fid = None
    if input_pol is not None:
        ideal = change_basis(full_channel(polarization(input_pol)), basis)
        fid = fidelity(dm, ideal)
    result = ReconstructionResult(
        rho=dm,
        log_likelihood=lik.log_likelihood(rho),
        iterations=best["iterations"],
        converged=best["converged"],
        fidelity_vs_ideal=fid,
        input_pol=input_pol,
        grad_norm=best["grad_norm"],
        trace=best["_trace"],
        restarts=[{k: v for k, v in run.items() if not k.startswith("_")} for run in runs],
    )
    if not result.converged:
        raise NonConvergenceError(
            f"likelihood maximization did not converge in {restarts} restarts "
            f"(final gradient norm {best['grad_norm']:.3g})",
            best=result,
            grad_norm=best["grad_norm"],
        )
    return result


def two_mode_block(rho: DensityMatrix, slots) -> np.ndarray:
    """Renormalized 2x2 block of ``rho`` on two circ-oam slots (0-based)."""
    if rho.basis != "circ-oam":
        rho = change_basis(rho, "circ-oam")
    idx = np.asarray(slots)
    block = rho.entries[np.ix_(idx, idx)]
    tr = np.trace(block).real
    if tr <= 0:
        raise InputError(f"no weight on slots {tuple(slots)}")
    return block / tr


# --- summary ----------------------------------------------------------------

REPORT_COLUMNS = ("input", "fidelity", "purity", "max_abs_imag", "log_likelihood", "iterations", "converged")


@dataclass
class Summary:
    rows: list

    def to_dict(self) -> dict:
        return {"columns": list(REPORT_COLUMNS), "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([_csv_cell(row[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [list(REPORT_COLUMNS)]
        for row in self.rows:
            cells.append([_text_cell(row[c]) for c in REPORT_COLUMNS])
        widths = [max(len(r[i]) for r in cells) for i in range(len(REPORT_COLUMNS))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _csv_cell(v):
    return repr(v) if isinstance(v, float) else v


def _text_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}" if abs(v) >= 1e-4 or v == 0 else f"{v:.3e}"
    return str(v)


def report(results) -> Summary:
    """Per-input table of fidelity, purity and largest imaginary entry."""
    results = list(results)
    if len(results) < 4:
        raise InputError(f"report needs the 4 input reconstructions, got {len(results)}")
    return summarize(results)


def summarize(results) -> Summary:
    rows = []
    for r in results:
        rows.append({
            "input": r.input_pol,
            "fidelity": float(r.fidelity_vs_ideal) if r.fidelity_vs_ideal is not None else math.nan,
            "purity": purity(r.rho),
            "max_abs_imag": float(np.max(np.abs(r.rho.entries.imag))),
            "log_likelihood": float(r.log_likelihood),
            "iterations": int(r.iterations),
            "converged": bool(r.converged),
        })
    return Summary(rows)
