"""Axial vibration of a two-material periodic rod: training data and oracles.

Blocks alternate between length 1 (wavenumber ``omega``) and length ``gamma``
(wavenumber ``omega / sigma``).  On each block the displacement is
``u = b1 exp(i k x) + b2 exp(-i k x)`` in the global coordinate x, and both
``u`` and ``f = du/dx`` are continuous at the interfaces.

The finite forcing problem drives the left end with ``f(0) = 1``.  At the
right end either the last block carries no left-going wave (``"open"``) or
the state is matched to the outgoing Bloch wave of the infinite structure
(``"bloch"``), which removes the reflection from the truncation.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

RESONANCE_SHIFT = 1e-6
TERMINATIONS = ("bloch", "open")
VALUE_MODES = ("complex", "real", "abs")


class FloquetError(ValueError):
    pass


class ResonanceError(FloquetError):
    pass


class NodeError(FloquetError):
    pass


@dataclass(frozen=True)
class RodSpec:
    gamma: float = 1.0
    sigma: float = 0.2
    n_blocks: int = 20
    termination: str = "bloch"

    def __post_init__(self):
        if not (self.gamma > 0 and self.sigma > 0):
            raise FloquetError("gamma and sigma must be positive")
        if self.n_blocks < 4 or self.n_blocks % 2:
            raise FloquetError("n_blocks must be an even integer >= 4")
        if self.termination not in TERMINATIONS:
            raise FloquetError(f"termination must be one of {TERMINATIONS}")

    @property
    def period(self) -> float:
        return 1.0 + self.gamma

    def block_lengths(self) -> np.ndarray:
        return np.array([1.0 if i % 2 == 0 else self.gamma for i in range(self.n_blocks)])

    def wavenumbers(self, omega: float) -> np.ndarray:
        return np.array([omega if i % 2 == 0 else omega / self.sigma
                         for i in range(self.n_blocks)])


def cell_transfer_matrix(omega: float, spec: RodSpec) -> np.ndarray:
    """Maps (u, du/dx) at the start of a period to the end of it."""

    def block(k, length):
        c, s = math.cos(k * length), math.sin(k * length)
        return np.array([[c, s / k], [-k * s, c]])

    return block(omega / spec.sigma, spec.gamma) @ block(omega, 1.0)


def outgoing_bloch_state(omega: float, spec: RodSpec) -> np.ndarray:
    """State vector of the Bloch wave that carries energy (or decays) to the right."""
    mu, vecs = np.linalg.eig(cell_transfer_matrix(omega, spec).astype(complex))
    if abs(mu[0] - mu[1]) < 1e-7:
        raise ResonanceError(f"band edge at omega={omega}: Bloch waves coalesce")
    if abs(abs(mu[0]) - 1.0) < 1e-9 and abs(abs(mu[1]) - 1.0) < 1e-9:
        # pass band: positive flux Im(conj(u) u') travels right
        flux = [float(np.imag(np.conj(vecs[0, j]) * vecs[1, j])) for j in range(2)]
        j = int(np.argmax(flux))
    else:
        j = int(np.argmin(np.abs(mu)))
    return vecs[:, j]


@dataclass(frozen=True)
class ForcingSolution:
    omega: float
    spec: RodSpec
    coeffs: np.ndarray          # (n_blocks, 2) complex: b_{i,1}, b_{i,2}
    edges: np.ndarray           # block boundaries, edges[0] = 0
    wavenumbers: np.ndarray
    residual: float             # ||A b - rhs|| / ||rhs||

    def block_of(self, x: float) -> int:
        i = int(np.searchsorted(self.edges, x, side="right")) - 1
        return min(max(i, 0), self.spec.n_blocks - 1)

    def displacement(self, x: float, block: int | None = None) -> complex:
        i = self.block_of(x) if block is None else block
        k = self.wavenumbers[i]
        b1, b2 = self.coeffs[i]
        return complex(b1 * np.exp(1j * k * x) + b2 * np.exp(-1j * k * x))

    def traction(self, x: float, block: int | None = None) -> complex:
        i = self.block_of(x) if block is None else block
        k = self.wavenumbers[i]
        b1, b2 = self.coeffs[i]
        return complex(1j * k * (b1 * np.exp(1j * k * x) - b2 * np.exp(-1j * k * x)))


def _assemble(omega: float, spec: RodSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = spec.n_blocks
    k = spec.wavenumbers(omega)
    edges = np.concatenate([[0.0], np.cumsum(spec.block_lengths())])
    A = np.zeros((2 * n, 2 * n), dtype=complex)
    rhs = np.zeros(2 * n, dtype=complex)
    for i in range(n - 1):
        x = edges[i + 1]
        for blk, sign in ((i, 1.0), (i + 1, -1.0)):
            e = np.exp(1j * k[blk] * x)
            A[2 * i, 2 * blk] += sign * e
            A[2 * i, 2 * blk + 1] += sign / e
            A[2 * i + 1, 2 * blk] += sign * 1j * k[blk] * e
            A[2 * i + 1, 2 * blk + 1] -= sign * 1j * k[blk] / e
    row = 2 * (n - 1)
    A[row, 0], A[row, 1] = 1j * k[0], -1j * k[0]
    rhs[row] = 1.0
    row += 1
    if spec.termination == "open":
        A[row, 2 * n - 1] = 1.0
    else:
        v = outgoing_bloch_state(omega, spec)
        x, kn = edges[-1], k[-1]
        e = np.exp(1j * kn * x)
        # (u, u') parallel to v:  v1 * u - v0 * u' = 0
        A[row, 2 * n - 2] = v[1] * e - v[0] * 1j * kn * e
        A[row, 2 * n - 1] = v[1] / e + v[0] * 1j * kn / e
    return A, rhs, edges, k


def solve_forcing(omega: float, spec: RodSpec) -> ForcingSolution:
    """Solve the interface/forcing system by LU with partial pivoting."""
    if not omega > 0:
        raise FloquetError("omega must be positive (omega = 0 is a rigid-body mode)")
    A, rhs, edges, k = _assemble(omega, spec)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-13 * diag.max():
        raise ResonanceError(f"forcing system is singular at omega={omega}")
    b = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    residual = float(np.linalg.norm(A @ b - rhs) / np.linalg.norm(rhs))
    if not residual <= 1e-10:
        raise ResonanceError(f"ill-conditioned forcing system at omega={omega} "
                             f"(residual {residual:.2e})")
    return ForcingSolution(omega, spec, b.reshape(-1, 2), edges, k, residual)


def measurement_point(spec: RodSpec) -> float:
    """Middle of the first block of the period just left of the rod centre."""
    return (spec.n_blocks // 4 - 1) * spec.period + 0.5


def floquet_ratio(x: float, omega: float, spec: RodSpec,
                  solution: ForcingSolution | None = None) -> complex:
    """Displacement ratio between x and x + one period."""
    sol = solve_forcing(omega, spec) if solution is None else solution
    end = sol.edges[-1]
    if not (0.0 < x and x + spec.period < end):
        raise FloquetError("both ratio points must lie inside the rod")
    den = sol.displacement(x + spec.period)
    if abs(den) < 1e-12:
        raise NodeError(f"displacement node at x={x + spec.period}, omega={omega}")
    return sol.displacement(x) / den


@dataclass(frozen=True)
class FloquetSample:
    omega: float
    ratio: complex

    def value(self, mode: str = "complex") -> complex | float:
        if mode == "complex":
            return self.ratio
        if mode == "real":
            return self.ratio.real
        if mode == "abs":
            return abs(self.ratio)
        raise FloquetError(f"unknown value mode {mode!r}; choose from {VALUE_MODES}")

    @property
    def lambda_value(self) -> float:
        return self.ratio.real


def sample_at(omega: float, spec: RodSpec, x: float | None = None) -> FloquetSample:
    """Floquet ratio at one frequency, nudging off singular points."""
    x = measurement_point(spec) if x is None else x
    w = max(float(omega), RESONANCE_SHIFT)
    for attempt in range(8):
        try:
            return FloquetSample(float(omega), floquet_ratio(x, w, spec))
        except (ResonanceError, NodeError):
            w += RESONANCE_SHIFT * (attempt + 1)
    raise ResonanceError(f"could not step off a singular point near omega={omega}")


def generate_dataset(npts: int, omega_range: tuple[float, float] = (0.0, 2.0),
                     spec: RodSpec = RodSpec()) -> list[FloquetSample]:
    """``npts`` evenly spaced frequencies over ``omega_range`` (endpoints included)."""
    if npts < 3:
        raise FloquetError("need at least 3 data points")
    lo, hi = omega_range
    if not hi > lo:
        raise FloquetError("omega range must be increasing")
    return [sample_at(w, spec) for w in np.linspace(lo, hi, npts)]


def write_dataset(samples: Sequence[FloquetSample], path: str, mode: str = "complex") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if mode == "complex":
            w.writerow(["omega", "lambda", "lambda_imag"])
            for s in samples:
                w.writerow([repr(s.omega), repr(s.ratio.real), repr(s.ratio.imag)])
        else:
            w.writerow(["omega", "lambda"])
            for s in samples:
                w.writerow([repr(s.omega), repr(float(s.value(mode)))])


def read_dataset(path: str) -> list[FloquetSample]:
    if not os.path.isfile(path):
        raise FloquetError(f"missing Floquet dataset: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["omega", "lambda"]:
            raise FloquetError(f"{path}: expected header 'omega,lambda[,lambda_imag]'")
        has_imag = len(header) > 2 and header[2] == "lambda_imag"
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FloquetError(f"{path}:{lineno}: malformed number in {row}") from None
            if not all(math.isfinite(v) for v in vals):
                raise FloquetError(f"{path}:{lineno}: non-finite value")
            ratio = complex(vals[1], vals[2] if has_imag else 0.0)
            out.append(FloquetSample(vals[0], ratio))
    if len(out) < 3:
        raise FloquetError(f"{path}: need at least 3 data points")
    return out


# --- polynomials in Lambda -----------------------------------------------------------

@dataclass(frozen=True)
class CosSeries:
    """Sum of ``amplitude * cos(frequency * omega)``; frequency 0 is a constant."""

    terms: tuple[tuple[float, float], ...] = ()

    @classmethod
    def of(cls, mapping: dict[float, float]) -> "CosSeries":
        return cls(tuple(sorted((float(f), float(a)) for f, a in mapping.items() if a != 0)))

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        out = np.zeros_like(omega)
        for freq, amp in self.terms:
            out = out + amp * np.cos(freq * omega)
        return out

    def as_dict(self) -> dict[float, float]:
        return dict(self.terms)

    def is_zero(self) -> bool:
        return not self.terms


@dataclass(frozen=True)
class QuadraticPolynomial:
    """``a2(omega) L^2 + a1(omega) L + a0(omega)``."""

    a2: CosSeries
    a1: CosSeries
    a0: CosSeries

    def coefficients(self, omega) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.a2(omega), self.a1(omega), self.a0(omega)

    def roots(self, omega) -> np.ndarray:
        """Roots at each omega, shape (n, 2); NaN where a2 vanishes."""
        a2, a1, a0 = (np.atleast_1d(c) for c in self.coefficients(omega))
        return quadratic_roots(a2, a1, a0)


def quadratic_roots(a2, a1, a0) -> np.ndarray:
    a2, a1, a0 = (np.asarray(c, dtype=complex) for c in (a2, a1, a0))
    out = np.full(a2.shape + (2,), np.nan + 0j)
    ok = np.abs(a2) > 1e-14 * np.maximum(np.abs(a1) + np.abs(a0), 1.0)
    p = a1[ok] / a2[ok]
    q = a0[ok] / a2[ok]
    disc = np.sqrt(p * p - 4 * q)
    # avoid cancellation: take the larger-magnitude root first
    sgn = np.where((np.conj(p) * disc).real >= 0, 1.0, -1.0)
    r1 = -(p + sgn * disc) / 2
    r2 = np.where(r1 != 0, q / np.where(r1 != 0, r1, 1), -(p - sgn * disc) / 2)
    out[ok, 0], out[ok, 1] = r1, r2
    return out


CLOSED_FORM_A1 = {6.0: 169.0 / 60.0, 4.0: -49.0 / 60.0}


def analytical_polynomial(spec: RodSpec = RodSpec()) -> QuadraticPolynomial:
    """Closed form for gamma = 1, sigma = 1/5."""
    if not (math.isclose(spec.gamma, 1.0) and math.isclose(spec.sigma, 0.2)):
        raise FloquetError("closed form only available for gamma=1, sigma=1/5")
    return QuadraticPolynomial(CosSeries.of({0: 1.0}), CosSeries.of(CLOSED_FORM_A1),
                               CosSeries.of({0: 1.0}))


@dataclass(frozen=True)
class FormComparison:
    """Pointwise comparison of the determinant oracle with the closed form."""

    omega: np.ndarray
    oracle: np.ndarray          # (n, 3) monic coefficients from determinant_oracle
    closed_form: np.ndarray     # (n, 3) monic coefficients of the closed form
    tolerance: float

    @property
    def max_abs_diff(self) -> float:
        return float(np.max(np.abs(self.oracle - self.closed_form)))

    @property
    def agrees(self) -> bool:
        return self.max_abs_diff <= self.tolerance

    def as_dict(self) -> dict:
        worst = int(np.argmax(np.max(np.abs(self.oracle - self.closed_form), axis=1)))
        return {"agrees": self.agrees, "tolerance": self.tolerance,
                "max_abs_diff": self.max_abs_diff, "worst_omega": float(self.omega[worst]),
                "oracle_at_worst": self.oracle[worst].tolist(),
                "closed_form_at_worst": self.closed_form[worst].tolist()}


def compare_with_closed_form(spec: RodSpec = RodSpec(), omega=None,
                             tolerance: float = 1e-8) -> FormComparison:
    """Evaluate both forms on ``omega`` (default 0.01..2 in steps of 0.01).

    Disagreement is returned, never reconciled: callers report it as found.
    """
    omega = omega_grid((0.01, 2.0), 0.01) if omega is None else np.atleast_1d(omega)
    closed = analytical_polynomial(spec)
    ref = np.array([determinant_oracle(float(w), spec) for w in omega])
    cf = np.column_stack([np.broadcast_to(c, omega.shape) for c in closed.coefficients(omega)])
    return FormComparison(np.asarray(omega, dtype=float), ref, cf, tolerance)


def _periodicity_matrix(omega: float, spec: RodSpec, lam: complex) -> np.ndarray:
    """Interface and periodicity conditions of one cell, unknowns (b11, b12, b21, b22)."""
    k1, k2 = omega, omega / spec.sigma
    x1, xe = 1.0, 1.0 + spec.gamma

    def u_row(k, x):
        return np.array([np.exp(1j * k * x), np.exp(-1j * k * x)])

    def f_row(k, x):
        return np.array([1j * k * np.exp(1j * k * x), -1j * k * np.exp(-1j * k * x)])

    M = np.zeros((4, 4), dtype=complex)
    M[0, :2], M[0, 2:] = u_row(k1, x1), -u_row(k2, x1)
    M[1, :2], M[1, 2:] = f_row(k1, x1), -f_row(k2, x1)
    M[2, :2], M[2, 2:] = u_row(k1, 0.0), -lam * u_row(k2, xe)
    M[3, :2], M[3, 2:] = f_row(k1, 0.0), -lam * f_row(k2, xe)
    return M


def determinant_oracle(omega: float, spec: RodSpec = RodSpec()) -> tuple[float, float, float]:
    """Monic (a2, a1, a0) of det M(Lambda) at one frequency.

    Only two rows of M depend on Lambda, each linearly, so the determinant is
    a quadratic in Lambda; it is recovered exactly from its values at
    Lambda = 0, 1, -1.
    """
    if not omega > 0:
        raise FloquetError("omega must be positive")
    d0 = np.linalg.det(_periodicity_matrix(omega, spec, 0.0))
    dp = np.linalg.det(_periodicity_matrix(omega, spec, 1.0))
    dm = np.linalg.det(_periodicity_matrix(omega, spec, -1.0))
    a0 = d0
    a1 = (dp - dm) / 2
    a2 = (dp + dm) / 2 - d0
    scale = max(abs(a0), abs(a1), abs(a2))
    if abs(a2) <= 1e-12 * scale or scale == 0:
        raise ResonanceError(f"degenerate periodicity system at omega={omega}")
    a1n, a0n = a1 / a2, a0 / a2
    if abs(a1n.imag) > 1e-8 * max(1.0, abs(a1n)) or abs(a0n.imag) > 1e-8:
        raise FloquetError(f"non-real Floquet polynomial at omega={omega}")
    return 1.0, float(a1n.real), float(a0n.real)


def oracle_fourier_fit(spec: RodSpec = RodSpec(), frequencies: Iterable[float] = range(11),
                       omega_range: tuple[float, float] = (0.01, 2.0),
                       n_points: int = 400) -> tuple[CosSeries, CosSeries]:
    """Least-squares cosine series of the oracle's monic a1 and a0 over omega."""
    freqs = [float(f) for f in frequencies]
    omega = np.linspace(*omega_range, n_points)
    coefs = np.array([determinant_oracle(w, spec) for w in omega])
    basis = np.cos(np.outer(omega, freqs))
    out = []
    for col in (1, 2):
        amp, *_ = np.linalg.lstsq(basis, coefs[:, col], rcond=None)
        amp = np.where(np.abs(amp) < 1e-9, 0.0, amp)
        out.append(CosSeries.of(dict(zip(freqs, amp))))
    return out[0], out[1]


def oracle_polynomial(spec: RodSpec = RodSpec(), frequencies: Iterable[float] = range(11)
                      ) -> QuadraticPolynomial:
    a1, a0 = oracle_fourier_fit(spec, frequencies)
    return QuadraticPolynomial(CosSeries.of({0: 1.0}), a1, a0)


class Band(str, Enum):
    PASS = "pass"
    STOP = "stop"
    EDGE = "edge"


def classify_band(poly: QuadraticPolynomial | tuple[float, float, float],
                  omega: float, edge_tol: float = 1e-9) -> Band:
    if isinstance(poly, QuadraticPolynomial):
        a2, a1, a0 = (float(c) for c in poly.coefficients(omega))
    else:
        a2, a1, a0 = poly
    if abs(a2) < 1e-14:
        raise FloquetError(f"leading coefficient vanishes at omega={omega}")
    p, q = a1 / a2, a0 / a2
    disc = p * p - 4 * q
    if abs(disc) <= edge_tol:
        return Band.EDGE
    return Band.PASS if disc < 0 else Band.STOP


def band_or_none(poly, omega: float, edge_tol: float = 1e-9) -> Band | None:
    """Like ``classify_band`` but ``None`` where the leading coefficient vanishes."""
    try:
        return classify_band(poly, omega, edge_tol)
    except FloquetError:
        return None


def omega_grid(omega_range: tuple[float, float], delta: float) -> np.ndarray:
    if not delta > 0:
        raise FloquetError("delta must be positive")
    lo, hi = omega_range
    n = int(math.floor((hi - lo) / delta + 1e-9)) + 1
    return lo + delta * np.arange(n)


def roots_rmse(p: QuadraticPolynomial, q: QuadraticPolynomial,
               omega_range: tuple[float, float] = (0.0, 2.0), delta: float = 1e-3) -> float:
    """RMSE between the root pairs of two quadratics over an omega grid.

    At each omega the roots are paired to minimise the total distance in the
    complex plane.  Returns ``inf`` if either polynomial loses its quadratic
    term somewhere on the grid.
    """
    omega = omega_grid(omega_range, delta)
    rp, rq = p.roots(omega), q.roots(omega)
    if np.isnan(rp).any() or np.isnan(rq).any():
        return math.inf
    straight = np.abs(rp[:, 0] - rq[:, 0]) ** 2 + np.abs(rp[:, 1] - rq[:, 1]) ** 2
    crossed = np.abs(rp[:, 0] - rq[:, 1]) ** 2 + np.abs(rp[:, 1] - rq[:, 0]) ** 2
    sq = np.minimum(straight, crossed)
    return float(np.sqrt(sq.sum() / (2 * omega.size)))


def band_agreement(p: QuadraticPolynomial, q: QuadraticPolynomial,
                   omega_range: tuple[float, float] = (0.0, 2.0), delta: float = 1e-3) -> float:
    """Fraction of the omega grid where both polynomials give the same band type.

    Points where either leading coefficient vanishes count as disagreement.
    """
    omega = omega_grid(omega_range, delta)
    same = []
    for w in omega:
        bp = band_or_none(p, w)
        same.append(bp is not None and bp == band_or_none(q, w))
    return float(np.mean(same))


def roots_table(poly: QuadraticPolynomial, omega: np.ndarray) -> np.ndarray:
    """Rows of (omega, re1, im1, re2, im2)."""
    r = poly.roots(omega)
    return np.column_stack([omega, r[:, 0].real, r[:, 0].imag, r[:, 1].real, r[:, 1].imag])


def polynomial_from_terms(target, terms, coefficients) -> QuadraticPolynomial:
    """``sum(c_m * term_m) - target = 0`` regrouped by power of Lambda."""
    groups: dict[int, dict[float, float]] = {0: {}, 1: {}, 2: {}}

    def add(term, coef):
        if len(term.tokens) != 1 or term.tokens[0].family != "cos":
            raise FloquetError("Floquet polynomials need single cos-family tokens")
        tok = term.tokens[0]
        g = groups[tok.power]
        g[float(tok.frequency)] = g.get(float(tok.frequency), 0.0) + coef

    for term, coef in zip(terms, coefficients):
        add(term, float(coef))
    add(target, -1.0)
    return QuadraticPolynomial(CosSeries.of(groups[2]), CosSeries.of(groups[1]),
                               CosSeries.of(groups[0]))
