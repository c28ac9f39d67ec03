"""Synthetic (t, x) fields with known governing equations, workspace assembly,
an explicit 1D solver for discovered linear models, and error metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import (
    DiffSpec, GridField, SmoothingSpec, add_gaussian_noise, differentiate, gaussian_smooth,
)
from .tokens import DerivativeFamily, DerivativeToken, Workspace, derivative_workspace

EQUATIONS = ("wave", "heat")

# (amplitude, wavenumber, phase); the sign of the wavenumber sets the travel direction
DEFAULT_WAVE_MODES = ((2.0, 1.0, 0.3), (1.5, -2.0, 1.1), (1.0, 3.0, 2.0), (1.2, -1.0, 0.7))
DEFAULT_HEAT_MODES = ((2.0, 1.0, 0.3), (1.5, 2.0, 1.1), (1.0, 3.0, 2.0))


class ModelError(ValueError):
    """Discovered model cannot be marched by the explicit solver."""


@dataclass(frozen=True)
class SyntheticSpec:
    equation: str = "wave"
    coefficient: float = 1.0       # wave speed c, or diffusivity alpha
    nx: int = 100
    nt: int = 100
    dx: float = 2 * math.pi / 100
    dt: float = 0.05
    modes: tuple[tuple[float, float, float], ...] = DEFAULT_WAVE_MODES
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ValueError(f"equation must be one of {EQUATIONS}")
        if self.nx < 2 or self.nt < 2 or not (self.dx > 0 and self.dt > 0):
            raise ValueError("grid needs at least 2x2 points and positive steps")
        object.__setattr__(self, "modes", tuple(tuple(float(v) for v in m) for m in self.modes))
        if any(len(m) != 3 for m in self.modes):
            raise ValueError("modes are (amplitude, wavenumber, phase) triples")


def exact_solution(spec: SyntheticSpec, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Mode sum on the outer grid of ``t`` and ``x`` (shape len(t) x len(x))."""
    T, X = np.meshgrid(t, x, indexing="ij")
    u = np.zeros_like(T)
    for amp, k, phase in spec.modes:
        if spec.equation == "wave":
            # sin(k x - |k| c t + phase): right-going for k > 0, left-going for k < 0
            u += amp * np.sin(k * X - abs(k) * spec.coefficient * T + phase)
        else:
            u += amp * np.exp(-spec.coefficient * k * k * T) * np.sin(k * X + phase)
    return u


def generate_field(spec: SyntheticSpec) -> GridField:
    t = spec.dt * np.arange(spec.nt)
    x = spec.dx * np.arange(spec.nx)
    grid = GridField(("t", "x"), (spec.nt, spec.nx), (spec.dt, spec.dx), (0.0, 0.0),
                     exact_solution(spec, t, x))
    return add_gaussian_noise(grid, spec.noise_level, spec.seed)


def token_family(field_: GridField, max_order: int = 2, max_tokens: int = 3) -> DerivativeFamily:
    return DerivativeFamily(field_.axis_names, max_order=max_order, max_tokens=max_tokens)


def build_workspace(field_: GridField, max_order: int = 2, diff: DiffSpec | None = None,
                    smoothing: SmoothingSpec | None = None,
                    smooth_axes: Sequence[int | str] | None = None,
                    margin: int | None = None) -> Workspace:
    """Smooth, differentiate along every axis up to ``max_order`` and flatten.

    A margin of ``window // 2`` cells is trimmed from every side before the
    fields are flattened, since the polynomial fits are least reliable there.
    """
    diff = diff or DiffSpec()
    if smoothing is not None:
        field_ = gaussian_smooth(field_, smoothing, smooth_axes)
    m = diff.window // 2 if margin is None else margin
    if any(n <= 2 * m for n in field_.axis_sizes):
        raise ValueError(f"grid {field_.axis_sizes} too small for a trim margin of {m}")
    inner = tuple(slice(m, n - m) for n in field_.axis_sizes)
    fields = {(0, 0): field_.values[inner].ravel()}
    for axis in range(field_.ndim):
        for order in range(1, max_order + 1):
            spec = DiffSpec(axis, order, diff.window, max(diff.poly_degree, order))
            fields[(axis, order)] = differentiate(field_, spec).values[inner].ravel()
    ws = derivative_workspace(fields)
    ws.shape = tuple(n - 2 * m for n in field_.axis_sizes)
    ws.margin = m
    return ws


# --- explicit solver -------------------------------------------------------------------

def linear_coefficients(model, axis_names: Sequence[str] = ("t", "x")) -> dict[tuple[int, int], float]:
    """``{(axis, order): a}`` with ``sum(a * token) = 0`` equivalent to the model.

    Every term must be a single derivative token (or the field itself).
    """
    coefs: dict[tuple[int, int], float] = {}

    def add(term, value):
        if len(term.tokens) != 1 or not isinstance(term.tokens[0], DerivativeToken):
            raise ModelError(f"term {term} is not a single derivative token")
        tok = term.tokens[0]
        if tok.order > 2:
            raise ModelError("explicit solver handles derivatives up to order 2")
        key = (tok.axis, tok.order) if tok.order else (0, 0)
        coefs[key] = coefs.get(key, 0.0) + value

    if getattr(model, "degenerate", False):
        raise ModelError("degenerate model")
    for term, c in zip(model.terms, model.coefficients):
        add(term, float(c))
    add(model.target, -1.0)
    if len(axis_names) != 2:
        raise ModelError("solver is limited to one space and one time axis")
    return coefs


@dataclass(frozen=True)
class Scheme:
    second_order: bool
    diffusion: float      # coefficient of u_xx after solving for the leading time term
    advection: float      # coefficient of u_x
    reaction: float       # coefficient of u
    damping: float        # coefficient of u_t (second-order-in-time case only)


def scheme_from_coefficients(coefs: dict[tuple[int, int], float], time_axis: int = 0) -> Scheme:
    space = 1 - time_axis
    a_tt = coefs.get((time_axis, 2), 0.0)
    a_t = coefs.get((time_axis, 1), 0.0)
    a_xx = coefs.get((space, 2), 0.0)
    a_x = coefs.get((space, 1), 0.0)
    a_0 = coefs.get((0, 0), 0.0)
    if a_tt != 0.0:
        s = Scheme(True, -a_xx / a_tt, -a_x / a_tt, -a_0 / a_tt, -a_t / a_tt)
        if s.diffusion <= 0.0:
            raise ModelError("u_tt model without a positive u_xx coefficient is not hyperbolic")
        return s
    if a_t != 0.0:
        s = Scheme(False, -a_xx / a_t, -a_x / a_t, -a_0 / a_t, 0.0)
        if s.diffusion < 0.0:
            raise ModelError("backward diffusion: the model is ill-posed forward in time")
        if s.diffusion == 0.0 and s.advection == 0.0 and s.reaction == 0.0:
            raise ModelError("model has no spatial coupling")
        return s
    raise ModelError("model has no time derivative to march")


def _dxx(u, dx):
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / (dx * dx)
    return out


def _dx(u, dx, upwind_sign=0.0):
    out = np.zeros_like(u)
    if upwind_sign > 0:      # information travels toward -x: forward difference
        out[1:-1] = (u[2:] - u[1:-1]) / dx
    elif upwind_sign < 0:
        out[1:-1] = (u[1:-1] - u[:-2]) / dx
    else:
        out[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
    return out


def stable_substeps(scheme: Scheme, dt: float, dx: float, safety: float = 0.9) -> int:
    """Smallest number of substeps per output step that satisfies the CFL limit."""
    if scheme.second_order:
        speed = math.sqrt(scheme.diffusion) + 0.5 * abs(scheme.advection) * dx
        limit = dx / speed
        if scheme.reaction:
            limit = min(limit, 1.0 / math.sqrt(abs(scheme.reaction)))
    else:
        rate = 2 * scheme.diffusion / dx**2 + abs(scheme.advection) / dx + abs(scheme.reaction)
        limit = 1.0 / rate
    n = max(1, math.ceil(dt / (safety * limit) - 1e-12))
    if n > 10_000_000:
        raise ModelError("CFL condition needs an impractically small time step")
    return n


def march(scheme: Scheme, x: np.ndarray, t: np.ndarray, u0: np.ndarray, left, right,
          v0: np.ndarray | None = None, safety: float = 0.9) -> np.ndarray:
    """Explicit time stepping on grid ``x``; returns u at the output times ``t``.

    ``left``/``right`` are callables of time giving the Dirichlet values.
    """
    dx = float(x[1] - x[0])
    dt_out = float(t[1] - t[0])
    n_sub = stable_substeps(scheme, dt_out, dx, safety)
    h = dt_out / n_sub
    out = np.empty((t.size, x.size))
    u = np.array(u0, dtype=float)
    out[0] = u
    D, B, C = scheme.diffusion, scheme.advection, scheme.reaction

    if scheme.second_order:
        damp = scheme.damping
        v = np.zeros_like(u) if v0 is None else np.asarray(v0, dtype=float)

        def accel(w, vel):
            return D * _dxx(w, dx) + B * _dx(w, dx) + C * w + damp * vel

        prev = u
        u = prev + h * v + 0.5 * h * h * accel(prev, v)
        time = t[0] + h
        u[0], u[-1] = left(time), right(time)
        step = 1
        for n in range(1, t.size):
            while step < n * n_sub:
                lap = D * _dxx(u, dx) + B * _dx(u, dx) + C * u
                nxt = (2 * u - (1 + 0.5 * damp * h) * prev + h * h * lap) / (1 - 0.5 * damp * h)
                step += 1
                time = t[0] + step * h
                nxt[0], nxt[-1] = left(time), right(time)
                prev, u = u, nxt
            out[n] = u
    else:
        upwind = np.sign(B) if D <= 0.5 * abs(B) * dx else 0.0
        step = 0
        for n in range(1, t.size):
            while step < n * n_sub:
                u = u + h * (D * _dxx(u, dx) + B * _dx(u, dx, upwind) + C * u)
                step += 1
                time = t[0] + step * h
                u[0], u[-1] = left(time), right(time)
            out[n] = u
    if not np.all(np.isfinite(out)):
        raise ModelError("explicit march diverged")
    return out


def solve_discovered_1d(model, reference: GridField, refine: int = 1,
                        safety: float = 0.9) -> GridField:
    """March a discovered linear model from the reference field's initial and
    boundary data and return it on the reference grid.

    Initial velocity (for second-order-in-time models) comes from a
    polynomial-fit time derivative of the reference.  ``refine`` subdivides
    the spatial grid; the result is sampled back onto the reference points.
    """
    if reference.ndim != 2:
        raise ModelError("validation solver needs a (t, x) field")
    scheme = scheme_from_coefficients(linear_coefficients(model, reference.axis_names))
    t = reference.coordinates(0)
    x = reference.coordinates(1)
    values = reference.values
    u0 = values[0]
    v0 = None
    if scheme.second_order:
        window = min(9, reference.axis_sizes[0] - (1 - reference.axis_sizes[0] % 2))
        spec = DiffSpec(0, 1, window, min(4, window - 1))
        v0 = differentiate(reference, spec).values[0]
    left = CubicSpline(t, values[:, 0])
    right = CubicSpline(t, values[:, -1])
    if refine > 1:
        xf = np.linspace(x[0], x[-1], (x.size - 1) * refine + 1)
        u0 = CubicSpline(x, u0)(xf)
        v0 = None if v0 is None else CubicSpline(x, v0)(xf)
    else:
        xf = x
    out = march(scheme, xf, t, u0, left, right, v0, safety)
    return reference.with_values(out[:, ::refine])


# --- metrics ------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    rmse: float
    mae: float
    relative_rmse: float
    rmse_map: GridField = field(repr=False)
    mae_map: GridField = field(repr=False)

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "relative_rmse": self.relative_rmse}


def error_report(reference: GridField, candidate: GridField) -> ErrorReport:
    """Global RMSE/MAE and per-point time-series maps; the time axis is first."""
    if reference.axis_sizes != candidate.axis_sizes:
        raise ValueError(f"shape mismatch: {reference.axis_sizes} vs {candidate.axis_sizes}")
    diff = candidate.values - reference.values
    rmse = float(np.sqrt(np.mean(diff**2)))
    mae = float(np.mean(np.abs(diff)))
    scale = float(np.sqrt(np.mean(reference.values**2)))
    space = dict(
        axis_names=reference.axis_names[1:], axis_sizes=reference.axis_sizes[1:],
        axis_steps=reference.axis_steps[1:], origin=reference.origin[1:],
    )
    return ErrorReport(
        rmse, mae, rmse / scale if scale > 0 else math.inf,
        GridField(values=np.sqrt(np.mean(diff**2, axis=0)), **space),
        GridField(values=np.mean(np.abs(diff), axis=0), **space),
    )
