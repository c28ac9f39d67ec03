"""Gridded observations: loading, smoothing, noise and polynomial-fit derivatives.

A dataset directory holds ``meta.json`` (axis_names, axis_sizes, axis_steps,
origin) and ``data.csv`` with one value per line in row-major order.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

META_FILE = "meta.json"
DATA_FILE = "data.csv"


class DatasetError(ValueError):
    """Base class for dataset loading problems."""


class MissingFileError(DatasetError):
    pass


class MalformedValueError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class NonFiniteValueError(DatasetError):
    pass


@dataclass(frozen=True)
class GridField:
    """One scalar variable sampled on a regular grid.

    ``values`` has shape ``axis_sizes`` and is stored C-contiguous, so its
    flattening is the row-major order used on disk.
    """

    axis_names: tuple[str, ...]
    axis_sizes: tuple[int, ...]
    axis_steps: tuple[float, ...]
    origin: tuple[float, ...]
    values: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.axis_names)
        sizes = tuple(int(s) for s in self.axis_sizes)
        steps = tuple(float(s) for s in self.axis_steps)
        origin = tuple(float(o) for o in self.origin)
        if not (len(names) == len(sizes) == len(steps) == len(origin)):
            raise ValueError("axis metadata lists must have equal length")
        if len(sizes) == 0:
            raise ValueError("grid needs at least one axis")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"axis sizes must be positive, got {sizes}")
        if any(not (s > 0 and math.isfinite(s)) for s in steps):
            raise ValueError(f"axis steps must be positive, got {steps}")
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.size != math.prod(sizes):
            raise ValueError(
                f"{values.size} values do not fill a grid of sizes {list(sizes)}"
            )
        values = values.reshape(sizes)
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "axis_names", names)
        object.__setattr__(self, "axis_sizes", sizes)
        object.__setattr__(self, "axis_steps", steps)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)

    @property
    def ndim(self) -> int:
        return len(self.axis_sizes)

    def axis_index(self, axis: int | str) -> int:
        if isinstance(axis, str):
            try:
                return self.axis_names.index(axis)
            except ValueError:
                raise KeyError(f"no axis named {axis!r}") from None
        if not 0 <= axis < self.ndim:
            raise IndexError(f"axis {axis} out of range for {self.ndim}-d grid")
        return axis

    def coordinates(self, axis: int | str) -> np.ndarray:
        i = self.axis_index(axis)
        return self.origin[i] + self.axis_steps[i] * np.arange(self.axis_sizes[i])

    def with_values(self, values: np.ndarray) -> "GridField":
        return replace(self, values=values)

    def value(self, *index: int) -> float:
        return float(self.values[index])


def _fail(cls, path, lineno, msg):
    raise cls(f"{path}:{lineno}: {msg}")


def load_grid(directory: str | os.PathLike) -> GridField:
    """Read a dataset directory into a validated :class:`GridField`."""
    directory = os.fspath(directory)
    meta_path = os.path.join(directory, META_FILE)
    data_path = os.path.join(directory, DATA_FILE)
    for path in (meta_path, data_path):
        if not os.path.isfile(path):
            raise MissingFileError(f"missing dataset file: {path}")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        _fail(MalformedValueError, meta_path, exc.lineno, f"invalid JSON ({exc.msg})")
    keys = ("axis_names", "axis_sizes", "axis_steps", "origin")
    missing = [k for k in keys if k not in meta]
    if missing:
        raise DatasetError(f"{meta_path}: missing keys {missing}")
    unknown = sorted(set(meta) - set(keys))
    if unknown:
        raise DatasetError(f"{meta_path}: unknown keys {unknown}")

    sizes = [int(s) for s in meta["axis_sizes"]]
    expected = math.prod(sizes)
    values = []
    with open(data_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                _fail(MalformedValueError, data_path, lineno, f"malformed number {text!r}")
            if not math.isfinite(v):
                _fail(NonFiniteValueError, data_path, lineno, f"non-finite value {text!r}")
            values.append(v)
            if len(values) > expected:
                _fail(
                    CountMismatchError, data_path, lineno,
                    f"more values than the {expected} declared by axis_sizes {sizes}",
                )
    if len(values) != expected:
        _fail(
            CountMismatchError, data_path, len(values),
            f"found {len(values)} values, axis_sizes {sizes} require {expected}",
        )
    try:
        return GridField(
            meta["axis_names"], sizes, meta["axis_steps"], meta["origin"],
            np.array(values),
        )
    except ValueError as exc:
        raise DatasetError(f"{meta_path}: {exc}") from None


def save_grid(field_: GridField, directory: str | os.PathLike) -> None:
    """Write ``field_`` in the dataset directory format (bit-exact round trip)."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    meta = {
        "axis_names": list(field_.axis_names),
        "axis_sizes": list(field_.axis_sizes),
        "axis_steps": list(field_.axis_steps),
        "origin": list(field_.origin),
    }
    with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(directory, DATA_FILE), "w", encoding="utf-8") as fh:
        # repr() gives the shortest string that parses back to the same double
        fh.writelines(repr(float(v)) + "\n" for v in field_.values.ravel())


# --- smoothing -----------------------------------------------------------------

@dataclass(frozen=True)
class SmoothingSpec:
    sigma: float = 1.0
    radius: int = 3

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if int(self.radius) < 1:
            raise ValueError("radius must be >= 1")

    def kernel(self) -> np.ndarray:
        offsets = np.arange(-self.radius, self.radius + 1, dtype=float)
        w = np.exp(-0.5 * (offsets / self.sigma) ** 2)
        return w / w.sum()


def _shifted(a: np.ndarray, axis: int, offset: int) -> tuple[slice, slice]:
    """Destination/source slices so that dst[i] pairs with src[i + offset]."""
    n = a.shape[axis]
    if offset >= 0:
        return slice(0, n - offset), slice(offset, n)
    return slice(-offset, n), slice(0, n + offset)


def _smooth_axis(a: np.ndarray, axis: int, spec: SmoothingSpec) -> np.ndarray:
    kernel = spec.kernel()
    num = np.zeros_like(a)
    den = np.zeros(a.shape[axis])
    n = a.shape[axis]
    for j, w in zip(range(-spec.radius, spec.radius + 1), kernel):
        if abs(j) >= n:
            continue
        dst, src = _shifted(a, axis, j)
        idx_dst = [slice(None)] * a.ndim
        idx_src = [slice(None)] * a.ndim
        idx_dst[axis], idx_src[axis] = dst, src
        num[tuple(idx_dst)] += w * a[tuple(idx_src)]
        den[dst] += w
    shape = [1] * a.ndim
    shape[axis] = n
    return num / den.reshape(shape)


def gaussian_smooth(
    field_: GridField, spec: SmoothingSpec, axes: Sequence[int | str] | None = None
) -> GridField:
    """Separable Gaussian smoothing along ``axes`` (all axes by default).

    Near the edges the kernel is renormalised over the in-grid cells instead of
    padding the data.
    """
    axes = range(field_.ndim) if axes is None else axes
    out = np.array(field_.values, dtype=float)
    for ax in axes:
        out = _smooth_axis(out, field_.axis_index(ax), spec)
    return field_.with_values(out)


# --- differentiation -----------------------------------------------------------

@dataclass(frozen=True)
class DiffSpec:
    axis: int | str = 0
    order: int = 1
    window: int = 9
    poly_degree: int = 4

    def __post_init__(self):
        if not 1 <= self.order <= 3:
            raise ValueError(f"derivative order must be 1..3, got {self.order}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")
        if self.order > self.poly_degree:
            raise ValueError(
                f"order {self.order} exceeds polynomial degree {self.poly_degree}"
            )
        if self.window < self.poly_degree + 1:
            raise ValueError(
                f"window {self.window} too small for degree {self.poly_degree}"
            )


def stencil_weights(offsets: np.ndarray, degree: int, order: int) -> np.ndarray:
    """Weights w with sum(w * f[offsets]) = d^order/ds^order of the LS polynomial at s=0."""
    vander = np.vander(offsets.astype(float), degree + 1, increasing=True)
    pinv = np.linalg.pinv(vander)
    return math.factorial(order) * pinv[order]


def differentiate(field_: GridField, spec: DiffSpec) -> GridField:
    """Derivative along one axis from local least-squares polynomial fits.

    Every point uses the ``window`` nearest samples along the axis; near the
    boundaries the window is clipped to the grid and the fit evaluated
    off-centre, so the output keeps the full grid shape.
    """
    axis = field_.axis_index(spec.axis)
    n = field_.axis_sizes[axis]
    if spec.window > n:
        raise ValueError(f"window {spec.window} larger than axis length {n}")
    half = spec.window // 2
    a = np.moveaxis(np.asarray(field_.values, dtype=float), axis, 0)
    out = np.empty_like(a)
    scale = field_.axis_steps[axis] ** spec.order

    # interior points share one centred stencil
    centre = stencil_weights(np.arange(-half, half + 1), spec.poly_degree, spec.order)
    if n - 2 * half > 0:
        acc = np.zeros_like(a[half:n - half])
        for j, w in enumerate(centre):
            acc += w * a[j:n - 2 * half + j]
        out[half:n - half] = acc

    for i in list(range(min(half, n))) + list(range(max(n - half, half), n)):
        start = min(max(i - half, 0), n - spec.window)
        offsets = np.arange(start, start + spec.window) - i
        weights = stencil_weights(offsets, spec.poly_degree, spec.order)
        acc = np.zeros_like(a[0])
        for j, w in enumerate(weights):
            acc += w * a[start + j]
        out[i] = acc

    return field_.with_values(np.moveaxis(out / scale, 0, axis))


def add_gaussian_noise(field_: GridField, relative_level: float, seed: int) -> GridField:
    """Add zero-mean Gaussian noise with std ``relative_level * std(values)``."""
    if relative_level < 0:
        raise ValueError("noise level must be non-negative")
    if relative_level == 0:
        return field_
    rng = np.random.default_rng(seed)
    std = relative_level * float(np.std(field_.values))
    return field_.with_values(field_.values + rng.normal(0.0, std, field_.axis_sizes))
