"""Periodic-box discretization of fields on a cubic grid centered at the origin.

Samples sit at ``x_i = (i - n/2) * L / n`` along each axis. Spectral modes use
the FFT ordering, so index ``k`` carries the physical frequency
``xi_k = 2*pi*kt/L`` with ``kt`` in ``{-n/2, ..., n/2 - 1}`` (``numpy.fft.fftfreq``
order). Quadrature is the rectangle rule on the torus with weight ``(L/n)**3``.
"""

from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft

__all__ = [
    "GridSpec",
    "Field",
    "SpectralField",
    "GridMismatchError",
    "FieldFormatError",
    "NonRealFieldError",
    "ResampleWarning",
    "forward_transform",
    "inverse_transform",
    "integrate",
    "inner",
    "pointwise",
    "write_field",
    "read_field",
    "boundary_mass_fraction",
    "shift",
    "resample",
    "fft_workers",
]

MAGIC = b"FSPG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIId")


class GridMismatchError(ValueError):
    """Binary operation between fields living on different grids."""


class FieldFormatError(ValueError):
    """Malformed field file."""


class NonRealFieldError(ValueError):
    """Spectral modes violate conjugate symmetry."""


class ResampleWarning(UserWarning):
    """More than 1% of the field's energy was lost while resampling."""


def fft_workers() -> int:
    """Thread count for transforms, capped by ``FSPG_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FSPG_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 4, got {self.n!r}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be positive, got {self.L!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def size(self) -> int:
        return self.n**3

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.h

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(x, y, z)``."""
        a = self.axis()
        return a[:, None, None], a[None, :, None], a[None, None, :]

    def radius(self) -> np.ndarray:
        return self.h * _unit_radius(self.n)

    def frequencies(self) -> np.ndarray:
        """Physical frequencies along one axis, FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    def xi_power(self, s: float) -> np.ndarray:
        """``|xi|**(2s)`` on the full spectral grid (zero at the zero mode)."""
        return (2.0 * np.pi / self.L) ** (2.0 * s) * _unit_xi_power(self.n, float(s))


@lru_cache(maxsize=16)
def _unit_k2(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    k2 = k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2
    k2.flags.writeable = False
    return k2


@lru_cache(maxsize=32)
def _unit_xi_power(n: int, s: float) -> np.ndarray:
    out = _unit_k2(n) ** s
    out.flags.writeable = False
    return out


@lru_cache(maxsize=16)
def _unit_radius(n: int) -> np.ndarray:
    a = np.arange(n) - n // 2
    r = np.sqrt(a[:, None, None] ** 2 + a[None, :, None] ** 2 + a[None, None, :] ** 2)
    r.flags.writeable = False
    return r


class Field:
    """Real samples of a function on a periodic cube, with box metadata.

    Instances are immutable: the sample array is flagged read-only.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=np.float64)
        if arr.size != grid.size:
            raise ValueError(f"expected {grid.size} values for n={grid.n}, got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    def __repr__(self):
        return f"Field(n={self.grid.n}, L={self.grid.L:.6g}, max|u|={self.max_abs():.3g})"

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "Field":
        """Sample ``func(x, y, z)`` on the grid (broadcast arrays are passed)."""
        x, y, z = grid.coordinates()
        return cls(grid, np.broadcast_to(func(x, y, z), grid.shape))

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2_norm(self) -> float:
        return float(np.sqrt(integrate_array(self.values**2, self.grid)))

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __add__(self, other: "Field") -> "Field":
        return pointwise(self, other, "add")

    def __sub__(self, other: "Field") -> "Field":
        if not isinstance(other, Field):
            raise TypeError("subtract needs a second Field")
        return pointwise(self, pointwise(other, -1.0, "scale"), "add")

    def __mul__(self, other):
        if isinstance(other, Field):
            return pointwise(self, other, "multiply")
        return pointwise(self, float(other), "scale")

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return pointwise(self, -1.0, "scale")


@dataclass(frozen=True)
class SpectralField:
    grid: GridSpec
    modes: np.ndarray

    def is_conjugate_symmetric(self, rtol: float = 1e-10) -> bool:
        m = self.modes
        flipped = np.conj(np.roll(np.flip(m), 1, axis=(0, 1, 2)))
        scale = max(float(np.max(np.abs(m))), np.finfo(float).tiny)
        return float(np.max(np.abs(m - flipped))) <= rtol * scale


def _check_same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise GridMismatchError(f"grid mismatch: {f.grid} vs {g.grid}")


def fftn(a: np.ndarray) -> np.ndarray:
    return scipy.fft.fftn(a, workers=fft_workers())


def ifftn_real(a: np.ndarray) -> np.ndarray:
    return scipy.fft.ifftn(a, workers=fft_workers()).real


def forward_transform(f: Field) -> SpectralField:
    """Unnormalized DFT of the samples: ``F_k = sum_j u_j exp(-2*pi*i*j.k/n)``."""
    return SpectralField(f.grid, fftn(f.values))


def inverse_transform(F: SpectralField, rtol: float = 1e-10) -> Field:
    if not F.is_conjugate_symmetric(rtol):
        raise NonRealFieldError("modes are not conjugate symmetric; field would be complex")
    return Field(F.grid, ifftn_real(F.modes))


def integrate_array(values: np.ndarray, grid: GridSpec) -> float:
    return float(np.sum(values)) * grid.cell_volume


def integrate(f: Field) -> float:
    return integrate_array(f.values, f.grid)


def inner(f: Field, g: Field) -> float:
    _check_same_grid(f, g)
    return integrate_array(f.values * g.values, f.grid)


def pointwise(f: Field, g=None, op: str = "multiply", exponent: float | None = None) -> Field:
    """Elementwise operations.

    ``op`` is one of ``multiply``/``add`` (``g`` a Field on the same grid),
    ``scale`` (``g`` a scalar), ``power`` (``|f|**exponent``) or
    ``abs_power_signed`` (``|f|**(exponent-1) * f``).
    """
    if op in ("multiply", "add"):
        if not isinstance(g, Field):
            raise TypeError(f"{op} needs a second Field")
        _check_same_grid(f, g)
        out = f.values * g.values if op == "multiply" else f.values + g.values
    elif op == "scale":
        out = f.values * float(g)
    elif op == "power":
        out = np.abs(f.values) ** float(exponent)
    elif op == "abs_power_signed":
        out = abs_power_signed(f.values, float(exponent))
    else:
        raise ValueError(f"unknown pointwise op {op!r}")
    return Field(f.grid, out)


def abs_power_signed(u: np.ndarray, p: float) -> np.ndarray:
    """``|u|**(p-1) * u``, zero at zero for every ``p > 1``."""
    if p == 1.0:
        return np.array(u, dtype=float)
    if p == 2.0:
        return np.abs(u) * u
    if p == 3.0:
        return u * u * u
    return np.abs(u) ** (p - 1.0) * u


def shift(f: Field, offset) -> Field:
    """Circular translation by an integer number of cells per axis."""
    if np.isscalar(offset):
        offset = (int(offset), 0, 0)
    return Field(f.grid, np.roll(f.values, tuple(int(o) for o in offset), axis=(0, 1, 2)))


def boundary_mass_fraction(f: Field, shell: float = 0.1) -> float:
    """Fraction of ``int u^2`` carried by points with ``max|x_i| >= (1 - shell) * L/2``."""
    u2 = f.values**2
    total = float(np.sum(u2))
    if total == 0.0:
        return 0.0
    a = np.abs(f.grid.axis()) >= (1.0 - shell) * f.grid.L / 2.0 - 1e-12 * f.grid.L
    mask = a[:, None, None] | a[None, :, None] | a[None, None, :]
    return float(np.sum(u2[mask])) / total


def write_field(f: Field, path) -> None:
    """Little-endian: ``b"FSPG"``, u32 version, u32 n, f64 L, then n^3 f64 row-major."""
    data = _HEADER.pack(MAGIC, FORMAT_VERSION, f.grid.n, f.grid.L)
    data += np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    Path(path).write_bytes(data)


def read_field(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FieldFormatError("truncated header")
    magic, version, n, L = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"unsupported format version {version}")
    if n < 4 or n % 2:
        raise FieldFormatError(f"n must be even and >= 4, got {n}")
    expected = _HEADER.size + 8 * n**3
    if len(raw) < expected:
        raise FieldFormatError(f"truncated payload: {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise FieldFormatError(f"trailing bytes: {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=n**3)
    try:
        return Field(GridSpec(n, L), values.astype(np.float64))
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from exc


def _interp_matrix(src: GridSpec, dst: GridSpec) -> np.ndarray:
    # Real trigonometric interpolant with the Nyquist mode split symmetrically.
    x = src.axis()
    y = dst.axis()
    t = y[:, None] - x[None, :]
    n = src.n
    xi = 2.0 * np.pi / src.L
    m = np.ones_like(t)
    for k in range(1, n // 2):
        m += 2.0 * np.cos(k * xi * t)
    m += np.cos((n // 2) * xi * t)
    m /= n
    outside = (y < -src.L / 2 - 1e-12 * src.L) | (y >= src.L / 2 - 1e-12 * src.L)
    m[outside, :] = 0.0
    return m


def resample(u: Field, target: GridSpec) -> Field:
    """Fourier interpolation of ``u`` onto another grid/box.

    Outside the source box the field is taken to vanish. Emits
    :class:`ResampleWarning` when more than 1% of ``int u^2`` falls outside
    the target box or in modes the target grid cannot represent.
    """
    src = u.grid
    if target == src:
        return Field(src, u.values)
    if not (src.L / 4 <= target.L <= 4 * src.L):
        raise ValueError("target box must be within a factor 4 of the source box")

    lost = _resample_loss(u, target)
    if lost > 0.01:
        warnings.warn(f"resample discards {lost:.2%} of the field energy", ResampleWarning, stacklevel=2)

    m = _interp_matrix(src, target)
    out = np.tensordot(m, u.values, axes=(1, 0))
    out = np.tensordot(m, out, axes=(1, 1)).transpose(1, 0, 2)
    out = np.tensordot(m, out, axes=(1, 2)).transpose(1, 2, 0)
    return Field(target, out)


def _resample_loss(u: Field, target: GridSpec) -> float:
    u2 = u.values**2
    total = float(np.sum(u2))
    if total == 0.0:
        return 0.0
    a = u.grid.axis()
    outside = (a < -target.L / 2) | (a >= target.L / 2)
    mask = outside[:, None, None] | outside[None, :, None] | outside[None, None, :]
    spatial = float(np.sum(u2[mask])) / total

    modes = np.abs(fftn(u.values)) ** 2
    f = np.abs(u.grid.frequencies())
    high = f > np.pi * target.n / target.L * (1 + 1e-12)
    hmask = high[:, None, None] | high[None, :, None] | high[None, None, :]
    spectral = float(np.sum(modes[hmask])) / float(np.sum(modes))
    return spatial + spectral
