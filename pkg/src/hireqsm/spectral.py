"""Frequency-domain operators on the periodic grid.

Symbols are real arrays over the DFT lattice in numpy's FFT ordering.
Frequencies are physical, ``xi_i = k_i / (N_i h_i)`` with signed integers
``k_i`` in ``[-N_i/2, N_i/2)``, so anisotropic voxels tilt the dipole cone.
B0 lies along the third axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, SingularSymbol
from .volume import GridSpec, ScalarVolume, crop_center, pad_zero

__all__ = [
    "SpectralSymbol",
    "ConvPolicy",
    "CIRCULAR",
    "frequencies",
    "dipole_symbol",
    "neglap_continuous_symbol",
    "pdiff_symbol",
    "neglap_discrete_symbol",
    "apply_symbol",
    "solve_symbol",
    "neglap_stencil",
    "neglap_array",
    "fourier_multiply",
    "fourier_divide",
]

_IMAG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralSymbol:
    """Real multiplier sampled on the full DFT lattice of ``grid``."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != self.grid.shape:
            raise GridMismatch(f"symbol shape {vals.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("symbol values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def half(self) -> np.ndarray:
        """The non-redundant half used with ``rfftn``."""
        return self.values[..., : self.grid.dims[2] // 2 + 1]

    def __mul__(self, other):
        if isinstance(other, SpectralSymbol):
            if other.grid != self.grid:
                raise GridMismatch("symbol grids differ")
            return SpectralSymbol(self.grid, self.values * other.values)
        return SpectralSymbol(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, SpectralSymbol):
            if other.grid != self.grid:
                raise GridMismatch("symbol grids differ")
            return SpectralSymbol(self.grid, self.values + other.values)
        return SpectralSymbol(self.grid, self.values + float(other))

    __radd__ = __add__

    def __pow__(self, p):
        return SpectralSymbol(self.grid, self.values ** p)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> SpectralSymbol:
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class ConvPolicy:
    """``circular`` on the native grid, or ``zero_padded`` by ``factor``."""

    mode: str = "circular"
    factor: int = 2

    def __post_init__(self):
        if self.mode not in ("circular", "zero_padded"):
            raise ValueError(f"unknown convolution mode {self.mode!r}")
        if self.mode == "zero_padded" and self.factor < 2:
            raise ValueError("zero-padded convolution needs factor >= 2")

    @classmethod
    def zero_padded(cls, factor: int = 2) -> ConvPolicy:
        return cls("zero_padded", factor)


CIRCULAR = ConvPolicy()


def frequencies(grid: GridSpec):
    """Broadcastable physical frequency axes ``(xi1, xi2, xi3)`` in 1/mm."""
    out = []
    for axis, (n, h) in enumerate(zip(grid.dims, grid.spacing)):
        xi = np.fft.fftfreq(n, d=h)
        shape = [1, 1, 1]
        shape[axis] = n
        out.append(xi.reshape(shape))
    return tuple(out)


def _xi_squared(grid: GridSpec):
    x1, x2, x3 = frequencies(grid)
    return x1**2 + x2**2 + x3**2, np.broadcast_to(x3**2, grid.shape)


def dipole_symbol(grid: GridSpec) -> SpectralSymbol:
    """``1/3 - xi3^2 / |xi|^2``, set to zero at the zero frequency."""
    r2, z2 = _xi_squared(grid)
    r2 = np.broadcast_to(r2, grid.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 / 3.0 - z2 / r2
    d[r2 == 0] = 0.0
    return SpectralSymbol(grid, d)


def neglap_continuous_symbol(grid: GridSpec) -> SpectralSymbol:
    """``|2 pi xi|^2``, the symbol of ``-Laplacian``."""
    r2, _ = _xi_squared(grid)
    return SpectralSymbol(grid, np.broadcast_to((2 * np.pi) ** 2 * r2, grid.shape))


def pdiff_symbol(grid: GridSpec) -> SpectralSymbol:
    """Symbol of ``-(1/3) Laplacian + d^2/dx3^2``: ``|2 pi xi|^2 * dipole``."""
    return neglap_continuous_symbol(grid) * dipole_symbol(grid)


def neglap_discrete_symbol(grid: GridSpec) -> SpectralSymbol:
    """DFT eigenvalues of the periodic 7-point ``-Laplacian`` stencil."""
    total = np.zeros(grid.shape)
    for axis, (n, h) in enumerate(zip(grid.dims, grid.spacing)):
        k = np.arange(n)
        lam = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / n)) / h**2
        shape = [1, 1, 1]
        shape[axis] = n
        total = total + lam.reshape(shape)
    return SpectralSymbol(grid, total)


def fourier_multiply(arr: np.ndarray, half_symbol: np.ndarray) -> np.ndarray:
    """Circular convolution of a real array with a real, even symbol.

    ``half_symbol`` is the ``rfftn`` half of the symbol (see
    :attr:`SpectralSymbol.half`).  This is the fast path used inside the
    iterative solvers.
    """
    return np.fft.irfftn(np.fft.rfftn(arr) * half_symbol, s=arr.shape, axes=(0, 1, 2))


def fourier_divide(arr: np.ndarray, half_denominator: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fourier_multiply`; the denominator must be nonzero."""
    return np.fft.irfftn(np.fft.rfftn(arr) / half_denominator, s=arr.shape, axes=(0, 1, 2))


def _apply_full(values: np.ndarray, data: np.ndarray) -> np.ndarray:
    out = np.fft.ifftn(np.fft.fftn(data) * values)
    scale = np.max(np.abs(data))
    resid = np.max(np.abs(out.imag))
    if resid > _IMAG_TOL * max(scale, np.finfo(float).tiny):
        raise ValueError(
            f"imaginary residue {resid:.3e} too large: symbol is not real and even"
        )
    return out.real


def apply_symbol(sym: SpectralSymbol, vol: ScalarVolume,
                 policy: ConvPolicy = CIRCULAR) -> ScalarVolume:
    """Apply a real symbol by FFT.

    With ``policy.mode == "zero_padded"`` the symbol must live on the padded
    grid; the volume is padded, filtered and cropped back, approximating the
    aperiodic (free-space) convolution.
    """
    if policy.mode == "circular":
        if sym.grid != vol.grid:
            raise GridMismatch(f"symbol grid {sym.grid.dims} != volume grid {vol.grid.dims}")
        return vol.like(_apply_full(sym.values, vol.data))
    padded = pad_zero(vol, policy.factor)
    if sym.grid != padded.grid:
        raise GridMismatch(
            f"zero-padded policy needs a symbol on {padded.grid.dims}, got {sym.grid.dims}"
        )
    out = ScalarVolume(padded.grid, _apply_full(sym.values, padded.data))
    return crop_center(out, vol.grid)


def solve_symbol(sym: SpectralSymbol, rhs: ScalarVolume, shift: float = 0.0,
                 dc_override: bool = False) -> ScalarVolume:
    """Solve ``(sym + shift) u = rhs`` on the periodic grid.

    If ``dc_override`` is set, a zero denominator at the zero frequency is
    tolerated and the solution's mean is set to 0 there.  Any other zero
    raises :class:`SingularSymbol`.
    """
    if shift < 0:
        raise ValueError("shift must be non-negative")
    if sym.grid != rhs.grid:
        raise GridMismatch("symbol and right-hand side grids differ")
    denom = np.array(sym.values + shift)
    zero = denom == 0
    if zero.any():
        dc_only = zero.sum() == 1 and zero[0, 0, 0]
        if not (dc_override and dc_only):
            raise SingularSymbol(f"symbol vanishes at {int(zero.sum())} frequencies")
        denom[0, 0, 0] = 1.0
    spec = np.fft.fftn(rhs.data) / denom
    if zero.any():
        spec[0, 0, 0] = 0.0
    out = np.fft.ifftn(spec)
    return rhs.like(out.real)


def neglap_array(u: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Periodic 7-point ``-Laplacian`` of a raw array."""
    out = np.zeros_like(u, dtype=np.float64)
    for axis, h in enumerate(spacing):
        out += (2.0 * u - np.roll(u, 1, axis) - np.roll(u, -1, axis)) / h**2
    return out


def neglap_stencil(vol: ScalarVolume) -> ScalarVolume:
    """``sum_i (2u(x) - u(x+e_i) - u(x-e_i)) / h_i^2`` with periodic wraparound."""
    return vol.like(neglap_array(vol.data, vol.grid.spacing))
