"""Undecimated tensor-product tight framelet transform (Haar by default).

Coefficients at level ``l`` and band ``alpha`` in ``{0,1}^3`` are periodic
correlations of the signal with the tensor filter ``q_alpha`` dilated by
``2**l`` (a trous), applied to the level-``l`` low-pass output.  The set
kept is every high-pass band of every level plus the deepest low-pass band,
``7 L + 1`` volumes in all.  Because the 1D filters satisfy the unitary
extension principle the analysis operator ``W`` obeys ``W^T W = I``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch
from .volume import GridSpec, ScalarVolume

__all__ = [
    "FilterBank",
    "HAAR",
    "FrameCoeffs",
    "ThresholdSchedule",
    "band_keys",
    "uep_residuals",
    "analyze",
    "synthesize",
    "iso_threshold",
    "iso_l12_norm",
    "analyze_array",
    "synthesize_array",
    "threshold_array",
    "l12_norm_array",
]

HIGH_BANDS = tuple(a for a in itertools.product((0, 1), repeat=3) if a != (0, 0, 0))


def uep_residuals(low, high, n_samples: int = 4097):
    """Worst-case violation of the two UEP identities on a frequency sample.

    Returns ``(partition, shifted)``: the max of ``|sum |q_a(xi)|^2 - 1|``
    and of ``|sum q_a(xi) conj(q_a(xi + pi))|`` over ``xi`` in ``[-pi, pi]``.
    """
    xi = np.linspace(-np.pi, np.pi, n_samples)

    def hat(q, w):
        k = np.arange(len(q))
        return np.exp(-1j * np.outer(w, k)) @ np.asarray(q, dtype=float)

    lo, hi = hat(low, xi), hat(high, xi)
    lo_s, hi_s = hat(low, xi + np.pi), hat(high, xi + np.pi)
    partition = np.max(np.abs(np.abs(lo) ** 2 + np.abs(hi) ** 2 - 1.0))
    shifted = np.max(np.abs(lo * np.conj(lo_s) + hi * np.conj(hi_s)))
    return float(partition), float(shifted)


@dataclass(frozen=True)
class FilterBank:
    """A two-channel 1D tight frame filter pair and the number of levels."""

    low: tuple[float, ...] = (0.5, 0.5)
    high: tuple[float, ...] = (0.5, -0.5)
    levels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "low", tuple(float(x) for x in self.low))
        object.__setattr__(self, "high", tuple(float(x) for x in self.high))
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        part, shift = uep_residuals(self.low, self.high)
        if part > 1e-14 or shift > 1e-14:
            raise ValueError(f"filters violate the UEP (errors {part:.2e}, {shift:.2e})")

    @property
    def n_bands(self) -> int:
        return 7 * self.levels + 1


HAAR = FilterBank()


def band_keys(levels: int):
    """Band order used for coefficient stacks: highs level by level, then the low band."""
    keys = [(l, a) for l in range(levels) for a in HIGH_BANDS]
    keys.append((levels - 1, (0, 0, 0)))
    return keys


@dataclass(frozen=True)
class ThresholdSchedule:
    """One non-negative threshold per decomposition level."""

    gammas: tuple[float, ...]

    def __post_init__(self):
        g = tuple(float(x) for x in self.gammas)
        if any(x < 0 or not np.isfinite(x) for x in g):
            raise ValueError("thresholds must be finite and non-negative")
        object.__setattr__(self, "gammas", g)

    @classmethod
    def from_nu(cls, nu: float, levels: int = 1) -> ThresholdSchedule:
        return cls(tuple(nu * 2.0 ** (-l) for l in range(levels)))

    def scaled(self, factor: float) -> ThresholdSchedule:
        return ThresholdSchedule(tuple(g * factor for g in self.gammas))


@dataclass(frozen=True, eq=False)
class FrameCoeffs:
    """Coefficient stack of shape ``(7 L + 1,) + grid.dims`` in :func:`band_keys` order."""

    grid: GridSpec
    stack: np.ndarray = field(repr=False)
    levels: int = 1

    def __post_init__(self):
        stack = np.array(self.stack, dtype=np.float64, copy=True)
        if stack.shape != (7 * self.levels + 1,) + self.grid.shape:
            raise GridMismatch(f"coefficient stack shape {stack.shape} does not match grid")
        stack.setflags(write=False)
        object.__setattr__(self, "stack", stack)

    @property
    def bands(self) -> dict:
        return {key: ScalarVolume(self.grid, self.stack[i])
                for i, key in enumerate(band_keys(self.levels))}

    @classmethod
    def from_bands(cls, grid: GridSpec, bands: dict, levels: int) -> FrameCoeffs:
        missing = [k for k in band_keys(levels) if k not in bands]
        if missing:
            raise KeyError(f"missing frame bands: {missing}")
        stack = np.stack([np.asarray(bands[k].data if isinstance(bands[k], ScalarVolume)
                                     else bands[k]) for k in band_keys(levels)])
        return cls(grid, stack, levels)

    def norm_sq(self) -> float:
        return float(np.sum(self.stack**2))


def _correlate(u, taps, step, axis):
    out = taps[0] * u
    for j in range(1, len(taps)):
        out = out + taps[j] * np.roll(u, -j * step, axis)
    return out


def _correlate_adjoint(c, taps, step, axis):
    out = taps[0] * c
    for j in range(1, len(taps)):
        out = out + taps[j] * np.roll(c, j * step, axis)
    return out


def _split_level(c, bank, step):
    """All 8 tensor bands of one level, keyed by alpha."""
    filters = (bank.low, bank.high)
    parts = {(): c}
    for axis in range(3):
        parts = {key + (a,): _correlate(arr, filters[a], step, axis)
                 for key, arr in parts.items() for a in (0, 1)}
    return parts


def _merge_level(parts, bank, step):
    filters = (bank.low, bank.high)
    for axis in (2, 1, 0):
        merged = {}
        for key, arr in parts.items():
            head, a = key[:-1], key[-1]
            term = _correlate_adjoint(arr, filters[a], step, axis)
            merged[head] = term if head not in merged else merged[head] + term
        parts = merged
    return parts[()]


def analyze_array(u: np.ndarray, bank: FilterBank = HAAR) -> np.ndarray:
    """Analysis operator ``W`` on a raw 3D array; returns the band stack."""
    out = []
    c = u
    for l in range(bank.levels):
        parts = _split_level(c, bank, 2**l)
        out.extend(parts[a] for a in HIGH_BANDS)
        c = parts[(0, 0, 0)]
    out.append(c)
    return np.stack(out)


def synthesize_array(stack: np.ndarray, bank: FilterBank = HAAR) -> np.ndarray:
    """Synthesis operator ``W^T`` on a raw band stack."""
    L = bank.levels
    c = stack[-1]
    for l in reversed(range(L)):
        parts = {a: stack[7 * l + i] for i, a in enumerate(HIGH_BANDS)}
        parts[(0, 0, 0)] = c
        c = _merge_level(parts, bank, 2**l)
    return c


def analyze(u: ScalarVolume, bank: FilterBank = HAAR) -> FrameCoeffs:
    return FrameCoeffs(u.grid, analyze_array(u.data, bank), bank.levels)


def synthesize(c: FrameCoeffs, bank: FilterBank = HAAR) -> ScalarVolume:
    if c.levels != bank.levels:
        raise ValueError("coefficient levels do not match the filter bank")
    return ScalarVolume(c.grid, synthesize_array(c.stack, bank))


def _level_magnitudes(stack, levels):
    return [np.sqrt(np.sum(stack[7 * l: 7 * l + 7] ** 2, axis=0)) for l in range(levels)]


def threshold_array(stack: np.ndarray, gammas, levels: int) -> np.ndarray:
    """Isotropic soft thresholding of a raw band stack.

    At each voxel the 7 high bands of a level shrink together by
    ``max(R - gamma, 0) / R``; the low band passes unchanged.
    """
    if len(gammas) != levels:
        raise ValueError("need one threshold per level")
    out = np.array(stack, copy=True)
    for l, R in enumerate(_level_magnitudes(stack, levels)):
        scale = np.zeros_like(R)
        nz = R > 0
        scale[nz] = np.maximum(R[nz] - gammas[l], 0.0) / R[nz]
        out[7 * l: 7 * l + 7] *= scale
    return out


def l12_norm_array(stack: np.ndarray, gammas, levels: int) -> float:
    return float(sum(g * R.sum() for g, R in zip(gammas, _level_magnitudes(stack, levels))))


def iso_threshold(c: FrameCoeffs, sched: ThresholdSchedule) -> FrameCoeffs:
    return FrameCoeffs(c.grid, threshold_array(c.stack, sched.gammas, c.levels), c.levels)


def iso_l12_norm(c: FrameCoeffs, sched: ThresholdSchedule) -> float:
    """Weighted isotropic l1 norm of the high-pass coefficients."""
    if len(sched.gammas) != c.levels:
        raise ValueError("need one threshold per level")
    return l12_norm_array(c.stack, sched.gammas, c.levels)
