"""Ellipsoid phantoms and simulation of the multi-echo GRE acquisition.

Susceptibility in scene files is in ppm; volumes passed to the field
simulators are dimensionless (ppm * 1e-6), and so are the fields they
return.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import GridMismatch, PhaseWrapRisk
from .spectral import (ConvPolicy, apply_symbol, dipole_symbol, neglap_continuous_symbol,
                       pdiff_symbol, solve_symbol)
from .volume import (ComplexVolume, GridSpec, RoiMask, ScalarVolume, crop_center,
                     pad_zero)

__all__ = [
    "PPM",
    "EllipsoidSpec",
    "PhantomScene",
    "AcquisitionParams",
    "EchoSeries",
    "load_scene",
    "save_scene",
    "default_scene",
    "default_grid",
    "default_acquisition",
    "rasterize",
    "simulate_total_field",
    "simulate_gre",
    "add_noise",
    "estimate_field",
    "true_local_field",
    "gaussian_field",
    "xorshift64star",
    "splitmix64",
]

PPM = 1e-6
GAMMA_HZ_PER_T = 42.577e6
PAD_FACTOR = 2


@dataclass(frozen=True)
class EllipsoidSpec:
    """Axis-aligned ellipsoid; ``center``/``semi_axes`` in mm, ``chi`` in ppm."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    chi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(x) for x in self.semi_axes))
        object.__setattr__(self, "chi", float(self.chi))
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValueError("ellipsoids are 3D")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")

    def contains(self, x1, x2, x3):
        c, a = self.center, self.semi_axes
        return ((x1 - c[0]) / a[0]) ** 2 + ((x2 - c[1]) / a[1]) ** 2 \
            + ((x3 - c[2]) / a[2]) ** 2 <= 1.0

    def surface_points(self, n: int = 4000):
        """Fibonacci-lattice sample of the surface, shape ``(3, n)``."""
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        r = np.sqrt(1.0 - z**2)
        phi = np.pi * (1.0 + 5.0**0.5) * i
        unit = np.stack([r * np.cos(phi), r * np.sin(phi), z])
        return np.asarray(self.center)[:, None] + np.asarray(self.semi_axes)[:, None] * unit


def _overlaps(a: EllipsoidSpec, b: EllipsoidSpec) -> bool:
    # sampled test, exact enough for scene validation at voxel scale
    if a.contains(*b.center) or b.contains(*a.center):
        return True
    return bool(np.any(a.contains(*b.surface_points())) or np.any(b.contains(*a.surface_points())))


@dataclass(frozen=True)
class PhantomScene:
    roi_shape: EllipsoidSpec
    interior: tuple[EllipsoidSpec, ...] = ()
    exterior: tuple[EllipsoidSpec, ...] = ()
    magnitude_inside: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "interior", tuple(self.interior))
        object.__setattr__(self, "exterior", tuple(self.exterior))
        if not self.magnitude_inside > 0:
            raise ValueError("magnitude_inside must be positive")
        roi = self.roi_shape
        for k, e in enumerate(self.interior):
            if not np.all(roi.contains(*e.surface_points())):
                raise ValueError(f"interior ellipsoid {k} is not inside the ROI shape")
        for k, e in enumerate(self.exterior):
            if _overlaps(roi, e):
                raise ValueError(f"exterior ellipsoid {k} intersects the ROI shape")

    def to_dict(self, comment: str | None = None) -> dict:
        d = {}
        if comment is not None:
            d["comment"] = comment
        d["roi_shape"] = asdict(self.roi_shape)
        d["interior"] = [asdict(e) for e in self.interior]
        d["exterior"] = [asdict(e) for e in self.exterior]
        d["magnitude_inside"] = self.magnitude_inside
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PhantomScene:
        def ell(e):
            return EllipsoidSpec(tuple(e["center"]), tuple(e["semi_axes"]), e.get("chi", 0.0))
        return cls(
            roi_shape=ell(d["roi_shape"]),
            interior=tuple(ell(e) for e in d.get("interior", ())),
            exterior=tuple(ell(e) for e in d.get("exterior", ())),
            magnitude_inside=float(d.get("magnitude_inside", 1.0)),
        )


SCENE_COMMENT = ("Ellipsoid phantom. centers and semi_axes in mm (voxel centres at "
                 "(i+0.5)*h); chi in ppm; magnitude_inside in arbitrary units.")


def load_scene(path) -> PhantomScene:
    with open(path, encoding="utf-8") as fh:
        return PhantomScene.from_dict(json.load(fh))


def save_scene(scene: PhantomScene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene.to_dict(SCENE_COMMENT), fh, indent=2)
        fh.write("\n")


def _default_config() -> dict:
    text = resources.files("hireqsm").joinpath("data/default_scene.json").read_text("utf-8")
    return json.loads(text)


def default_scene() -> PhantomScene:
    return PhantomScene.from_dict(_default_config())


def default_grid() -> GridSpec:
    g = _default_config()["grid"]
    return GridSpec(tuple(g["dims"]), tuple(g["spacing"]))


def default_acquisition() -> AcquisitionParams:
    return AcquisitionParams.from_dict(_default_config()["acquisition"])


@dataclass(frozen=True)
class AcquisitionParams:
    """Scanner and sequence settings; ``echo_times`` in seconds."""

    B0: float = 3.0
    echo_times: tuple[float, ...] = tuple(2.6e-3 * (t + 1) for t in range(11))
    noise_sigma: float = 0.02
    seed: int = 0
    gamma_hz_per_tesla: float = GAMMA_HZ_PER_T

    def __post_init__(self):
        te = tuple(float(t) for t in self.echo_times)
        object.__setattr__(self, "echo_times", te)
        if not te:
            raise ValueError("need at least one echo")
        if te[0] <= 0 or any(b <= a for a, b in zip(te, te[1:])):
            raise ValueError("echo times must be positive and strictly increasing")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def phase_rate(self) -> float:
        """Radians per second per unit (dimensionless) field: ``2 pi gamma B0``."""
        return 2.0 * np.pi * self.gamma_hz_per_tesla * self.B0

    def replace(self, **changes) -> AcquisitionParams:
        d = asdict(self)
        d.update(changes)
        return AcquisitionParams(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["echo_times"] = list(self.echo_times)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AcquisitionParams:
        keys = {"B0", "echo_times", "noise_sigma", "seed", "gamma_hz_per_tesla"}
        return cls(**{k: v for k, v in d.items() if k in keys})


@dataclass(frozen=True, eq=False)
class EchoSeries:
    params: AcquisitionParams
    signals: tuple[ComplexVolume, ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(self.signals))
        if len(self.signals) != len(self.params.echo_times):
            raise ValueError("one signal per echo time is required")


def rasterize(scene: PhantomScene, grid: GridSpec):
    """Sample the scene at voxel centres.

    Returns ``(chi_full, roi, magnitude)``.  ``chi_full`` is in ppm as stored
    in the scene; where ellipsoids overlap the last listed one wins (ROI
    shape first, then interior, then exterior).
    """
    x1, x2, x3 = grid.voxel_centers()
    chi = np.zeros(grid.shape)
    inside = scene.roi_shape.contains(x1, x2, x3)
    chi[inside] = scene.roi_shape.chi
    for e in scene.interior + scene.exterior:
        chi[e.contains(x1, x2, x3)] = e.chi
    roi = RoiMask(grid, inside)
    magnitude = np.where(inside, scene.magnitude_inside, 0.0)
    return ScalarVolume(grid, chi), roi, ScalarVolume(grid, magnitude)


def simulate_total_field(chi_full: ScalarVolume) -> ScalarVolume:
    """Field induced by all of ``chi_full`` (dimensionless in, dimensionless out).

    Free-space convolution with the dipole kernel, approximated by a
    factor-2 zero-padded FFT.
    """
    big = chi_full.grid.padded(PAD_FACTOR)
    return apply_symbol(dipole_symbol(big), chi_full, ConvPolicy.zero_padded(PAD_FACTOR))


def true_local_field(chi_full: ScalarVolume, roi: RoiMask) -> ScalarVolume:
    """Field generated by the source ``P(D) chi`` restricted to the ROI.

    ``P(D) chi`` is computed spectrally on the padded grid, masked by the
    ROI indicator, and the negative Laplacian is inverted spectrally (mean
    set to zero), then cropped back.
    """
    if roi.grid != chi_full.grid:
        raise GridMismatch("ROI and susceptibility grids differ")
    big = chi_full.grid.padded(PAD_FACTOR)
    source = apply_symbol(pdiff_symbol(big), chi_full, ConvPolicy.zero_padded(PAD_FACTOR))
    masked = pad_zero(source.like(source.data * roi.member), PAD_FACTOR)
    field_big = solve_symbol(neglap_continuous_symbol(big), masked, dc_override=True)
    return crop_center(field_big, chi_full.grid)


def simulate_gre(b: ScalarVolume, magnitude: ScalarVolume,
                 params: AcquisitionParams) -> EchoSeries:
    """Noiseless signals ``m * exp(-i 2 pi gamma B0 b TE)``, one per echo.

    Raises :class:`PhaseWrapRisk` if the phase reaches pi anywhere the
    magnitude is nonzero.
    """
    if b.grid != magnitude.grid:
        raise GridMismatch("field and magnitude grids differ")
    support = magnitude.data != 0
    signals = []
    for te in params.echo_times:
        phase = params.phase_rate * te * b.data
        worst = np.max(np.abs(phase[support]), initial=0.0)
        if worst >= np.pi:
            raise PhaseWrapRisk(
                f"|phase| reaches {worst:.3f} rad at TE={te * 1e3:.2f} ms; "
                "phase unwrapping is not supported")
        signals.append(ComplexVolume(b.grid, magnitude.data * np.exp(-1j * phase)))
    return EchoSeries(params, signals)


# -- noise ------------------------------------------------------------------
# Each voxel owns an xorshift64* stream seeded through splitmix64 from
# (seed, linear x-fastest index), so draws do not depend on traversal order.

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(x):
    """SplitMix64 finaliser applied elementwise to ``uint64`` values."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def xorshift64star(state):
    """Advance xorshift64* states; returns ``(new_state, output)``."""
    with np.errstate(over="ignore"):
        x = state ^ (state >> np.uint64(12))
        x = x ^ (x << np.uint64(25))
        x = x ^ (x >> np.uint64(27))
        return x, x * np.uint64(0x2545F4914F6CDD1D)


def _uniform(state):
    state, out = xorshift64star(state)
    # 53-bit mantissa in (0, 1]; never 0 so log() in Box-Muller is safe
    return state, ((out >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def gaussian_field(seed: int, n: int, draws: int) -> np.ndarray:
    """Standard normals, shape ``(draws, n)``; column ``j`` is voxel ``j``'s stream.

    Box-Muller on consecutive uniform pairs gives two normals per pair.
    """
    idx = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = splitmix64(splitmix64(np.uint64(seed)) ^ idx)
    state[state == 0] = _GOLDEN
    out = np.empty((draws, n))
    for k in range(0, draws, 2):
        state, u1 = _uniform(state)
        state, u2 = _uniform(state)
        rad = np.sqrt(-2.0 * np.log(u1))
        out[k] = rad * np.cos(2.0 * np.pi * u2)
        if k + 1 < draws:
            out[k + 1] = rad * np.sin(2.0 * np.pi * u2)
    return out


def add_noise(series: EchoSeries) -> EchoSeries:
    """Add i.i.d. N(0, sigma^2) to the real and imaginary part of every sample."""
    sigma = series.params.noise_sigma
    if sigma == 0:
        return series
    grid = series.signals[0].grid
    z = gaussian_field(series.params.seed, grid.size, 2 * len(series.signals))
    noisy = []
    for t, sig in enumerate(series.signals):
        re = z[2 * t].reshape(grid.shape, order="F")
        im = z[2 * t + 1].reshape(grid.shape, order="F")
        noisy.append(ComplexVolume(grid, sig.data + sigma * (re + 1j * im)))
    return EchoSeries(series.params, noisy)


def estimate_field(series: EchoSeries, roi: RoiMask | None = None):
    """Per-voxel weighted least-squares fit of the phase against echo time.

    With ``theta_t = -arg(I_t)`` and weights ``w_t = |I_t|^2`` the field is
    ``sum w theta TE / (c sum w TE^2)`` where ``c = 2 pi gamma B0``.  The
    second return value is ``sum w TE^2`` scaled so its maximum over ``roi``
    (the whole grid if omitted) is 1, clipped to ``[0, 1]``.
    """
    params = series.params
    grid = series.signals[0].grid
    num = np.zeros(grid.shape)
    den = np.zeros(grid.shape)
    for te, sig in zip(params.echo_times, series.signals):
        w = np.abs(sig.data) ** 2
        theta = -np.angle(sig.data)
        num += w * theta * te
        den += w * te**2
    b_hat = np.zeros(grid.shape)
    ok = den > 0
    b_hat[ok] = num[ok] / (params.phase_rate * den[ok])
    region = den if roi is None else den[roi.member]
    peak = np.max(region, initial=0.0)
    weight = np.clip(den / peak, 0.0, 1.0) if peak > 0 else np.zeros(grid.shape)
    return ScalarVolume(grid, b_hat), ScalarVolume(grid, weight)
