"""Laplacian boundary value (LBV) background removal and incompatibility analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import GridMismatch, MaxIterExceeded, NoInterior
from .spectral import neglap_array
from .volume import RoiMask, ScalarVolume, band_mask, interior_set

__all__ = ["lbv_solve", "lbv_system", "default_max_iter", "IncompReport",
           "analyze_incompatibility"]


def default_max_iter(n_unknowns: int) -> int:
    return max(500, math.ceil(10 * math.sqrt(n_unknowns)))


def lbv_system(b_total: ScalarVolume, roi: RoiMask):
    """The SPD Dirichlet system of the LBV problem.

    Unknowns are the interior voxels of ``roi``; boundary voxels and
    everything outside are fixed at zero.  Returns ``(interior, matvec, rhs)``
    where ``matvec`` acts on vectors over the interior voxels (in
    ``interior.member`` C order).
    """
    if roi.grid != b_total.grid:
        raise GridMismatch("ROI and field grids differ")
    inner = interior_set(roi)
    if inner.count == 0:
        raise NoInterior("ROI has no interior voxel")
    idx = inner.member
    spacing = roi.grid.spacing
    rhs = neglap_array(b_total.data, spacing)[idx]
    work = np.zeros(roi.grid.shape)

    def matvec(x):
        work[idx] = np.ravel(x)
        return neglap_array(work, spacing)[idx]

    return inner, matvec, rhs


def lbv_solve(b_total: ScalarVolume, roi: RoiMask, tol: float = 1e-8,
              max_iter: int | None = None) -> ScalarVolume:
    """Solve ``-Lap b_l = -Lap b`` on the ROI interior with ``b_l = 0`` on the boundary.

    The 7-point system is solved by conjugate gradient to relative residual
    ``tol``.  The result is exactly zero off the interior voxels.  Raises
    :class:`MaxIterExceeded` (carrying the last iterate as a volume) if the
    tolerance is not met.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must be in (0, 1)")
    inner, matvec, rhs = lbv_system(b_total, roi)
    n = rhs.size
    if max_iter is None:
        max_iter = default_max_iter(n)
    out = np.zeros(roi.grid.shape)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0:
        return ScalarVolume(roi.grid, out)
    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    x, info = cg(op, rhs, rtol=tol, atol=0.0, maxiter=max_iter)
    out[inner.member] = x
    resid = np.linalg.norm(rhs - matvec(x)) / rhs_norm
    if info != 0 or resid > tol:
        raise MaxIterExceeded(
            f"LBV conjugate gradient stopped at relative residual {resid:.3e} "
            f"after {max_iter} iterations", iterate=ScalarVolume(roi.grid, out),
            residual=resid)
    return ScalarVolume(roi.grid, out)


@dataclass(frozen=True, eq=False)
class IncompReport:
    """Where the discrete Laplacian of ``v = b_l - b_true_local`` lives."""

    v: ScalarVolume = field(repr=False)
    neglap_v: ScalarVolume = field(repr=False)
    band_mass_fraction: dict
    far_interior_fraction: float
    far_band: int
    v_l2: float
    neglap_v_l1: float

    def to_dict(self) -> dict:
        return {
            "band_mass_fraction": {str(k): f for k, f in self.band_mass_fraction.items()},
            "far_interior_fraction": self.far_interior_fraction,
            "far_band": self.far_band,
            "v_l2": self.v_l2,
            "neglap_v_l1": self.neglap_v_l1,
        }


def analyze_incompatibility(b_l: ScalarVolume, b_true_local: ScalarVolume, roi: RoiMask,
                            bands=(0, 1, 2, 3, 4), far_band: int = 4) -> IncompReport:
    """Fraction of ``||Lap v||_1`` inside each boundary band ``band_mask(roi, k)``.

    ``far_interior_fraction`` is the share in the ROI minus the
    ``far_band`` band.  With zero total mass every fraction is reported as
    1 (and the far-interior share as 0).
    """
    if not (b_l.grid == b_true_local.grid == roi.grid):
        raise GridMismatch("b_l, true local field and ROI grids differ")
    v = b_l - b_true_local
    lap = neglap_array(v.data, v.grid.spacing)
    mass = np.abs(lap)
    total = float(mass.sum())
    fractions = {}
    for k in sorted(set(int(k) for k in bands)):
        inside = float(mass[band_mask(roi, k).member].sum())
        fractions[k] = min(inside / total, 1.0) if total > 0 else 1.0
    far = roi.member & ~band_mask(roi, far_band).member
    far_frac = float(mass[far].sum()) / total if total > 0 else 0.0
    return IncompReport(v=v, neglap_v=v.like(lap), band_mass_fraction=fractions,
                        far_interior_fraction=far_frac, far_band=far_band,
                        v_l2=float(np.linalg.norm(v.data)), neglap_v_l1=total)
