"""Reconstruction quality measures restricted to the ROI."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import GridMismatch
from .volume import RoiMask, ScalarVolume

__all__ = ["EvalReport", "rmse_rel", "ssim3d", "evaluate"]

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # window truncated to 11^3


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    ssim: float
    roi_voxels: int
    wall_time_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _check(chi, chi_true, roi):
    if not (chi.grid == chi_true.grid == roi.grid):
        raise GridMismatch("volumes and ROI must share a grid")


def rmse_rel(chi: ScalarVolume, chi_true: ScalarVolume, roi: RoiMask) -> float:
    """Relative l2 error over the ROI, ``||chi - chi*||_Omega / ||chi*||_Omega``."""
    _check(chi, chi_true, roi)
    m = roi.member
    ref = np.linalg.norm(chi_true.data[m])
    if ref == 0:
        raise ValueError("reference has zero norm on the ROI")
    return float(np.linalg.norm(chi.data[m] - chi_true.data[m]) / ref)


def _blur(x):
    return ndimage.gaussian_filter(x, SSIM_SIGMA, mode="constant", cval=0.0,
                                   truncate=SSIM_RADIUS / SSIM_SIGMA)


def ssim3d(chi: ScalarVolume, chi_true: ScalarVolume, roi: RoiMask,
           k1: float = 0.01, k2: float = 0.03, data_range: float | None = None) -> float:
    """Mean over the ROI of the Gaussian-windowed SSIM map.

    The window is a normalised Gaussian (sigma 1.5 voxels) truncated to
    11^3 voxels, with zero padding at the grid faces.  ``data_range``
    defaults to ``max - min`` of the reference over the ROI.
    """
    _check(chi, chi_true, roi)
    if roi.count == 0:
        raise ValueError("ROI is empty")
    if data_range is None:
        ref = chi_true.data[roi.member]
        data_range = float(ref.max() - ref.min())
    if not data_range > 0:
        raise ValueError("degenerate dynamic range for SSIM")
    x, y = chi.data, chi_true.data
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = _blur(x), _blur(y)
    sxx = _blur(x * x) - mx * mx
    syy = _blur(y * y) - my * my
    sxy = _blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean((num / den)[roi.member]))


def evaluate(chi: ScalarVolume, chi_true: ScalarVolume, roi: RoiMask,
             wall_time_seconds: float = 0.0) -> EvalReport:
    return EvalReport(rmse=rmse_rel(chi, chi_true, roi), ssim=ssim3d(chi, chi_true, roi),
                      roi_voxels=roi.count, wall_time_seconds=float(wall_time_seconds))
