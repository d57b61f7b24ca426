"""End-to-end experiment: phantom -> GRE simulation -> LBV -> inversion -> evaluation.

Every stage takes and returns volumes in ppm rounded to float32, exactly
as they would come back from a QVOL file.  That is what lets the CLI
subcommands, chained through files, reproduce :func:`run_pipeline`
bit for bit.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .bfr import analyze_incompatibility, lbv_solve
from .errors import QSMError
from .metrics import EvalReport, evaluate
from .phantom import (PPM, AcquisitionParams, PhantomScene, add_noise, default_acquisition,
                      default_grid, default_scene, estimate_field, load_scene, rasterize,
                      simulate_gre, simulate_total_field, true_local_field)
from .recon import ReconConfig, ReconResult, build_sigma, reconstruct
from .volume import GridSpec, RoiMask, ScalarVolume

__all__ = ["PipelineConfig", "PipelineError", "default_methods", "run_pipeline",
           "stage_phantom", "stage_simulate", "stage_bfr", "stage_truefield", "stage_recon",
           "stage_eval", "load_config"]


class PipelineError(QSMError):
    """A stage failed; ``stage`` and ``method`` say where, ``__cause__`` says why."""

    def __init__(self, message, stage: str, method: str | None = None):
        super().__init__(message)
        self.stage = stage
        self.method = method


def default_methods() -> tuple[ReconConfig, ...]:
    return (ReconConfig("tkd"), ReconConfig("tikhonov"), ReconConfig("frame_int"),
            ReconConfig("frame_diff", nu=4e-3), ReconConfig("frame_hire"))


def _method_from_json(entry) -> ReconConfig:
    if isinstance(entry, str):
        return ReconConfig(entry, nu=4e-3) if entry == "frame_diff" else ReconConfig(entry)
    entry = dict(entry)
    if entry.get("method") == "frame_diff" and "nu" not in entry:
        entry["nu"] = 4e-3
    return ReconConfig.from_dict(entry)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on.  ``scene`` is a path, or None for the built-in scene."""

    scene: str | None = None
    grid: GridSpec = field(default_factory=default_grid)
    acquisition: AcquisitionParams = field(default_factory=default_acquisition)
    bfr_tol: float = 1e-8
    methods: tuple[ReconConfig, ...] = field(default_factory=default_methods)
    output_dir: str = "hireqsm_out"
    seed: int | None = None
    deterministic: bool = False
    parallel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ValueError("at least one reconstruction method is required")
        names = [m.method for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("each method may appear only once")
        if self.scene is not None and not Path(self.scene).is_file():
            raise FileNotFoundError(f"scene file not found: {self.scene}")
        if not 0 < self.bfr_tol < 1:
            raise ValueError("bfr_tol must be in (0, 1)")
        if self.seed is not None:
            object.__setattr__(self, "acquisition", self.acquisition.replace(seed=self.seed))

    def load_scene(self) -> PhantomScene:
        return default_scene() if self.scene is None else load_scene(self.scene)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "grid": {"dims": list(self.grid.dims), "spacing": list(self.grid.spacing)},
            "acquisition": self.acquisition.to_dict(),
            "bfr_tol": self.bfr_tol,
            "methods": [m.to_dict() for m in self.methods],
            "output_dir": self.output_dir,
            "seed": self.acquisition.seed,
            "deterministic": self.deterministic,
            "parallel": self.parallel,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> PipelineConfig:
        kw = {}
        if d.get("scene") is not None:
            p = Path(d["scene"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            kw["scene"] = str(p)
        if "grid" in d:
            g = d["grid"]
            kw["grid"] = GridSpec(tuple(g["dims"]), tuple(g.get("spacing", (1.0, 1.0, 1.0))))
        if "acquisition" in d:
            acq = default_acquisition().to_dict()
            acq.update(d["acquisition"])
            kw["acquisition"] = AcquisitionParams.from_dict(acq)
        if "methods" in d:
            kw["methods"] = tuple(_method_from_json(m) for m in d["methods"])
        for key in ("bfr_tol", "output_dir", "seed", "deterministic", "parallel"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)

    def replace(self, **changes) -> PipelineConfig:
        return replace(self, **changes)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh), base_dir=path.parent)


# -- stages -----------------------------------------------------------------

def stage_phantom(scene: PhantomScene, grid: GridSpec):
    """``(chi_ppm, roi, magnitude)``."""
    chi, roi, mag = rasterize(scene, grid)
    return io.quantize(chi), roi, io.quantize(mag)


def stage_simulate(chi_ppm: ScalarVolume, magnitude: ScalarVolume, acq: AcquisitionParams,
                   roi: RoiMask | None = None):
    """``(b_total_ppm, b_estimated_ppm, weight)`` from a noisy multi-echo acquisition."""
    b = simulate_total_field(chi_ppm * PPM)
    series = add_noise(simulate_gre(b, magnitude, acq))
    b_hat, weight = estimate_field(series, roi)
    return io.quantize(b * (1 / PPM)), io.quantize(b_hat * (1 / PPM)), io.quantize(weight)


def stage_bfr(b_ppm: ScalarVolume, roi: RoiMask, tol: float = 1e-8) -> ScalarVolume:
    return io.quantize(lbv_solve(b_ppm, roi, tol=tol))


def stage_truefield(chi_ppm: ScalarVolume, roi: RoiMask) -> ScalarVolume:
    return io.quantize(true_local_field(chi_ppm * PPM, roi) * (1 / PPM))


def stage_recon(b_l_ppm: ScalarVolume, cfg: ReconConfig, roi: RoiMask | None = None,
                weight: ScalarVolume | None = None) -> ReconResult:
    sigma = None
    if cfg.method.startswith("frame"):
        if cfg.sigma_policy != "ones" and roi is None:
            raise ValueError(f"sigma policy {cfg.sigma_policy!r} needs the ROI")
        grid_roi = roi if roi is not None else RoiMask(b_l_ppm.grid,
                                                       np.ones(b_l_ppm.grid.shape, bool))
        sigma = build_sigma(cfg.sigma_policy, grid_roi, weight)
    res = reconstruct(b_l_ppm, cfg, sigma)
    return replace(res, chi=io.quantize(res.chi))


def stage_eval(chi: ScalarVolume, chi_true: ScalarVolume, roi: RoiMask,
               wall_time_seconds: float = 0.0) -> EvalReport:
    return evaluate(chi, chi_true, roi, wall_time_seconds)


# -- orchestration ----------------------------------------------------------

def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def recon_sidecar(res: ReconResult, cfg: ReconConfig, deterministic: bool) -> dict:
    return {
        "method": res.method,
        "config": cfg.to_dict(),
        "wall_time_seconds": 0.0 if deterministic else res.wall_time_seconds,
        "trace": res.trace.to_dict() if res.trace is not None else None,
    }


def _run_stage(stage, fn, *args, method=None):
    try:
        return fn(*args)
    except QSMError as exc:
        label = f"{stage}[{method}]" if method else stage
        raise PipelineError(f"{label} failed: {exc}", stage, method) from exc


def run_pipeline(config: PipelineConfig) -> dict[str, EvalReport]:
    """Run the whole experiment and write every intermediate to ``config.output_dir``.

    Returns the evaluation report of each method, keyed by method name.
    Files already written are kept if a later stage fails.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    # the output directory itself is left out so runs into different
    # directories produce identical files
    _dump_json({k: v for k, v in config.to_dict().items() if k != "output_dir"},
               out / "config.json")

    chi, roi, mag = _run_stage("phantom", stage_phantom, config.load_scene(), config.grid)
    io.write_qvol(chi, out / "chi_true.qvol")
    io.write_qvol(roi, out / "roi.qvol")
    io.write_qvol(mag, out / "magnitude.qvol")

    b_total, b_est, weight = _run_stage("simulate", stage_simulate, chi, mag,
                                        config.acquisition, roi)
    io.write_qvol(b_total, out / "b_total.qvol")
    io.write_qvol(b_est, out / "b_estimated.qvol")
    io.write_qvol(weight, out / "weight.qvol")

    b_l = _run_stage("bfr", stage_bfr, b_est, roi, config.bfr_tol)
    io.write_qvol(b_l, out / "b_local.qvol")
    b_true = _run_stage("truefield", stage_truefield, chi, roi)
    io.write_qvol(b_true, out / "b_true_local.qvol")
    # the incompatibility is a property of the noise-free field; on the noisy
    # estimate the Laplacian of the noise would swamp it
    b_l_clean = _run_stage("bfr", stage_bfr, b_total, roi, config.bfr_tol)
    report = analyze_incompatibility(b_l_clean, b_true, roi).to_dict()
    report["source"] = "LBV of the noise-free total field"
    _dump_json(report, out / "incompatibility.json")

    def one(cfg: ReconConfig):
        res = _run_stage("recon", stage_recon, b_l, cfg, roi, weight, method=cfg.method)
        return cfg, res

    if config.parallel and len(config.methods) > 1:
        with ThreadPoolExecutor(max_workers=len(config.methods)) as pool:
            results = list(pool.map(one, config.methods))
    else:
        results = [one(cfg) for cfg in config.methods]

    reports = {}
    for cfg, res in results:
        io.write_qvol(res.chi, out / f"chi_{cfg.method}.qvol")
        side = recon_sidecar(res, cfg, config.deterministic)
        _dump_json(side, out / f"chi_{cfg.method}.json")
        rep = _run_stage("eval", stage_eval, res.chi, chi, roi, side["wall_time_seconds"],
                         method=cfg.method)
        _dump_json(rep.to_dict(), out / f"report_{cfg.method}.json")
        reports[cfg.method] = rep
    _dump_json({m: r.to_dict() for m, r in reports.items()}, out / "reports.json")
    return reports

