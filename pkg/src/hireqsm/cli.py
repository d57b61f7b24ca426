"""Command-line front end.

Each subcommand is one pipeline stage reading and writing QVOL files;
``pipeline`` runs them all.  Exit status: 0 success, 1 usage or input
error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import __version__, io
from .bfr import analyze_incompatibility
from .errors import GridMismatch, QSMError, QvolError
from .pipeline import (PipelineConfig, PipelineError, load_config, recon_sidecar, run_pipeline,
                       stage_bfr, stage_eval, stage_phantom, stage_recon, stage_simulate,
                       stage_truefield)
from .recon import METHODS, ReconConfig
from .volume import GridSpec, RoiMask, ScalarVolume

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ------------------------------------------------------------------

def _base_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    if getattr(args, "scene", None):
        changes["scene"] = args.scene
    if getattr(args, "dims", None) or getattr(args, "spacing", None):
        dims = tuple(args.dims) if args.dims else cfg.grid.dims
        spacing = tuple(args.spacing) if args.spacing else cfg.grid.spacing
        changes["grid"] = GridSpec(dims, spacing)
    acq = {}
    for flag, key in (("B0", "B0"), ("echo_times", "echo_times"),
                      ("noise_sigma", "noise_sigma"), ("gamma", "gamma_hz_per_tesla")):
        val = getattr(args, flag, None)
        if val is not None:
            acq[key] = val
    if acq:
        changes["acquisition"] = cfg.acquisition.replace(**acq)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "bfr_tol", None) is not None:
        changes["bfr_tol"] = args.bfr_tol
    if getattr(args, "methods", None):
        changes["methods"] = tuple(ReconConfig(m, nu=4e-3) if m == "frame_diff"
                                   else ReconConfig(m) for m in args.methods)
    if getattr(args, "out_dir", None):
        changes["output_dir"] = args.out_dir
    for flag in ("deterministic", "parallel"):
        if getattr(args, flag, False):
            changes[flag] = True
    return cfg.replace(**changes) if changes else cfg


def _read_volume(path) -> ScalarVolume:
    vol = io.read_qvol(path)
    if not isinstance(vol, ScalarVolume):
        raise UsageError(f"{path} holds a mask, expected a scalar volume")
    return vol


def _read_mask(path) -> RoiMask:
    mask = io.read_qvol(path)
    if not isinstance(mask, RoiMask):
        raise UsageError(f"{path} holds a scalar volume, expected a u8 mask")
    return mask


def _write_json(obj, path):
    if path is None:
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- subcommands --------------------------------------------------------------

def cmd_phantom(args):
    cfg = _base_config(args)
    chi, roi, mag = stage_phantom(cfg.load_scene(), cfg.grid)
    out = _outdir(args.out)
    io.write_qvol(chi, out / "chi_true.qvol")
    io.write_qvol(roi, out / "roi.qvol")
    io.write_qvol(mag, out / "magnitude.qvol")


def cmd_simulate(args):
    cfg = _base_config(args)
    chi, mag = _read_volume(args.chi), _read_volume(args.magnitude)
    roi = _read_mask(args.roi) if args.roi else None
    b_total, b_est, weight = stage_simulate(chi, mag, cfg.acquisition, roi)
    out = _outdir(args.out)
    io.write_qvol(b_total, out / "b_total.qvol")
    io.write_qvol(b_est, out / "b_estimated.qvol")
    io.write_qvol(weight, out / "weight.qvol")


def cmd_bfr(args):
    cfg = _base_config(args)
    io.write_qvol(stage_bfr(_read_volume(args.field), _read_mask(args.roi), cfg.bfr_tol),
                  args.out)


def cmd_truefield(args):
    roi = _read_mask(args.roi)
    b_true = stage_truefield(_read_volume(args.chi), roi)
    io.write_qvol(b_true, args.out)
    if args.local_field:
        rep = analyze_incompatibility(_read_volume(args.local_field), b_true, roi)
        _write_json(rep.to_dict(), args.report)


_RECON_FLAGS = ("hbar", "eps", "nu", "lam", "beta", "levels", "tol", "max_iter", "sigma_policy")


def cmd_recon(args):
    base = {}
    if args.config:
        for m in load_config(args.config).methods:
            if m.method == args.method:
                base = m.to_dict()
    elif args.method == "frame_diff":
        base = {"nu": 4e-3}
    base["method"] = args.method
    for key in _RECON_FLAGS:
        val = getattr(args, key)
        if val is not None:
            base["lambda" if key == "lam" else key] = val
            if key == "nu" and args.lam is None:
                base.pop("lambda", None)
    cfg = ReconConfig.from_dict(base)
    roi = _read_mask(args.roi) if args.roi else None
    weight = _read_volume(args.weight) if args.weight else None
    res = stage_recon(_read_volume(args.field), cfg, roi, weight)
    io.write_qvol(res.chi, args.out)
    _write_json(recon_sidecar(res, cfg, args.deterministic), str(args.out) + ".json")


def cmd_eval(args):
    wall = args.wall_time
    side = Path(str(args.chi) + ".json")
    if wall is None and side.is_file():
        wall = json.loads(side.read_text("utf-8")).get("wall_time_seconds", 0.0)
    rep = stage_eval(_read_volume(args.chi), _read_volume(args.truth), _read_mask(args.roi),
                     wall or 0.0)
    _write_json(rep.to_dict(), args.out)


def cmd_export_slice(args):
    vol = io.read_qvol(args.input)
    if isinstance(vol, RoiMask):
        vol = vol.indicator()
    io.export_slice(vol, args.axis, args.index, args.window, args.out)


def cmd_pipeline(args):
    reports = run_pipeline(_base_config(args))
    for name, rep in reports.items():
        print(f"{name:11s} rmse={rep.rmse:.4f} ssim={rep.ssim:.4f} "
              f"time={rep.wall_time_seconds:.1f}s")


def cmd_import_raw(args):
    vol = io.import_raw(args.input, args.dims, args.spacing, args.dtype, args.byteorder,
                        args.order, args.offset, args.scale)
    io.write_qvol(vol, args.out)


# -- parser -------------------------------------------------------------------

def _grid_flags(p):
    p.add_argument("--dims", type=int, nargs=3, metavar="N")
    p.add_argument("--spacing", type=float, nargs=3, metavar="H", help="voxel size in mm")


def _acq_flags(p):
    p.add_argument("--B0", type=float, help="field strength in tesla")
    p.add_argument("--echo-times", type=float, nargs="+", metavar="TE", help="seconds")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--gamma", type=float, help="gyromagnetic ratio in Hz/T")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hireqsm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="rasterise a scene into chi, ROI and magnitude")
    p.add_argument("--config")
    p.add_argument("--scene", help="scene JSON (default: built-in scene)")
    _grid_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="total field, noisy GRE echoes and field estimate")
    p.add_argument("--config")
    p.add_argument("--chi", required=True)
    p.add_argument("--magnitude", required=True)
    p.add_argument("--roi", help="normalise the weight map over this mask")
    _acq_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bfr", help="LBV background field removal")
    p.add_argument("--config")
    p.add_argument("--field", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--bfr-tol", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bfr)

    p = sub.add_parser("truefield", help="local field of the ROI susceptibility alone")
    p.add_argument("--chi", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--local-field", help="also report where L(b_l - b_true) lives")
    p.add_argument("--report", help="JSON path for that report (default stdout)")
    p.set_defaults(func=cmd_truefield)

    p = sub.add_parser("recon", help="dipole inversion of a local field")
    p.add_argument("--config", help="take method parameters from a pipeline config")
    p.add_argument("--field", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--hbar", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--sigma-policy", choices=("ones", "roi", "estimated"))
    p.add_argument("--roi")
    p.add_argument("--weight", help="weight map for the 'estimated' sigma policy")
    p.add_argument("--deterministic", action="store_true", help="record zero wall time")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="relative error and SSIM over the ROI")
    p.add_argument("--chi", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--wall-time", type=float, help="default: read from the recon sidecar")
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-slice", help="write one slice as an 8-bit PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--axis", required=True, choices=("x", "y", "z"))
    p.add_argument("--index", required=True, type=int)
    p.add_argument("--window", required=True, type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_slice)

    p = sub.add_parser("pipeline", help="run the full experiment")
    p.add_argument("--config")
    p.add_argument("--scene")
    _grid_flags(p)
    _acq_flags(p)
    p.add_argument("--bfr-tol", type=float)
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.add_argument("--out-dir")
    p.add_argument("--deterministic", action="store_true",
                   help="record zero wall times so repeated runs give identical files")
    p.add_argument("--parallel", action="store_true", help="run methods concurrently")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("import-raw", help="convert headerless samples to QVOL")
    p.add_argument("--input", required=True)
    p.add_argument("--dims", required=True, type=int, nargs=3, metavar="N")
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0), metavar="H")
    p.add_argument("--dtype", default="float32")
    p.add_argument("--byteorder", choices=("little", "big"), default="little")
    p.add_argument("--order", choices=("x-fastest", "z-fastest"), default="x-fastest")
    p.add_argument("--offset", type=int, default=0, help="bytes to skip")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_raw)
    return parser


def _is_numerical(exc: BaseException) -> bool:
    if isinstance(exc, PipelineError) and exc.__cause__ is not None:
        return _is_numerical(exc.__cause__)
    return isinstance(exc, QSMError) and not isinstance(exc, (QvolError, GridMismatch))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except QSMError as exc:
        print(f"hireqsm {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if _is_numerical(exc) else EXIT_USAGE
    except (UsageError, OSError, ValueError, KeyError, IndexError, TypeError) as exc:
        print(f"hireqsm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
