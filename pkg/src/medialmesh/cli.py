"""Command-line interface.

Exit status: 0 success, 1 I/O, input or configuration error, 2 validation
failure (non-watertight mesh, refinement not converged, dims mismatch).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from . import grid as G
from . import io
from . import losses as L
from . import mat as M
from . import phantoms
from . import skeleton as S
from .config import SETTINGS, ConfigError, load_config
from .pipeline import StageError, reconstruct, metrics, udf_from_mask, validation_failures, write_outputs

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_IO):
        super().__init__(message)
        self.code = code


def _emit(obj, out=None):
    if out:
        io.write_json(out, obj)
    else:
        json.dump(obj, sys.stdout, indent=1, sort_keys=True, allow_nan=False)
        sys.stdout.write("\n")


def _config(args):
    overrides = {k: v for k, v in vars(args).items() if k in SETTINGS and v is not None}
    return load_config(args.config, overrides)


def _read_mask(path, resample=False) -> G.VoxelGrid:
    grid = io.read_mhd(path)
    if resample and not grid.is_isotropic():
        grid = G.resample_isotropic(grid, float(min(grid.spacing)), order=0)
    return G.as_mask(grid)


# --- commands ---

def cmd_phantom(args):
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        try:
            params[key.strip()] = int(value) if value.strip().lstrip("-").isdigit() else float(value)
        except ValueError:
            raise CliError(f"bad phantom parameter {item!r}") from None
    try:
        mask = phantoms.make(args.name, **params)
    except TypeError as exc:
        raise CliError(f"bad phantom parameter: {exc}") from None
    io.write_mhd(args.out, mask)
    return EXIT_OK


def cmd_udf(args):
    mask = _read_mask(args.inp, args.resample)
    if not mask.is_isotropic():
        raise CliError(f"anisotropic spacing {mask.spacing}; pass --resample")
    io.write_mhd(args.out, udf_from_mask(mask))
    return EXIT_OK


def cmd_mat(args):
    cfg = _config(args)
    udf = io.read_mhd(args.inp)
    if args.lam is not None:
        cfg.set("mat.lambda", args.lam)
        cfg.validate()
    cloud = M.extract_candidates(udf, cfg.mat())
    _emit(cloud.to_json(), args.out)
    return EXIT_OK


def cmd_skeleton(args):
    cfg = _config(args)
    cloud = M.MedialCloud.from_json(io.read_json(args.inp))
    if len(cloud) == 0:
        raise CliError("empty sphere cloud")
    target = args.simplify if args.simplify is not None else 0
    cx = S.build_alpha_complex(cloud, drop_redundant=cfg["skeleton.drop_redundant"])
    if 0 < target < cx.n_vertices:
        cx = S.simplify(cx, target)
    _emit(cx.to_json(), args.out)
    return EXIT_OK


def cmd_interfaces(args):
    cx = S.SkeletonComplex.from_json(io.read_json(args.inp))
    if len(cx.edges) == 0:
        raise CliError("skeleton has no edges", EXIT_INVALID)
    _emit([f.to_json() for f in S.detect_leaves(cx)], args.out)
    return EXIT_OK


def cmd_cluster(args):
    cx = S.SkeletonComplex.from_json(io.read_json(args.inp))
    labels = S.cluster(cx, args.n)
    _emit({"labels": labels.tolist()}, args.out)
    return EXIT_OK


def cmd_dilate(args):
    cloud = M.MedialCloud.from_json(io.read_json(args.inp))
    focus = [float(v) for v in args.focus.split(",")]
    if len(focus) != 3:
        raise CliError("--focus needs x,y,z")
    _emit(M.dilate_radii(cloud, focus, args.amplitude, args.sigma).to_json(), args.out)
    return EXIT_OK


def cmd_losses(args):
    cfg = _config(args)
    if args.weights is not None:
        cfg.set("loss.weights", args.weights)
        cfg.validate()
    pred = io.read_mhd(args.pred)
    gt = io.read_mhd(args.gt)
    if pred.dims != gt.dims:
        raise CliError(f"dims mismatch: {pred.dims} vs {gt.dims}", EXIT_INVALID)
    gt_udf = np.rint(np.asarray(gt.data, dtype=float))
    pred_udf = np.asarray(pred.data, dtype=float)
    pred_seg = io.read_mhd(args.pred_seg).data if args.pred_seg else np.clip(pred_udf, 0.0, 1.0)
    gt_seg = io.read_mhd(args.gt_seg).data if args.gt_seg else (gt_udf > 0)
    total, terms = L.total_loss(pred_seg, pred_udf, gt_seg, gt_udf, cfg.loss())
    _emit({**terms, "total": total}, args.out)
    return EXIT_OK


def _run(args):
    cfg = _config(args)
    mask = _read_mask(args.inp, args.resample)
    return cfg, mask, reconstruct(mask, cfg)


def cmd_pipeline(args):
    cfg, _, res = _run(args)
    report = write_outputs(res, cfg, args.out, args.inp)
    for msg in report["validation_failures"]:
        print(f"validation: {msg}", file=sys.stderr)
    m = report["metrics"]
    print(f"dice={m['dice']:.4f} hausdorff_mm={m['hausdorff_mm']} watertight={m['watertight']} "
          f"euler={m['euler']} interfaces={m['interfaces']} -> {args.out}")
    return EXIT_INVALID if report["validation_failures"] else EXIT_OK


def cmd_roundtrip(args):
    _, _, res = _run(args)
    m = metrics(res)
    _emit(m, args.out)
    return EXIT_INVALID if validation_failures(m) else EXIT_OK


# --- parser ---

def _add_settings(p):
    g = p.add_argument_group("settings (override --config)")
    for key, (_, default, helptext) in SETTINGS.items():
        g.add_argument(f"--{key}", dest=key, default=None, metavar="V", help=f"{helptext} [default {default}]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medialmesh", description="Medial skeletons and convolution-surface meshes "
                                     "from binary voxel volumes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, helptext, inp=True, out=True, settings=False):
        p = sub.add_parser(name, help=helptext, description=helptext)
        if inp:
            p.add_argument("--in", dest="inp", required=True, metavar="PATH")
        if out:
            p.add_argument("--out", dest="out", metavar="PATH", required=out == "required",
                           help="output path (stdout when omitted)" if out != "required" else None)
        p.add_argument("--config", default=None, metavar="FILE", help="key = value settings file")
        if settings:
            _add_settings(p)
        p.set_defaults(func=fn)
        return p

    p = command("phantom", cmd_phantom, "write a synthetic binary mask", inp=False, out="required")
    p.add_argument("name", choices=sorted(phantoms.PHANTOMS))
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator parameter, e.g. radius=6")

    p = command("udf", cmd_udf, "quantized, masked and regularized distance field", out="required")
    p.add_argument("--resample", action="store_true", help="resample anisotropic input to isotropic spacing")

    p = command("mat", cmd_mat, "medial sphere candidates of a UDF", settings=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="alias of --mat.lambda")

    p = command("skeleton", cmd_skeleton, "weighted alpha complex of a sphere cloud", settings=True)
    p.add_argument("--simplify", type=int, default=None, metavar="N", help="collapse to at most N vertices")

    command("interfaces", cmd_interfaces, "inflow/outflow interfaces at skeleton leaves")

    p = command("cluster", cmd_cluster, "split a skeleton into connected parts")
    p.add_argument("--n", type=int, required=True)

    p = command("dilate", cmd_dilate, "Gaussian-modulated radius dilation of a sphere cloud")
    p.add_argument("--focus", required=True, metavar="X,Y,Z")
    p.add_argument("--amplitude", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True, metavar="MM")

    p = command("losses", cmd_losses, "loss terms of a predicted UDF against a ground-truth UDF", inp=False,
                settings=True)
    p.add_argument("--pred", required=True, metavar="PATH", help="predicted (real-valued) UDF")
    p.add_argument("--gt", required=True, metavar="PATH", help="ground-truth UDF")
    p.add_argument("--pred-seg", default=None, metavar="PATH", help="predicted foreground probability")
    p.add_argument("--gt-seg", default=None, metavar="PATH", help="ground-truth mask (default: gt > 0)")
    p.add_argument("--weights", default=None, metavar="A,B,C,D", help="alias of --loss.weights")

    for name, fn, helptext in (
        ("pipeline", cmd_pipeline, "full reconstruction; --out is an output directory"),
        ("roundtrip", cmd_roundtrip, "reconstruct and report overlap metrics against the input mask"),
    ):
        p = command(name, fn, helptext, out="required" if name == "pipeline" else True, settings=True)
        p.add_argument("--resample", action="store_true", help="resample anisotropic input to isotropic spacing")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", S.SimplifyWarning)
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (io.FormatError, ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
