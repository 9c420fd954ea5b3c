"""End-to-end mask -> UDF -> medial cloud -> skeleton -> convolution surface -> mesh."""

from __future__ import annotations

import csv
from pathlib import Path
import time
import warnings

import numpy as np

from . import grid as G
from . import io
from . import mat as M
from . import mesher as Me
from . import skeleton as S
from .config import PipelineConfig
from .convsurf import ConvolutionField, DegenerateTriangleWarning, fit_complex

REPORT_SCHEMA = "medialmesh.report/1"
METRICS_SCHEMA = "medialmesh.roundtrip/1"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def udf_from_mask(mask: G.VoxelGrid) -> G.VoxelGrid:
    """Quantized UDF restricted to the mask, regularized to the descent invariant."""
    mask = G.as_mask(mask)
    if not np.any(mask.data):
        return mask.like(np.zeros(mask.dims, dtype=np.int32))
    return G.regularize_udf(G.mask_udf(G.compute_udf(mask), mask))


class _Clock:
    def __init__(self):
        self.timings = {}

    def stage(self, name):
        clock = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                clock.timings[name] = round(time.perf_counter() - self.t0, 4)
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, f"{type(exc).__name__}: {exc}") from exc

        return _Ctx()


def reconstruct(mask: G.VoxelGrid, cfg: PipelineConfig = None) -> dict:
    """Run every stage in memory. Returns a dict of intermediate products
    (udf, cloud, complex, raw_complex, field, mesh, cloud_refined, ...) plus
    ``timings`` in seconds."""
    cfg = cfg or PipelineConfig()
    clock = _Clock()
    out = {"mask": mask}
    with clock.stage("udf"):
        if not mask.is_isotropic():
            raise StageError("udf", f"anisotropic spacing {mask.spacing}; resample to isotropic first")
        out["udf"] = udf = udf_from_mask(mask)
    with clock.stage("mat"):
        out["cloud"] = cloud = M.extract_candidates(udf, cfg.mat())
        if len(cloud) == 0:
            raise StageError("mat", "no medial candidates (empty or plateau-only mask)")
    with clock.stage("skeleton"):
        raw = S.build_alpha_complex(cloud, drop_redundant=cfg["skeleton.drop_redundant"])
        out["raw_complex"] = raw
        target = cfg["skeleton.simplify"]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", S.SimplifyWarning)
            cx = S.simplify(raw, target) if 0 < target < raw.n_vertices else raw
        out["simplify_warning"] = any(issubclass(w.category, S.SimplifyWarning) for w in caught)
    with clock.stage("fit"):
        if cfg["fit.enabled"]:
            cx, out["fit"] = fit_complex(
                cx, G.boundary_face_centers(mask), level=cfg["field.level"],
                quadrature_order=cfg["fit.quadrature_order"], max_evals=cfg["fit.evaluations"],
                center_damping=cfg["fit.center_damping"])
        else:
            out["fit"] = {"evaluations": 0, "rms_log_residual": None, "status": 0}
        cx.validate()
        out["complex"] = cx
    with clock.stage("field"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateTriangleWarning)
            field = ConvolutionField(cx, cfg["field.level"], cfg["field.quadrature_order"], cfg["field.cutoff"])
        out["field"] = field
        res = cfg["mesh.resolution"] or Me.default_resolution(field)
        samples = Me.sample_field(field, Me.primitive_bbox(field, cfg["mesh.inflate"]), res)
    with clock.stage("cloud"):
        out["cloud_refined"] = Me.refine_cloud(Me.extract_cloud(field, samples), field, cfg.refine())
    with clock.stage("mesh"):
        mesh = Me.mesh_from_samples(field, samples, cfg.refine())
        out["mesh"] = mesh
        out["watertight"] = Me.check_watertight(mesh)
    with clock.stage("roundtrip"):
        vox = Me.voxelize(field, mask)
        out["voxelized"] = vox
        out["dice"] = G.dice(vox, mask)
        out["hausdorff"] = G.hausdorff(vox, mask) if np.any(vox.data) else float("inf")
        out["mesh_dice"] = G.dice(Me.voxelize(mesh, mask), mask)
    out["interfaces"] = S.detect_leaves(cx) if len(cx.edges) else []
    out["timings"] = clock.timings
    return out


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


def metrics(res: dict) -> dict:
    """Deterministic summary (no timings) of a :func:`reconstruct` result."""
    cx, raw, mesh = res["complex"], res["raw_complex"], res["mesh"]
    wt = res["watertight"]
    cloud = res["cloud_refined"]
    conv = cloud.converged if cloud.converged is not None else np.zeros(0, dtype=bool)
    b0, b1 = S.betti_numbers(cx)
    return {
        "schema": METRICS_SCHEMA,
        "dice": round(float(res["dice"]), 6),
        "hausdorff_mm": _finite(res["hausdorff"]),
        "mesh_dice": round(float(res["mesh_dice"]), 6),
        "watertight": bool(wt["passed"]),
        "euler": int(wt["euler"]),
        "genus": wt["genus"],
        "components": int(wt["components"]),
        "interfaces": len(res["interfaces"]),
        "skeleton": {"vertices": cx.n_vertices, "edges": int(len(cx.edges)),
                     "triangles": int(len(cx.triangles)), "betti": [b0, b1]},
        "candidates": len(res["cloud"]),
        "alpha_complex": {"vertices": raw.n_vertices, "edges": int(len(raw.edges)),
                          "triangles": int(len(raw.triangles))},
        "mesh": {"vertices": int(len(mesh.vertices)), "faces": int(len(mesh.faces)),
                 "resolution_mm": mesh.info.get("resolution")},
        "refine": {"points": int(len(cloud)), "converged_fraction": float(conv.mean()) if len(conv) else 1.0,
                   "max_iterations": int(cloud.iterations.max()) if len(cloud) else 0},
        "fit": {k: (round(v, 9) if isinstance(v, float) else v) for k, v in res["fit"].items()},
        "simplify_warning": bool(res["simplify_warning"]),
    }


def validation_failures(m: dict) -> list[str]:
    fails = []
    if not m["watertight"]:
        fails.append("mesh is not watertight")
    if m["refine"]["converged_fraction"] < 0.99:
        fails.append(f"only {m['refine']['converged_fraction']:.3f} of cloud points converged")
    return fails


def write_outputs(res: dict, cfg: PipelineConfig, prefix, source_path=None) -> dict:
    """Write udf.mhd, cloud.json, skel.json, mesh.ply, surface_cloud.ply,
    interfaces.json, report.json, summary.csv and figures under ``prefix``
    (a directory). Returns the report dict."""
    out = Path(prefix)
    out.mkdir(parents=True, exist_ok=True)
    prov = {"config": cfg.to_dict()}
    if source_path is not None:
        prov["input_sha256"] = io.file_sha256(source_path)
    io.write_mhd(out / "udf.mhd", res["udf"])
    io.write_json(out / "cloud.json", res["cloud"].to_json())
    io.write_json(out / "skel.json", res["complex"].to_json())
    io.write_json(out / "interfaces.json", [f.to_json() for f in res["interfaces"]])
    mesh, cloud = res["mesh"], res["cloud_refined"]
    io.write_ply_mesh(out / "mesh.ply", mesh.vertices, mesh.faces, prov)
    io.write_ply_cloud(out / "surface_cloud.ply", cloud.points, cloud.normals, prov)
    m = metrics(res)
    report = {
        "schema": REPORT_SCHEMA,
        "input": {"path": str(source_path) if source_path else None, "sha256": prov.get("input_sha256"),
                  "dims": list(res["mask"].dims), "spacing": list(res["mask"].spacing)},
        "config": cfg.to_dict(),
        "metrics": m,
        "watertight_check": res["watertight"],
        "timings_s": res["timings"],
        "validation_failures": validation_failures(m),
    }
    if cfg["report.figures"]:
        from . import plotting

        report["figures"] = [p.name for p in plotting.render_all(res, out)]
    io.write_json(out / "report.json", report)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in ("dice", "hausdorff_mm", "mesh_dice", "watertight", "euler", "genus", "interfaces"):
            w.writerow([key, m[key]])
        w.writerow(["refine_converged_fraction", m["refine"]["converged_fraction"]])
        for stage, secs in res["timings"].items():
            w.writerow([f"time_{stage}_s", secs])
    return report


def run_pipeline(mask_path, prefix, cfg: PipelineConfig = None) -> dict:
    cfg = cfg or PipelineConfig()
    try:
        mask = io.read_mhd(mask_path)
    except (OSError, io.FormatError) as exc:
        raise StageError("read", str(exc)) from exc
    res = reconstruct(mask, cfg)
    return write_outputs(res, cfg, prefix, mask_path)


def roundtrip(mask: G.VoxelGrid, cfg: PipelineConfig = None) -> dict:
    return metrics(reconstruct(mask, cfg))
