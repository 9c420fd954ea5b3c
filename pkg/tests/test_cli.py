import json

import numpy as np
import pytest

from medialmesh import io
from medialmesh.cli import main
from medialmesh.grid import VoxelGrid


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def torus_mask(tmp_path_factory):
    p = tmp_path_factory.mktemp("phantoms") / "torus.mhd"
    assert main(["phantom", "torus", "--param", "major=6", "--param", "minor=2", "--out", str(p)]) == 0
    return p


def test_phantom_and_udf(tmp_path, capsys):
    m = tmp_path / "s.mhd"
    assert run(capsys, "phantom", "sphere", "--param", "radius=5", "--out", m)[0] == 0
    assert run(capsys, "udf", "--in", m, "--out", tmp_path / "u.mhd")[0] == 0
    u = io.read_mhd(tmp_path / "u.mhd")
    assert u.data.max() == 5


def test_phantom_bad_param(tmp_path, capsys):
    code, _, err = run(capsys, "phantom", "sphere", "--param", "girth=2", "--out", tmp_path / "s.mhd")
    assert code == 1 and "parameter" in err


def test_udf_empty_mask_gives_zeros(tmp_path, capsys):
    io.write_mhd(tmp_path / "z.mhd", VoxelGrid(np.zeros((4, 4, 4), np.uint8)))
    assert run(capsys, "udf", "--in", tmp_path / "z.mhd", "--out", tmp_path / "u.mhd")[0] == 0
    assert not io.read_mhd(tmp_path / "u.mhd").data.any()


def test_udf_corrupted_header(tmp_path, capsys):
    (tmp_path / "bad.mhd").write_text("ObjectType = Image\nDimSize = 4 4\nElementDataFile = x.raw\n")
    code, _, err = run(capsys, "udf", "--in", tmp_path / "bad.mhd", "--out", tmp_path / "u.mhd")
    assert code != 0 and err.startswith("error:")


def test_udf_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "udf", "--in", tmp_path / "nope.mhd", "--out", tmp_path / "u.mhd")
    assert code == 1 and "error" in err


def test_udf_anisotropic(tmp_path, capsys):
    m = np.zeros((6, 6, 4), np.uint8)
    m[1:5, 1:5, 1:3] = 1
    io.write_mhd(tmp_path / "a.mhd", VoxelGrid(m, (1.0, 1.0, 2.0)))
    code, _, err = run(capsys, "udf", "--in", tmp_path / "a.mhd", "--out", tmp_path / "u.mhd")
    assert code == 1 and "anisotropic" in err
    assert run(capsys, "udf", "--in", tmp_path / "a.mhd", "--out", tmp_path / "u.mhd", "--resample")[0] == 0
    assert io.read_mhd(tmp_path / "u.mhd").dims == (6, 6, 7)


def test_module_chain(tmp_path, capsys):
    m = tmp_path / "y.mhd"
    run(capsys, "phantom", "yjunction", "--param", "radius=2", "--param", "branch=8", "--out", m)
    run(capsys, "udf", "--in", m, "--out", tmp_path / "u.mhd")
    assert run(capsys, "mat", "--in", tmp_path / "u.mhd", "--out", tmp_path / "c.json")[0] == 0
    cloud = io.read_json(tmp_path / "c.json")
    assert len(cloud["spheres"]) > 0
    code, out, _ = run(capsys, "mat", "--in", tmp_path / "u.mhd", "--lambda", "1.5")
    pruned = json.loads(out)["spheres"]
    assert code == 0 and all(s[3] > 1.5 for s in pruned) and len(pruned) < len(cloud["spheres"])
    assert run(capsys, "skeleton", "--in", tmp_path / "c.json", "--out", tmp_path / "k.json", "--simplify", "6")[0] == 0
    skel = io.read_json(tmp_path / "k.json")
    assert len(skel["vertices"]) <= 6
    code, out, _ = run(capsys, "interfaces", "--in", tmp_path / "k.json")
    assert code == 0 and all(set(f) == {"center", "normal", "radius"} for f in json.loads(out))
    code, out, _ = run(capsys, "cluster", "--in", tmp_path / "k.json", "--n", "2")
    assert code == 0 and sorted(set(json.loads(out)["labels"])) == [0, 1]
    code, out, _ = run(capsys, "dilate", "--in", tmp_path / "c.json", "--focus", "0,0,0", "--amplitude", "0.5",
                       "--sigma", "3")
    assert code == 0 and len(json.loads(out)["spheres"]) == len(cloud["spheres"])


def test_interfaces_without_edges(tmp_path, capsys):
    io.write_json(tmp_path / "k.json", {"vertices": [[0, 0, 0, 1]], "edges": [], "triangles": []})
    assert run(capsys, "interfaces", "--in", tmp_path / "k.json")[0] == 2


def test_dilate_bad_focus(tmp_path, capsys):
    io.write_json(tmp_path / "c.json", {"spheres": [[0, 0, 0, 1]]})
    code = run(capsys, "dilate", "--in", tmp_path / "c.json", "--focus", "1,2", "--amplitude", "1", "--sigma", "1")[0]
    assert code == 1


def test_losses(tmp_path, capsys):
    m = np.zeros((8, 8, 8), np.uint8)
    m[2:6, 2:6, 2:6] = 1
    io.write_mhd(tmp_path / "m.mhd", VoxelGrid(m))
    main(["udf", "--in", str(tmp_path / "m.mhd"), "--out", str(tmp_path / "u.mhd")])
    capsys.readouterr()
    code, out, _ = run(capsys, "losses", "--pred", tmp_path / "u.mhd", "--gt", tmp_path / "u.mhd")
    terms = json.loads(out)
    assert code == 0 and set(terms) == {"dice", "stochastic", "laplacian", "mat", "total"}
    # a perfect prediction sits at the Gaussian peak of the stochastic term
    assert terms["stochastic"] == pytest.approx(-1 / np.sqrt(2 * np.pi)) and terms["laplacian"] == 0.0
    code, out, _ = run(capsys, "losses", "--pred", tmp_path / "u.mhd", "--gt", tmp_path / "u.mhd",
                       "--weights", "0,0,1,0")
    assert json.loads(out)["total"] == 0.0
    io.write_mhd(tmp_path / "o.mhd", VoxelGrid(np.zeros((8, 8, 9))))
    assert run(capsys, "losses", "--pred", tmp_path / "o.mhd", "--gt", tmp_path / "u.mhd")[0] == 2


def test_pipeline_outputs(tmp_path, capsys, torus_mask):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "pipeline", "--in", torus_mask, "--out", out)
    assert code == 0 and "watertight=True" in stdout
    for name in ("udf.mhd", "udf.raw", "cloud.json", "skel.json", "interfaces.json", "mesh.ply",
                 "surface_cloud.ply", "report.json", "summary.csv", "udf_slice.png", "skeleton.png",
                 "refine_residual.png", "overlap.png"):
        assert (out / name).is_file(), name
    report = io.read_json(out / "report.json")
    assert report["schema"] == "medialmesh.report/1"
    assert report["metrics"]["genus"] == 1 and report["metrics"]["watertight"]
    assert report["input"]["sha256"] == io.file_sha256(torus_mask)
    assert report["validation_failures"] == []
    assert set(report["figures"]) == {"udf_slice.png", "skeleton.png", "refine_residual.png", "overlap.png"}
    assert (out / "summary.csv").read_text().startswith("metric,value")
    _, _, comments = io.read_ply(out / "mesh.ply")
    assert comments[0].startswith("provenance ")


def test_config_precedence(tmp_path, capsys, torus_mask):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("mesh.resolution = 0.25\nrefine.omega = 1e-4\nreport.figures = false\n")
    out = tmp_path / "run"
    assert run(capsys, "pipeline", "--in", torus_mask, "--out", out, "--config", cfg, "--mesh.resolution", "1.0")[0] == 0
    report = io.read_json(out / "report.json")
    assert report["config"]["mesh.resolution"] == 1.0 and report["config"]["refine.omega"] == 1e-4
    assert "figures" not in report and not (out / "overlap.png").exists()


def test_bad_config_exit_code(tmp_path, capsys, torus_mask):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("refine.omega = -1\n")
    code, _, err = run(capsys, "roundtrip", "--in", torus_mask, "--config", cfg)
    assert code == 1 and "error" in err


def test_roundtrip_is_deterministic(tmp_path, capsys, torus_mask):
    for name in ("a.json", "b.json"):
        assert run(capsys, "roundtrip", "--in", torus_mask, "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    m = io.read_json(tmp_path / "a.json")
    assert m["schema"] == "medialmesh.roundtrip/1" and m["genus"] == 1


def test_stage_error_is_tagged(tmp_path, capsys):
    io.write_mhd(tmp_path / "z.mhd", VoxelGrid(np.zeros((5, 5, 5), np.uint8)))
    code, _, err = run(capsys, "roundtrip", "--in", tmp_path / "z.mhd")
    assert code == 1 and "[mat]" in err


def test_validation_failure_exit_code(tmp_path, capsys, torus_mask):
    # a single refinement step cannot converge the cloud
    code, _, err = run(capsys, "pipeline", "--in", torus_mask, "--out", tmp_path / "r", "--refine.max_iters", "1",
                       "--report.figures", "false")
    assert code == 2 and "validation:" in err
