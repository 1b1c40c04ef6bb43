"""End-to-end CLI tests driving main() with argv lists on tiny scenes."""

import json
import shutil

import numpy as np
import pytest

from trigrid.cameras import Camera
from trigrid.cli import main, parse_camera
from trigrid.field import load_checkpoint, save_checkpoint
from trigrid.formats import read_png, write_png
from trigrid.scene import load_scene

TINY_CFG = {
    "field": {"resolution": 16, "layers": 2, "channels": 8, "hidden": [16]},
    "fit": {"iterations": 5, "batch_rays": 128, "n_samples": 16},
    "render": {"size": 24, "n_samples": 16},
    "mesh": {"grid": 24},
    "evaluate": {"mc_grid": 24, "n_render_samples": 16, "n_points": 500},
}


def write_cfg(tmp_path, overrides=None):
    data = json.loads(json.dumps(TINY_CFG))
    for k, v in (overrides or {}).items():
        data[k] = {**data.get(k, {}), **v}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def gen_scene(tmp_path, name="scene", res=24, orbit=0, holdout=True, preset="sphere"):
    out = tmp_path / name
    argv = ["gen-synthetic", "--preset", preset, "--out", str(out),
            "--resolution", str(res), "--orbit-views", str(orbit)]
    if not holdout:
        argv.append("--no-holdout")
    assert main(argv) == 0
    return out


# ---------------------------------------------------------------- camera parsing


def test_parse_camera_views_and_orbit():
    cam = parse_camera("back", 32)
    assert cam.kind == "ortho" and cam.azimuth_deg == 180.0
    cam = parse_camera("30,15", 64)
    assert cam.kind == "persp"
    assert (cam.azimuth_deg, cam.elevation_deg, cam.fov_deg) == (30.0, 15.0, 30.0)
    cam = parse_camera("200,-10,45", 64)
    assert cam.fov_deg == 45.0
    with pytest.raises(ValueError, match="azimuth,elevation"):
        parse_camera("1,2,3,4", 64)


# ---------------------------------------------------------------- gen-synthetic


def test_gen_synthetic_writes_loadable_scene(tmp_path):
    out = gen_scene(tmp_path, orbit=2)
    bundle = load_scene(out)
    names = set(bundle.view_names())
    assert {"front", "right", "back", "left", "orbit_00", "orbit_01"} <= names
    assert any(n.startswith("holdout") for n in names)
    assert (out / "resolved_config.json").exists()
    assert bundle.mesh_gt is not None


def test_gen_synthetic_deterministic(tmp_path):
    a = gen_scene(tmp_path, "a")
    b = gen_scene(tmp_path, "b")
    for p in sorted(a.iterdir()):
        if p.suffix in (".png", ".pfm", ".obj", ".json"):
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_gen_synthetic_bad_preset_exits(tmp_path):
    with pytest.raises(SystemExit):
        main(["gen-synthetic", "--preset", "bogus", "--out", str(tmp_path / "x")])


# ---------------------------------------------------------------- delinify


def test_delinify_command(tmp_path):
    img = np.full((32, 32, 3), 0.8, dtype=np.float32)
    img[:, 10] = 0.05
    src = tmp_path / "in.png"
    write_png(src, img)
    out = tmp_path / "clean.png"
    mask_p = tmp_path / "mask.png"
    rc = main(["delinify", "--in", str(src), "--out", str(out), "--out-mask", str(mask_p)])
    assert rc == 0
    cleaned = read_png(out)
    assert np.abs(cleaned - 0.8).max() < 0.1  # line filled from surroundings
    meta = json.loads((tmp_path / "clean.png.config.json").read_text())
    assert meta["command"]["n_mask_px"] > 0
    mask = read_png(mask_p)
    assert mask.max() == 1.0


def test_delinify_bad_landmarks_file(tmp_path):
    src = tmp_path / "in.png"
    write_png(src, np.zeros((8, 8, 3), dtype=np.float32))
    lm = tmp_path / "lm.json"
    lm.write_text(json.dumps({"nope": 1}))
    rc = main(["delinify", "--in", str(src), "--out", str(tmp_path / "o.png"),
               "--landmarks", str(lm)])
    assert rc == 1


# ---------------------------------------------------------------- fit / render / mesh


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    """Tiny scene fitted for 5 iterations; shared by the downstream commands."""
    tmp_path = tmp_path_factory.mktemp("cli_fit")
    scene = gen_scene(tmp_path, res=24, holdout=False)
    cfg = write_cfg(tmp_path)
    ckpt = tmp_path / "field.ckpt"
    report = tmp_path / "fit_report.json"
    rc = main(["--config", cfg, "fit", "--scene", str(scene), "--out", str(ckpt),
               "--report", str(report)])
    assert rc == 0
    return tmp_path, scene, cfg, ckpt, report


def test_fit_outputs(fitted):
    tmp_path, scene, cfg, ckpt, report = fitted
    tg, dec = load_checkpoint(ckpt)
    assert tg.R == 16 and tg.C == 8
    rep = json.loads(report.read_text())
    assert len(rep["traces"]["total"]) == 5
    assert set(rep["final_psnr"]) == {"front", "right", "back", "left"}
    resolved = json.loads((tmp_path / "field.ckpt.config.json").read_text())
    assert resolved["fit"]["iterations"] == 5


def test_fit_flag_overrides_config(fitted, tmp_path):
    tmp, scene, cfg, _, _ = fitted
    out = tmp_path / "f2.ckpt"
    rc = main(["--config", cfg, "fit", "--scene", str(scene), "--out", str(out),
               "--iters", "2", "--seed", "7"])
    assert rc == 0
    resolved = json.loads((tmp_path / "f2.ckpt.config.json").read_text())
    assert resolved["fit"]["iterations"] == 2
    assert resolved["fit"]["seed"] == 7


def test_fit_deterministic_checkpoints(fitted, tmp_path):
    tmp, scene, cfg, ckpt, _ = fitted
    out = tmp_path / "again.ckpt"
    rc = main(["--config", cfg, "fit", "--scene", str(scene), "--out", str(out)])
    assert rc == 0
    assert out.read_bytes() == ckpt.read_bytes()


def test_fit_bad_weights(fitted, tmp_path):
    tmp, scene, cfg, _, _ = fitted
    rc = main(["--config", cfg, "fit", "--scene", str(scene),
               "--out", str(tmp_path / "w.ckpt"), "--weights", "1,2"])
    assert rc == 1


def test_render_command(fitted, tmp_path):
    tmp, scene, cfg, ckpt, _ = fitted
    rgb_p = tmp_path / "r.png"
    dep_p = tmp_path / "d.pfm"
    rc = main(["--config", cfg, "render", "--checkpoint", str(ckpt),
               "--camera", "45,20", "--out-rgb", str(rgb_p), "--out-depth", str(dep_p)])
    assert rc == 0
    assert read_png(rgb_p).shape == (24, 24, 3)
    assert dep_p.exists()


def test_extract_mesh_command(fitted, tmp_path):
    tmp, scene, cfg, ckpt, _ = fitted
    out = tmp_path / "m.obj"
    rc = main(["--config", cfg, "extract-mesh", "--checkpoint", str(ckpt),
               "--out", str(out)])
    assert rc == 0
    assert out.exists()  # 5-iter field usually has no surface: empty obj is fine


def test_retexture_command(fitted, tmp_path):
    tmp, scene, cfg, ckpt, _ = fitted
    out = tmp_path / "rt.png"
    rc = main(["--config", cfg, "retexture", "--checkpoint", str(ckpt),
               "--front", str(scene / "front_rgb.png"), "--out", str(out)])
    assert rc == 0
    assert read_png(out).shape == (24, 24, 3)


def test_missing_checkpoint_errors(fitted, tmp_path, capsys):
    tmp, scene, cfg, _, _ = fitted
    rc = main(["--config", cfg, "render", "--checkpoint", str(tmp_path / "nope.ckpt"),
               "--out-rgb", str(tmp_path / "r.png")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------- evaluate


def test_evaluate_prerendered_perfect_copy(tmp_path):
    scene = gen_scene(tmp_path, res=16, orbit=12, holdout=False)
    pred = tmp_path / "pred"
    (pred / "renders").mkdir(parents=True)
    shutil.copy(scene / "mesh_gt.obj", pred / "mesh.obj")
    names = ["front", "back"] + [f"orbit_{k:02d}" for k in range(12)]
    for n in names:
        shutil.copy(scene / f"{n}_rgb.png", pred / "renders" / f"{n}_rgb.png")
    cfg = write_cfg(tmp_path)
    out = tmp_path / "report.json"
    rc = main(["--config", cfg, "evaluate", "--pred", str(pred), "--gt", str(scene),
               "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["front_psnr"] == 60.0
    assert rep["back_psnr"] == 60.0
    assert rep["orbit_psnr"] == 60.0
    # 500-point clouds on the same mesh: spacing ~0.04, so f1@5cm dips a hair
    assert rep["f1_at_5cm"] > 95.0
    assert rep["f1_at_10cm"] == 100.0
    assert rep["chamfer"] < 0.01
    resolved = json.loads((tmp_path / "report.json.config.json").read_text())
    assert resolved["protocol"]["f1_thresholds_cm"] == [5.0, 10.0]


def test_evaluate_prerendered_missing_render(tmp_path):
    scene = gen_scene(tmp_path, res=16, orbit=0, holdout=False)
    pred = tmp_path / "pred"
    pred.mkdir()
    shutil.copy(scene / "mesh_gt.obj", pred / "mesh.obj")
    rc = main(["--config", write_cfg(tmp_path), "evaluate", "--pred", str(pred),
               "--gt", str(scene), "--out", str(tmp_path / "r.json")])
    assert rc == 1


def test_evaluate_checkpoint_pred(tmp_path):
    scene = gen_scene(tmp_path, res=16, orbit=0, holdout=False)
    bundle = load_scene(scene)
    # hand-built field: dense ball, so the mesh is non-empty
    from test_meshops import quadratic_field

    tg, dec = quadratic_field(radius=0.25, R=17)
    ckpt = tmp_path / "ball.ckpt"
    save_checkpoint(ckpt, tg, dec)
    out = tmp_path / "report.json"
    rc = main(["--config", write_cfg(tmp_path), "evaluate", "--pred", str(ckpt),
               "--gt", str(scene), "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    # gray ball vs red GT sphere: low psnr but matching geometry
    assert rep["f1_at_10cm"] == 100.0
    assert rep["chamfer"] < 0.01
    assert 0.0 < rep["front_psnr"] < 30.0


# ---------------------------------------------------------------- run


def test_run_dry_run(tmp_path, capsys):
    scene = gen_scene(tmp_path, res=16, holdout=False)
    capsys.readouterr()  # drop gen-synthetic output
    rc = main(["--config", write_cfg(tmp_path), "run", "--scene", str(scene),
               "--out", str(tmp_path / "out"), "--dry-run"])
    assert rc == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["command"]["name"] == "run"
    assert blob["protocol"]["orbit_interval_deg"] == 30.0
    assert not (tmp_path / "out").exists()


def test_run_full_pipeline_tiny(tmp_path):
    scene = gen_scene(tmp_path, res=16, orbit=0, holdout=False, preset="sphere")
    cfg = write_cfg(tmp_path, {"evaluate": {"orbit_cameras": 2}})
    out = tmp_path / "out"
    rc = main(["--config", cfg, "run", "--scene", str(scene), "--out", str(out)])
    assert rc == 0
    for rel in ("delinified_front.png", "line_mask.png", "field.ckpt",
                "fit_report.json", "mesh.obj", "report.json", "resolved_config.json"):
        assert (out / rel).exists(), rel
    for view in ("front", "back", "right", "left", "orbit_00", "orbit_01"):
        assert (out / "renders" / f"{view}_rgb.png").exists(), view
        assert (out / "retextured" / f"{view}_rgb.png").exists(), view
    rep = json.loads(out.read_text() if False else (out / "report.json").read_text())
    assert "front_psnr" in rep and "chamfer" in rep


def test_run_missing_scene(tmp_path, capsys):
    rc = main(["run", "--scene", str(tmp_path / "missing"), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "load scene" in capsys.readouterr().err


# ---------------------------------------------------------------- selftest


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "selftest passed" in out
    assert out.count("ok ") == 5
