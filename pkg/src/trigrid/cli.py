"""Command-line pipeline: one binary, subcommand per stage.

Subcommands: gen-synthetic, delinify, fit, render, extract-mesh, retexture,
evaluate, run (full pipeline), selftest. Config precedence is flags >
--config file > defaults; every artifact-producing command writes its
resolved configuration next to the outputs. All stages are deterministic
given the seed, so rerunning a command reproduces its artifacts
byte-for-byte.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cameras import Camera, orbit_distance, ortho_camera
from .config import (PipelineConfig, config_to_dict, load_config, write_resolved_config)
from .delinify import delinify_image
from .field import load_checkpoint, save_checkpoint
from .fitting import FIT_VIEW_NAMES, LossWeights, fit
from .formats import atomic_write_bytes, read_png, write_obj, write_pfm, write_png
from .meshops import (EvalConfig, evaluate_renders, marching_cubes, render_eval_views)
from .render import render_view
from .retexture import retexture_render
from .scene import SceneError, View, load_scene, save_scene
from .synthetic import gen_synthetic, preset_spec

PRESETS = ("sphere", "twotone-sphere", "blobby")


def _apply_threads(threads: int):
    if threads <= 0:
        return
    try:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass


def parse_camera(text: str, size: int) -> Camera:
    """'front|right|back|left' -> ortho view; 'az,el[,fov]' -> orbit persp."""
    if text in ("front", "right", "back", "left"):
        return ortho_camera(text, size=size)
    parts = text.split(",")
    if len(parts) not in (2, 3):
        raise ValueError(
            f"camera must be a view name or 'azimuth,elevation[,fov]', got {text!r}")
    az, el = float(parts[0]), float(parts[1])
    fov = float(parts[2]) if len(parts) == 3 else 30.0
    return Camera(kind="persp", azimuth_deg=az, elevation_deg=el, size=size,
                  fov_deg=fov, distance=orbit_distance(fov))


def _load_landmarks(path):
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    groups = data.get("groups")
    if not isinstance(groups, dict):
        raise ValueError(f"landmarks file {path!r} must contain a 'groups' mapping")
    return groups


def _write_json(path, payload: dict):
    body = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, body.encode("utf-8"))


def cmd_gen_synthetic(args, cfg: PipelineConfig) -> int:
    spec = preset_spec(args.preset, resolution=args.resolution,
                       orbit_views=args.orbit_views, holdout=not args.no_holdout)
    bundle = gen_synthetic(spec, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_scene(bundle, args.out)
    write_resolved_config(args.out, cfg, extra={"command": {
        "name": "gen-synthetic", "preset": args.preset, "resolution": args.resolution,
        "seed": args.seed, "orbit_views": args.orbit_views,
        "holdout": not args.no_holdout}})
    print(f"wrote scene with {len(bundle.views)} views to {args.out}")
    return 0


def cmd_delinify(args, cfg: PipelineConfig) -> int:
    img = read_png(args.infile)
    landmarks = _load_landmarks(args.landmarks)
    d = cfg.delinify
    sigma = args.sigma if args.sigma is not None else d.sigma
    k = args.k if args.k is not None else d.k
    tau = args.tau if args.tau is not None else d.tau
    result, mask = delinify_image(img, landmarks, sigma=sigma, k=k, tau=tau,
                                  dilate_px=d.dilate_px, radius=d.radius)
    write_png(args.out, result.astype(np.float32))
    if args.out_mask:
        write_png(args.out_mask, mask.astype(np.float32))
    write_resolved_config(args.out, cfg, extra={"command": {
        "name": "delinify", "in": args.infile, "sigma": sigma, "k": k, "tau": tau,
        "dilate_px": d.dilate_px, "radius": d.radius,
        "n_mask_px": int(mask.sum())}})
    print(f"delinified {args.infile}: {int(mask.sum())} line px removed -> {args.out}")
    return 0


def cmd_fit(args, cfg: PipelineConfig) -> int:
    bundle = load_scene(args.scene)
    fit_cfg = cfg.fit
    if args.iters is not None:
        fit_cfg = replace(fit_cfg, iterations=args.iters)
    if args.seed is not None:
        fit_cfg = replace(fit_cfg, seed=args.seed)
    if args.weights:
        parts = [float(x) for x in args.weights.split(",")]
        if len(parts) != 4:
            raise ValueError(f"--weights needs wRgb,wSil,wDepth,wReg, got {args.weights!r}")
        fit_cfg = replace(fit_cfg, weights=LossWeights(*parts))
    tg, dec, report = fit(bundle, fit_cfg, cfg.field, log_every=args.log_every)
    save_checkpoint(args.out, tg, dec)
    if args.report:
        _write_json(args.report, report.to_json())
    write_resolved_config(args.out, replace(cfg, fit=fit_cfg), extra={"command": {
        "name": "fit", "scene": args.scene,
        "wall_time_s": report.wall_time_s,
        "final_psnr": {k: float(v) for k, v in report.final_psnr.items()}}})
    print(f"fit {fit_cfg.iterations} iters in {report.wall_time_s:.1f}s; "
          "final per-view PSNR " +
          " ".join(f"{k}={v:.2f}" for k, v in report.final_psnr.items()))
    return 0


def cmd_render(args, cfg: PipelineConfig) -> int:
    tg, dec = load_checkpoint(args.checkpoint)
    size = args.size if args.size is not None else cfg.render.size
    samples = args.samples if args.samples is not None else cfg.render.n_samples
    mode = args.mode if args.mode is not None else cfg.render.mode
    cam = parse_camera(args.camera, size)
    buf = render_view(tg, dec, cam, n_samples=samples, mode=mode)
    if args.out_rgb:
        write_png(args.out_rgb, buf.rgb.astype(np.float32))
    if args.out_depth:
        write_pfm(args.out_depth, buf.depth.astype(np.float32))
    target = args.out_rgb or args.out_depth
    if target:
        write_resolved_config(target, cfg, extra={"command": {
            "name": "render", "checkpoint": args.checkpoint, "camera": args.camera,
            "size": size, "samples": samples, "mode": mode}})
    print(f"rendered {args.camera} at {size}px ({samples} samples, {mode})")
    return 0


def cmd_extract_mesh(args, cfg: PipelineConfig) -> int:
    tg, dec = load_checkpoint(args.checkpoint)
    grid = args.grid if args.grid is not None else cfg.mesh.grid
    iso = args.iso if args.iso is not None else cfg.mesh.iso
    mesh = marching_cubes(tg, dec, grid_n=grid, iso_sigma=iso)
    write_obj(args.out, mesh.vertices, mesh.faces)
    write_resolved_config(args.out, cfg, extra={"command": {
        "name": "extract-mesh", "checkpoint": args.checkpoint, "grid": grid, "iso": iso,
        "n_vertices": int(len(mesh.vertices)), "n_faces": int(len(mesh.faces))}})
    print(f"extracted mesh: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")
    return 0


def cmd_retexture(args, cfg: PipelineConfig) -> int:
    tg, dec = load_checkpoint(args.checkpoint)
    front = read_png(args.front)
    size = args.size if args.size is not None else cfg.render.size
    cam = parse_camera(args.camera, size)
    r = cfg.retexture
    vthresh = args.vthresh if args.vthresh is not None else r.v_thresh
    jitter = args.jitter if args.jitter is not None else r.n_jitter
    buf, info = retexture_render((tg, dec), front, cam, v_thresh=vthresh,
                                 n_jitter=jitter, jitter_radius=r.jitter_radius,
                                 n_samples=cfg.render.n_samples, seed=cfg.fit.seed)
    write_png(args.out, buf.rgb.astype(np.float32))
    write_resolved_config(args.out, cfg, extra={"command": {
        "name": "retexture", "checkpoint": args.checkpoint, "front": args.front,
        "camera": args.camera, "vthresh": vthresh, "jitter": jitter,
        "n_retextured_px": int(info["retextured"].sum())}})
    print(f"retextured {int(info['retextured'].sum())} px of {args.camera} -> {args.out}")
    return 0


def _load_prerendered(pred_dir: Path, cfg_eval: EvalConfig):
    """Mesh + renders emitted by `run`: mesh.obj and renders/<view>_rgb.png."""
    from .formats import read_obj
    from .scene import TriMesh

    mesh_path = pred_dir / "mesh.obj"
    if not mesh_path.exists():
        raise ValueError(f"prediction dir lacks mesh.obj: {pred_dir}")
    v, f = read_obj(mesh_path)
    mesh = TriMesh(v, f)
    renders = {}
    rdir = pred_dir / "renders" if (pred_dir / "renders").is_dir() else pred_dir
    names = ["front", "back"] + [f"orbit_{k:02d}" for k in range(cfg_eval.orbit_cameras)]
    for name in names:
        p = rdir / f"{name}_rgb.png"
        if not p.exists():
            raise ValueError(f"prediction dir lacks render {p.name}: looked in {rdir}")
        renders[name] = read_png(p)[..., :3]
    return renders, mesh


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    bundle = load_scene(args.gt)
    cfg_eval = cfg.evaluate
    seed = args.seed if args.seed is not None else 0
    pred = Path(args.pred)
    if pred.is_dir():
        renders, mesh = _load_prerendered(pred, cfg_eval)
    else:
        tg, dec = load_checkpoint(pred)
        renders = render_eval_views(tg, dec, bundle.resolution, cfg_eval)
        mesh = marching_cubes(tg, dec, cfg_eval.mc_grid, cfg_eval.iso_sigma)
    report = evaluate_renders(renders, mesh, bundle, roi=bundle.roi, seed=seed,
                              cfg=cfg_eval)
    _write_json(args.out, report)
    write_resolved_config(args.out, cfg, extra={
        "command": {"name": "evaluate", "pred": str(args.pred), "gt": args.gt,
                    "seed": seed},
        "protocol": cfg_eval.resolved(seed)})
    print("  ".join(f"{k}={v:.4g}" for k, v in sorted(report.items())))
    return 0


def cmd_run(args, cfg: PipelineConfig) -> int:
    resolved = {
        "command": {"name": "run", "scene": args.scene, "out": args.out,
                    "seed": cfg.fit.seed},
        "protocol": cfg.evaluate.resolved(cfg.fit.seed),
    }
    if args.dry_run:
        print(json.dumps({**config_to_dict(cfg), **resolved}, indent=2, sort_keys=True))
        return 0

    out = Path(args.out)
    t0 = time.time()
    current = {"stage": "setup"}

    def stage(name):
        current["stage"] = name
        print(f"[{time.time() - t0:7.1f}s] {name}", flush=True)

    try:
        stage("load scene")
        bundle = load_scene(args.scene)
        out.mkdir(parents=True, exist_ok=True)
        (out / "renders").mkdir(exist_ok=True)
        (out / "retextured").mkdir(exist_ok=True)

        stage("delinify front view")
        front = bundle.view("front")
        landmarks = _load_landmarks(args.landmarks)
        d = cfg.delinify
        delin, mask = delinify_image(front.rgb, landmarks, sigma=d.sigma, k=d.k,
                                     tau=d.tau, dilate_px=d.dilate_px, radius=d.radius)
        delin = delin.astype(np.float32)
        write_png(out / "delinified_front.png", delin)
        write_png(out / "line_mask.png", mask.astype(np.float32))

        stage("fit field")
        views = [View(v.name, v.camera, delin, v.depth, v.silhouette)
                 if v.name == "front" else v for v in bundle.views]
        fit_bundle = replace(bundle, views=views)
        tg, dec, report = fit(fit_bundle, cfg.fit, cfg.field, log_every=args.log_every)
        save_checkpoint(out / "field.ckpt", tg, dec)
        _write_json(out / "fit_report.json", report.to_json())

        stage("render ortho + orbit views")
        renders = render_eval_views(tg, dec, bundle.resolution, cfg.evaluate)
        for name in ("right", "left"):
            cam = ortho_camera(name, size=bundle.resolution)
            renders[name] = render_view(tg, dec, cam,
                                        n_samples=cfg.evaluate.n_render_samples).rgb
        for name, rgb in renders.items():
            write_png(out / "renders" / f"{name}_rgb.png", rgb.astype(np.float32))

        stage("extract mesh")
        mesh = marching_cubes(tg, dec, cfg.mesh.grid, cfg.mesh.iso)
        write_obj(out / "mesh.obj", mesh.vertices, mesh.faces)

        stage("retexture from delinified front")
        from .cameras import make_orbit_cameras

        retex_cams = {n: ortho_camera(n, size=bundle.resolution) for n in FIT_VIEW_NAMES}
        orbit = make_orbit_cameras(cfg.evaluate.orbit_cameras,
                                   elevation_deg=cfg.evaluate.orbit_elevation_deg,
                                   fov_deg=cfg.evaluate.orbit_fov_deg,
                                   size=bundle.resolution)
        for k, cam in enumerate(orbit):
            retex_cams[f"orbit_{k:02d}"] = cam
        for name, cam in retex_cams.items():
            buf, _ = retexture_render((tg, dec), delin, cam,
                                      v_thresh=cfg.retexture.v_thresh,
                                      n_jitter=cfg.retexture.n_jitter,
                                      jitter_radius=cfg.retexture.jitter_radius,
                                      n_samples=cfg.evaluate.n_render_samples,
                                      seed=cfg.fit.seed)
            write_png(out / "retextured" / f"{name}_rgb.png", buf.rgb.astype(np.float32))

        stage("evaluate")
        # score the field's own renders; retextured images are artifacts only
        eval_renders = {n: renders[n] for n in renders
                        if n in ("front", "back") or n.startswith("orbit_")}
        rep = evaluate_renders(eval_renders, mesh, bundle, roi=bundle.roi,
                               seed=cfg.fit.seed, cfg=cfg.evaluate)
        _write_json(out / "report.json", rep)
        write_resolved_config(out, cfg, extra=resolved)
        stage("done")
        print("  ".join(f"{k}={v:.4g}" for k, v in sorted(rep.items())))
        return 0
    except (ValueError, SceneError, OSError, RuntimeError) as e:
        raise RuntimeError(f"stage '{current['stage']}' failed: {e}") from e


def _selftest_probes():
    """(name, callable) pairs; each raises on failure. Kept under 30 s."""

    def gradient_probe():
        from .cameras import pixel_grid_rays
        from .field import init_field
        from .fitting import RayBatch, backward, compute_losses
        from .render import sample_ts_block

        rng = np.random.default_rng(11)
        tg, dec = init_field(8, 2, 4, seed=3, hidden=(8,), dtype=np.float64)
        tg.planes[:] = rng.normal(0, 0.3, tg.planes.shape)
        dec.biases[-1][0] = 0.5
        cam = ortho_camera("front", size=2)
        o, dirs, tn, tf = pixel_grid_rays(cam)
        ts = sample_ts_block(tn, tf, 4, "midpoint", 0, 0)
        n = len(o)
        batch = RayBatch(o, dirs, tn, tf, ts, rng.uniform(0.1, 0.9, (n, 3)),
                         rng.uniform(0.1, 0.9, n), rng.uniform(0.2, 0.8, n))
        w = LossWeights()
        _, _, grads = backward(tg, dec, batch, w)
        flat, gflat = tg.planes.ravel(), grads.planes.ravel()
        h = 1e-3
        idx = rng.choice(flat.size, size=24, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp, _ = compute_losses(tg, dec, batch, w)
            flat[i] = old - h
            lm, _ = compute_losses(tg, dec, batch, w)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8)
            if rel >= 1e-3:
                raise AssertionError(f"plane grad {i}: analytic {gflat[i]:.3e} vs fd "
                                     f"{fd:.3e} (rel {rel:.2e})")

    def chamfer_oracle():
        from .meshops import chamfer_f1, chamfer_f1_brute

        rng = np.random.default_rng(5)
        a = rng.uniform(-0.5, 0.5, (50, 3))
        b = rng.uniform(-0.5, 0.5, (50, 3))
        fast, brute = chamfer_f1(a, b), chamfer_f1_brute(a, b)
        if fast != brute:
            raise AssertionError(f"accelerated {fast} != brute {brute}")

    def dog_constancy():
        from .delinify import dog_response

        img = np.full((32, 32, 3), 0.42)
        resp = dog_response(img)
        if np.abs(resp).max() > 1e-12:
            raise AssertionError(f"uniform image response {np.abs(resp).max():.2e} != 0")

    def quadrature_slab():
        from .render import render_rays

        sig, depth = 7.3, 0.42

        def slab(pts):
            ins = np.abs(pts[:, 2]) < depth / 2
            return np.where(ins, sig, 0.0), np.full((len(pts), 3), 0.5)

        o = np.array([[0.0, 0.0, -0.5]])
        dvec = np.array([[0.0, 0.0, 1.0]])
        _, alpha, _ = render_rays(slab, o, dvec, np.zeros(1), np.ones(1), n_samples=256)
        want = 1.0 - np.exp(-sig * depth)
        if abs(alpha[0] - want) > 1e-3:
            raise AssertionError(f"slab alpha {alpha[0]:.6f} vs {want:.6f}")

    def checkpoint_roundtrip():
        import tempfile

        from .field import init_field, load_checkpoint, save_checkpoint

        tg, dec = init_field(8, 2, 4, seed=1)
        with tempfile.TemporaryDirectory() as td:
            p = os.path.join(td, "f.ckpt")
            save_checkpoint(p, tg, dec)
            tg2, dec2 = load_checkpoint(p)
            if not np.array_equal(tg.planes, tg2.planes):
                raise AssertionError("planes changed through round trip")
            blob = bytearray(open(p, "rb").read())
            blob[0] ^= 0xFF
            bad = os.path.join(td, "bad.ckpt")
            open(bad, "wb").write(bytes(blob))
            try:
                load_checkpoint(bad)
            except ValueError as e:
                if "bad magic MLTP1" not in str(e):
                    raise AssertionError(f"wrong magic diagnostic: {e}")
            else:
                raise AssertionError("corrupted magic accepted")

    return [("gradient-probe", gradient_probe), ("chamfer-oracle", chamfer_oracle),
            ("dog-constancy", dog_constancy), ("quadrature-slab", quadrature_slab),
            ("checkpoint-roundtrip", checkpoint_roundtrip)]


def cmd_selftest(args, cfg: PipelineConfig) -> int:
    failed = []
    for name, probe in _selftest_probes():
        t0 = time.time()
        try:
            probe()
        except Exception as e:  # report every probe before deciding exit code
            failed.append(name)
            print(f"FAIL {name} ({time.time() - t0:.2f}s): {e}")
        else:
            print(f"ok   {name} ({time.time() - t0:.2f}s)")
    if failed:
        print(f"selftest failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print("selftest passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trigrid",
                                 description="per-scene tri-grid radiance field toolkit")
    ap.add_argument("--config", help="pipeline config JSON; flags override it")
    ap.add_argument("--threads", type=int,
                    default=int(os.environ.get("TRIPLANE_THREADS", "0")),
                    help="worker threads for jit kernels (0 = leave default)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write an analytic test scene")
    p.add_argument("--preset", choices=PRESETS, default="twotone-sphere")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--orbit-views", type=int, default=12)
    p.add_argument("--no-holdout", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("delinify", help="remove drawn contour lines from an image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--landmarks", help='JSON {"groups": {"left_eye": [[x,y],...]}}')
    p.add_argument("--sigma", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--out-mask")
    p.set_defaults(func=cmd_delinify)

    p = sub.add_parser("fit", help="optimize a field against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--weights", help="wRgb,wSil,wDepth,wReg")
    p.add_argument("--report")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--camera", default="front")
    p.add_argument("--size", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--mode", choices=("midpoint", "stratified"))
    p.add_argument("--out-rgb")
    p.add_argument("--out-depth")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("extract-mesh", help="marching-cubes isosurface of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--iso", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_mesh)

    p = sub.add_parser("retexture", help="project the front input onto a render")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--front", required=True)
    p.add_argument("--camera", default="front")
    p.add_argument("--size", type=int)
    p.add_argument("--vthresh", type=float)
    p.add_argument("--jitter", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retexture)

    p = sub.add_parser("evaluate", help="score a prediction against a GT scene")
    p.add_argument("--pred", required=True,
                   help="checkpoint file, or a dir with mesh.obj + renders/")
    p.add_argument("--gt", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline: delinify, fit, render, mesh, "
                                   "retexture, evaluate")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--landmarks")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("selftest", help="fast deterministic invariant probes")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        return args.func(args, cfg)
    except (ValueError, SceneError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
