"""Command-line entry point: ``orthosonar simulate|detect|reconstruct|eval``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .cfar import detect as cfar_detect
from .geometry import SonarExtrinsics, transform_to_world
from .metrics import evaluate
from .pipeline import ConfigError, PipelineConfig, frame_seed, reconstruct_frame_detailed
from .simulator import noise_from_dict, render_pair, scene_from_dict, trajectory_from_dict, with_seed
from .sonar_image import SonarIntrinsics, overlap_mask

logger = logging.getLogger("orthosonar")


def _load_scene_doc(path: str) -> dict:
    doc = sio.read_json(path)
    if not isinstance(doc.get("primitives", []), list):
        raise sio.FormatError(f"{path}: field 'primitives' must be a list")
    return doc


def _scene(path: str):
    doc = _load_scene_doc(path)
    try:
        return scene_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise sio.FormatError(f"{path}: field 'primitives': {exc}") from exc


def _section(doc: dict, path: str, key: str, parse):
    try:
        return parse(doc.get(key))
    except (KeyError, TypeError, ValueError) as exc:
        raise sio.FormatError(f"{path}: field '{key}': {exc}") from exc


def cmd_simulate(args: argparse.Namespace) -> int:
    doc = _load_scene_doc(args.scene)
    scene = _scene(args.scene)
    sonar = doc.get("sonar", {}) or {}
    try:
        intr_h = SonarIntrinsics.from_dict(sonar.get("horizontal", {}))
        intr_v = SonarIntrinsics.from_dict(sonar.get("vertical", sonar.get("horizontal", {})))
        extr = SonarExtrinsics.from_dict(sonar["extrinsics"]) if "extrinsics" in sonar else SonarExtrinsics()
    except (KeyError, TypeError, ValueError) as exc:
        raise sio.FormatError(f"{args.scene}: field 'sonar': {exc}") from exc
    noise = _section(doc, args.scene, "noise", noise_from_dict)
    if args.seed is not None:
        noise = with_seed(noise, args.seed)
    poses = _section(doc, args.scene, "trajectory", trajectory_from_dict)
    render = doc.get("render", {}) or {}
    rays = int(render.get("rays_per_beam", 128))
    ghost = bool(render.get("ghost_echo", False))

    out = Path(args.out)
    frames = []
    for k, pose in enumerate(poses):
        pair = render_pair(scene, intr_h, intr_v, extr, pose, noise, rays, ghost, frame_index=k)
        h_name, v_name = f"frame_{k:03d}_h.osi", f"frame_{k:03d}_v.osi"
        sio.write_osi(out / h_name, pair.horizontal)
        sio.write_osi(out / v_name, pair.vertical)
        frames.append({"horizontal": h_name, "vertical": v_name, "pose": pose.to_dict()})
    manifest = {"frames": frames, "config": {"extrinsics": extr.to_dict()}}
    sio.write_json(out / "manifest.json", manifest)
    print(f"wrote {len(frames)} frame pairs and {out / 'manifest.json'}")
    return 0


def _config(
    args: argparse.Namespace, manifest_config: dict | None = None, manifest_path: str | None = None
) -> PipelineConfig:
    """Defaults, then manifest config, then ``--config``, then explicit flags."""
    try:
        cfg = PipelineConfig().merged(manifest_config)
    except ConfigError as exc:
        raise ConfigError(f"{manifest_path}: {exc}") from exc
    if args.config:
        try:
            cfg = cfg.merged(sio.read_json(args.config))
        except ConfigError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    flags: dict = {}
    if getattr(args, "mode", None):
        flags["mode"] = args.mode
    if getattr(args, "clustering", None):
        flags["clustering_enabled"] = args.clustering
    if getattr(args, "threshold", None) is not None:
        flags["threshold"] = args.threshold
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        flags["workers"] = args.workers
    cfar = {}
    if getattr(args, "pfa", None) is not None:
        cfar["p_fa"] = args.pfa
    if getattr(args, "train", None) is not None:
        cfar["train_cells"] = args.train
    if getattr(args, "guard", None) is not None:
        cfar["guard_cells"] = args.guard
    if cfar:
        flags["cfar"] = cfar
    return cfg.merged(flags)


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _config(args)
    image = sio.read_osi(args.image)
    mask = None
    if args.companion:
        mask = overlap_mask(image.intrinsics, sio.read_osi(args.companion).intrinsics)
    elif args.companion_aperture is not None:
        half = 0.5 * math.radians(args.companion_aperture)
        mask = np.abs(image.intrinsics.beam_angles()) <= half + 1e-12
    dets = cfar_detect(image, cfg.cfar, mask)
    sio.atomic_write(args.out, sio.detections_csv(dets))
    print(f"{len(dets)} detections -> {args.out}")
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    frames, manifest_cfg = sio.load_manifest(args.manifest)
    cfg = _config(args, manifest_cfg, args.manifest)
    clouds, tables = [], []
    for k, frame in enumerate(frames):
        res = reconstruct_frame_detailed(frame, cfg, seed=frame_seed(cfg.seed, k))
        clouds.append(transform_to_world(res.points, frame.pose))
        if args.matches:
            table = sio.matches_csv(res.matches, frame=k)
            tables.append(table if k == 0 else table.split("\n", 1)[1])
    cloud = np.concatenate(clouds) if clouds else np.zeros((0, 3))
    sio.write_ply(args.out, cloud)
    if args.matches:
        sio.atomic_write(args.matches, "".join(tables))
    print(f"{len(cloud)} points from {len(frames)} frames -> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cloud = sio.read_ply(args.cloud)
    scene = _scene(args.scene)
    report = evaluate(cloud, scene, inlier_cap=args.inlier_cap)
    print(report.summary())
    if args.json:
        sio.write_json(args.json, report.to_dict())
    else:
        print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orthosonar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scene's trajectory to OSI image pairs")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    def cfar_flags(q: argparse.ArgumentParser) -> None:
        q.add_argument("--pfa", type=float)
        q.add_argument("--train", type=int)
        q.add_argument("--guard", type=int)
        q.add_argument("--config")

    p = sub.add_parser("detect", help="SOCA-CFAR detections of one OSI image as CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--companion", help="companion OSI image; gates beams to its vertical aperture")
    p.add_argument("--companion-aperture", type=float, help="companion vertical aperture in degrees")
    cfar_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("reconstruct", help="reconstruct a manifest of frame pairs to PLY")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--matches", help="optional matches CSV")
    p.add_argument("--mode", choices=["brute", "fast"])
    p.add_argument("--clustering", choices=["on", "off"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    cfar_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="MAE/RMSE of a PLY cloud against a scene")
    p.add_argument("--cloud", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--inlier-cap", type=float, default=0.05)
    p.add_argument("--json", help="write the report as JSON here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (sio.FormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
