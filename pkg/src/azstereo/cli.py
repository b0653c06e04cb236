"""Command-line pipeline: synth, train, reconstruct, eval, tsc-analyze,
normalize-cameras.

Exit codes: 0 success, 2 input error, 3 numeric failure.  Every command
is deterministic under --seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, formats, geom, synth, tracing, train as train_mod
from .field import CheckpointFormatError, NumericFailureError, load_checkpoint
from .shapes import RoundedBox, Sphere, Torus

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(ValueError):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        import torch

        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (InputError, synth.RigSpecError, synth.DatasetError, synth.RenderError,
            CheckpointFormatError, formats.FileFormatError, geom.DegenerateRigError,
            FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except NumericFailureError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="azstereo",
        description="Surface reconstruction from calibrated multi-view azimuth maps.",
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--threads", type=int, default=None, help="cap worker threads")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config file (train settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--shape", choices=["sphere", "torus", "roundedbox"], default="sphere")
    p.add_argument("--shape-param", action="append", default=[], metavar="KEY=VALUE",
                   help="shape parameter, e.g. radius=0.5 or center=0,0,0")
    p.add_argument("--rig", choices=[k.value for k in synth.RigKind], default="generic-ring")
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--rig-radius", type=float, default=2.0)
    p.add_argument("--elevations", type=str, default="30",
                   help="comma-separated elevations in degrees, cycled over views")
    p.add_argument("--look-at", type=str, default="0,0,0")
    p.add_argument("--resolution", type=str, default="64x64",
                   help="WxH image size (smoke default; full runs used 612x512)")
    p.add_argument("--fit-radius", type=float, default=None,
                   help="ball radius the field of view should cover (default: shape-derived)")
    p.add_argument("--ambiguity", choices=[k.value for k in synth.AmbiguityKind],
                   default="exact")
    p.add_argument("--ambiguity-prob", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="optimize the field on a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True, help="output directory for checkpoints and log")
    for name, typ in [("epochs", int), ("batch-size", int), ("lr", float),
                      ("hidden-width", int), ("scale-ratio", float)]:
        p.add_argument(f"--{name}", type=typ, default=None)
    p.add_argument("--tsc-mode", choices=[m.value for m in train_mod.TscMode], default=None)
    p.add_argument("--intersection-mode",
                   choices=[m.value for m in train_mod.IntersectionMode], default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="extract mesh and normal maps from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", required=True, help="dataset dir providing cameras")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=256, help="marching-cubes grid per axis")
    p.add_argument("--normalization", default=None,
                   help="normalization.json (default: next to the checkpoint)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="score a reconstruction against ground truth")
    p.add_argument("pred_dir", help="reconstruction output dir (or a dataset dir)")
    p.add_argument("gt_dir", help="ground-truth dataset dir")
    p.add_argument("--tau", type=float, default=0.01,
                   help="F-score distance threshold in scene units")
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tsc-analyze", help="tangent-stack rank report for query points")
    p.add_argument("dataset_dir")
    p.add_argument("--points", default=None, help="JSON file with an array of [x,y,z]")
    p.add_argument("--grid", type=int, default=None, help="analyze an NxNxN point grid")
    p.add_argument("--grid-extent", type=float, default=1.0)
    p.add_argument("--visibility", choices=["mask", "depth"], default="mask",
                   help="mask: candidate-correspondence checks only; "
                        "depth: also require agreement with ground-truth depth")
    p.add_argument("--tol-lo", type=float, default=geom.RANK_TOL_LO)
    p.add_argument("--tol-hi", type=float, default=geom.RANK_TOL_HI)
    p.add_argument("--out", default=None, help="write the report as JSON")
    p.set_defaults(func=cmd_tsc_analyze)

    p = sub.add_parser("normalize-cameras", help="center and scale a camera file")
    p.add_argument("cameras_json")
    p.add_argument("--scale-ratio", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_normalize_cameras)
    return parser


def _parse_vec(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _parse_shape(args):
    params = {}
    for item in args.shape_param:
        if "=" not in item:
            raise InputError(f"bad shape parameter {item!r}, expected KEY=VALUE")
        key, value = item.split("=", 1)
        params[key] = _parse_vec(value) if "," in value else float(value)
    try:
        if args.shape == "sphere":
            return Sphere(**params)
        if args.shape == "torus":
            return Torus(**params)
        return RoundedBox(**params)
    except TypeError as err:
        raise InputError(f"bad shape parameters: {err}") from err


def cmd_synth(args) -> int:
    shape = _parse_shape(args)
    try:
        w, h = (int(v) for v in args.resolution.lower().split("x"))
    except ValueError as err:
        raise InputError(f"bad resolution {args.resolution!r}") from err
    spec = synth.RigSpec(
        kind=synth.RigKind(args.rig),
        count=args.views,
        radius=args.rig_radius,
        elevations_deg=tuple(float(e) for e in args.elevations.split(",")),
        look_at=_parse_vec(args.look_at),
    )
    fit = args.fit_radius if args.fit_radius is not None else _default_fit(shape)
    intr = synth.fit_intrinsics(w, h, spec.radius, fit)
    cameras = synth.make_rig(spec, intr)
    mode = synth.AmbiguityMode(synth.AmbiguityKind(args.ambiguity), prob=args.ambiguity_prob,
                               seed=args.seed, noise_sigma=args.noise_sigma)
    views = synth.render_dataset(shape, cameras, mode)
    synth.export_dataset(views, args.out_dir, seed=args.seed, ambiguity=mode, shape=shape)
    print(f"wrote {len(views)} views to {args.out_dir}")
    return EXIT_OK


def _default_fit(shape) -> float:
    if isinstance(shape, Sphere):
        return 1.4 * shape.radius + float(np.linalg.norm(shape.center))
    if isinstance(shape, Torus):
        return 1.4 * (shape.major_radius + shape.minor_radius)
    return 1.4 * float(np.linalg.norm(shape.half_extents) + shape.corner_radius)


def _load_train_config(args) -> train_mod.TrainConfig:
    cfg = train_mod.TrainConfig() if args.config is None else train_mod.TrainConfig.from_json(args.config)
    overrides = {}
    for cli_name, field_name in [
        ("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
        ("hidden_width", "hidden_width"), ("scale_ratio", "scale_ratio"),
    ]:
        value = getattr(args, cli_name, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "tsc_mode", None):
        overrides["tsc_mode"] = train_mod.TscMode(args.tsc_mode)
    if getattr(args, "intersection_mode", None):
        overrides["intersection_mode"] = train_mod.IntersectionMode(args.intersection_mode)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.with_overrides(**overrides)


def cmd_train(args) -> int:
    views, manifest = synth.load_dataset(args.dataset_dir)
    cfg = _load_train_config(args)
    x_o, s, cameras = geom.normalize_cameras([v.camera for v in views], cfg.scale_ratio)
    for view, cam in zip(views, cameras):
        view.camera = cam
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    normalization = {"x_o": [float(v) for v in x_o], "s": s, "s_r": cfg.scale_ratio}
    formats.write_json(out / "normalization.json", normalization)
    formats.write_json(out / "config.json", cfg.to_dict())
    progress = None
    if not args.quiet:
        def progress(entry):
            if entry.iteration % 50 == 0:
                print(
                    f"epoch {entry.epoch:3d} iter {entry.iteration:6d} "
                    f"total {entry.total:.6f} tsc {entry.tsc:.6f} "
                    f"sil {entry.silhouette:.6f} eik {entry.eikonal:.6f}"
                )
    train_mod.train(cfg, views, checkpoint_dir=out, log_path=out / "loss_log.csv",
                    progress=progress)
    print(f"training complete; checkpoints and loss_log.csv in {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    network = load_checkpoint(args.checkpoint)
    views, manifest = synth.load_dataset(args.dataset)
    norm_path = Path(args.normalization) if args.normalization else Path(args.checkpoint).parent / "normalization.json"
    if not norm_path.exists():
        raise InputError(f"no normalization record at {norm_path}")
    norm = formats.read_json(norm_path)
    x_o = np.asarray(norm["x_o"], dtype=np.float64)
    s = float(norm["s"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r = 1.05
    mesh = evaluation.marching_cubes(network, ((-r, -r, -r), (r, r, r)), args.grid)
    mesh_world = evaluation.Mesh(geom.denormalize_points(mesh.vertices, x_o, s), mesh.triangles)
    formats.write_obj(out / "mesh.obj", mesh_world.vertices, mesh_world.triangles)
    records = []
    _, _, cams_norm = geom.normalize_cameras([v.camera for v in views], float(norm["s_r"]))
    for i, cam in enumerate(cams_norm):
        normals, mask = evaluation.render_normal_map(network, cam, t_max=4.0 * float(norm["s_r"]))
        stem = f"view_{i:03d}"
        formats.write_normals(out / f"{stem}.nrm", normals)
        formats.write_mask(out / f"{stem}.msk", mask)
        records.append({"normals": f"{stem}.nrm", "mask": f"{stem}.msk"})
    formats.write_json(
        out / "reconstruction.json",
        {"format": "azstereo-reconstruction", "version": 1, "mesh": "mesh.obj",
         "views": records, "normalization": norm, "checkpoint": str(args.checkpoint)},
    )
    print(f"wrote mesh.obj and {len(records)} normal maps to {out}")
    return EXIT_OK


def _gt_point_set(views):
    points = []
    for view in views:
        origin, dirs = synth.pixel_rays(view.camera)
        depth = view.gt_depth
        valid = np.isfinite(depth)
        if valid.any():
            points.append(origin + depth[valid][:, None] * dirs[valid])
    if not points:
        raise evaluation.MetricError("ground truth has no surface points")
    return np.concatenate(points, axis=0)


def cmd_eval(args) -> int:
    gt_views, _ = synth.load_dataset(args.gt_dir)
    gt_points = _gt_point_set(gt_views)
    pred_dir = Path(args.pred_dir)
    recon_path = pred_dir / "reconstruction.json"
    if recon_path.exists():
        recon = formats.read_json(recon_path)
        mesh_v, mesh_t = formats.read_obj(pred_dir / recon["mesh"])
        mesh = evaluation.Mesh(mesh_v, mesh_t)
        pred_points = evaluation.visible_points(mesh, [v.camera for v in gt_views])
        pred_normal_files = [pred_dir / rec["normals"] for rec in recon["views"]]
        if len(pred_normal_files) != len(gt_views):
            raise InputError("prediction and ground truth view counts differ")
    elif (pred_dir / "manifest.json").exists():
        pred_views, _ = synth.load_dataset(pred_dir)
        if len(pred_views) != len(gt_views):
            raise InputError("prediction and ground truth view counts differ")
        pred_points = _gt_point_set(pred_views)
        pred_normal_files = None
    else:
        raise InputError(f"{pred_dir} is neither a reconstruction nor a dataset")
    per_view_mae = []
    for i, gt_view in enumerate(gt_views):
        if pred_normal_files is None:
            pred_normals = pred_views[i].gt_normals
        else:
            # Normal maps are world-frame directions; normalization only
            # rescales positions, so they compare directly.
            pred_normals = formats.read_normals(pred_normal_files[i])
        if pred_normals.shape != gt_view.gt_normals.shape:
            raise InputError("normal map resolution mismatch")
        per_view_mae.append(evaluation.normal_mae(pred_normals, gt_view.gt_normals))
    cd = evaluation.chamfer(pred_points, gt_points)
    precision, recall, f = evaluation.fscore(pred_points, gt_points, args.tau)
    mae = float(np.mean(per_view_mae))
    metrics = evaluation.Metrics(chamfer=cd, precision=precision, recall=recall,
                                 fscore=f, mae_deg=mae)
    payload = metrics.to_dict()
    payload["per_view_mae_deg"] = per_view_mae
    print(f"chamfer   {cd:.6f}")
    print(f"precision {precision:.4f}  recall {recall:.4f}  fscore {f:.4f}  (tau={args.tau})")
    print(f"mae_deg   {mae:.4f}")
    if args.out:
        formats.write_metrics(args.out, payload)
    return EXIT_OK


def cmd_tsc_analyze(args) -> int:
    views, _ = synth.load_dataset(args.dataset_dir)
    if (args.points is None) == (args.grid is None):
        raise InputError("provide exactly one of --points or --grid")
    if args.points is not None:
        pts = np.asarray(formats.read_json(args.points), dtype=np.float64).reshape(-1, 3)
    else:
        axis = np.linspace(-args.grid_extent, args.grid_extent, args.grid)
        pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    rows = analyze_points(views, pts, use_depth=args.visibility == "depth",
                          tol_lo=args.tol_lo, tol_hi=args.tol_hi)
    header = f"{'x':>8} {'y':>8} {'z':>8} {'views':>5} {'s1':>10} {'s2':>10} {'s3':>10} {'class':>13} {'normal':>26}"
    print(header)
    n_visible = 0
    for row in rows:
        if row["views"] == 0:
            print(f"{row['point'][0]:8.3f} {row['point'][1]:8.3f} {row['point'][2]:8.3f} "
                  f"{0:5d} {'-':>10} {'-':>10} {'-':>10} {'no-views':>13} {'-':>26}")
            continue
        n_visible += 1
        s = row["singular_values"]
        nrm = row["normal"]
        nrm_s = "-" if nrm is None else f"({nrm[0]:+.3f},{nrm[1]:+.3f},{nrm[2]:+.3f})"
        print(f"{row['point'][0]:8.3f} {row['point'][1]:8.3f} {row['point'][2]:8.3f} "
              f"{row['views']:5d} {s[0]:10.3e} {s[1]:10.3e} {s[2]:10.3e} "
              f"{row['class']:>13} {nrm_s:>26}")
    if n_visible == 0:
        print("warning: no query point projects into any view", file=sys.stderr)
    if args.out:
        formats.write_json(args.out, rows)
    return EXIT_OK


def analyze_points(views, pts, use_depth: bool = False, tol_lo=geom.RANK_TOL_LO,
                   tol_hi=geom.RANK_TOL_HI, depth_tol: float = 0.02):
    """Tangent-stack rank report for query points against a dataset.

    Candidate-correspondence semantics: a view contributes when the
    projection lands on a silhouette pixel with a defined azimuth (and,
    with ``use_depth``, matches the stored depth within ``depth_tol``
    relative tolerance, which restricts to actually visible points).
    """
    report = []
    for p in pts:
        tangents = []
        per_view = []
        for view in views:
            entry = {"visible": False}
            uv, depth = geom.project_points(view.camera, p[None])
            u, v = uv[0]
            entry["uv"] = [float(u), float(v)]
            if depth[0] > 0 and np.isfinite(u) and np.isfinite(v):
                col, row = int(round(u)), int(round(v))
                if 0 <= col < view.azimuth.width and 0 <= row < view.azimuth.height:
                    phi = view.azimuth.values[row, col]
                    ok = view.mask.values[row, col] and np.isfinite(phi)
                    if ok and use_depth:
                        origin = view.camera.pose.center
                        t_point = float(np.linalg.norm(p - origin))
                        t_gt = view.gt_depth[row, col]
                        ok = np.isfinite(t_gt) and t_point <= t_gt + depth_tol * max(t_gt, 1.0)
                    if ok:
                        entry["visible"] = True
                        tangents.append(geom.azimuth_to_tangent(view.camera.pose, phi))
            per_view.append(entry)
        row_out = {"point": [float(v) for v in p], "views": len(tangents), "per_view": per_view}
        if tangents:
            stack = np.asarray(tangents)
            cls = geom.classify_rank(stack, tol_lo, tol_hi)
            row_out["singular_values"] = [float(s) for s in cls.singular_values]
            row_out["class"] = cls.rank_class.name
            row_out["ambiguous"] = cls.ambiguous
            if cls.rank_class is geom.RankClass.TANGENT_PLANE:
                row_out["normal"] = [float(v) for v in geom.normal_from_tangents(stack, tol_lo, tol_hi)]
            else:
                row_out["normal"] = None
        else:
            row_out["class"] = "no-views"
            row_out["singular_values"] = None
            row_out["normal"] = None
        report.append(row_out)
    return report


def cmd_normalize_cameras(args) -> int:
    cameras = geom.cameras_from_json(args.cameras_json)
    x_o, s, cams = geom.normalize_cameras(cameras, args.scale_ratio)
    geom.cameras_to_json(cams, args.out)
    print(f"x_o = ({x_o[0]:.9g}, {x_o[1]:.9g}, {x_o[2]:.9g})  s = {s:.9g}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
