"""Command-line surface: forward kinematics, IK fitting/training/prediction,
metric evaluation, architecture profiling, and synthetic-data generation.

All commands are deterministic given their inputs and --seed, and all text
artifacts use fixed 9-significant-digit formatting, so re-runs produce
byte-identical outputs.  Exit codes: 0 success, 2 parse/file failure,
3 shape or consistency mismatch, 4 numerical failure.

The default model path can come from the HANDKIT_MODEL environment variable
when --model is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import (bio_dof, ik_net, ik_optim, kinematics as kin, lixel, metrics,
               profiler, synth)
from .containers import ContainerError
from .hand_model import (FullPose, HandModel, ModelError, ShapeParams,
                         forward, load_model, make_desk_hand,
                         make_desk_hand_small, save_model, write_obj)

MODEL_ENV_VAR = "HANDKIT_MODEL"

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SHAPE = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fmt(value: float) -> str:
    return format(float(value), ".9g")


def _fmt_row(values) -> str:
    return " ".join(_fmt(v) for v in values)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

@dataclass
class AnnotationRecord:
    """One sample: joints (mm, internally), optional vertices and intrinsics."""

    joints: np.ndarray
    vertices: np.ndarray | None = None
    intrinsics: np.ndarray | None = None


def _record_from_obj(obj, scale: float) -> AnnotationRecord:
    if isinstance(obj, dict):
        joints = np.asarray(obj["joints"], dtype=float) * scale
        vertices = obj.get("vertices")
        if vertices is not None:
            vertices = np.asarray(vertices, dtype=float) * scale
        intrinsics = obj.get("intrinsics")
        if intrinsics is not None:
            intrinsics = np.asarray(intrinsics, dtype=float)
            if intrinsics.shape != (3, 3):
                raise CliError(EXIT_SHAPE, "intrinsics must be 3x3")
    else:
        joints = np.asarray(obj, dtype=float) * scale
        vertices = intrinsics = None
    if joints.shape != (kin.JOINT_COUNT, 3):
        raise CliError(EXIT_SHAPE,
                       f"joints must be {kin.JOINT_COUNT}x3, got {joints.shape}")
    if vertices is not None and (vertices.ndim != 2 or vertices.shape[1] != 3):
        raise CliError(EXIT_SHAPE, "vertices must be (V, 3)")
    return AnnotationRecord(joints=joints, vertices=vertices,
                            intrinsics=intrinsics)


def load_annotation_records(path) -> list[AnnotationRecord]:
    """JSON annotations: native {'unit', 'records': [...]} or a single record
    {'unit', 'joints', ...}; a bare list-of-arrays follows the public
    FreiHAND layout and is interpreted in meters."""
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"missing annotation file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"{path}: invalid JSON ({exc})") from exc
    if isinstance(payload, dict):
        unit = payload.get("unit")
        if unit not in ("mm", "m"):
            raise CliError(EXIT_PARSE, f"{path}: unit must be 'mm' or 'm'")
        scale = 1000.0 if unit == "m" else 1.0
        if "records" in payload:
            items = payload["records"]
        else:
            items = [payload]
    elif isinstance(payload, list):
        scale = 1000.0  # FreiHAND-layout bare lists are in meters
        items = payload
    else:
        raise CliError(EXIT_PARSE, f"{path}: unrecognized annotation layout")
    try:
        return [_record_from_obj(item, scale) for item in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: bad record ({exc})") from exc


def load_pose_file(path) -> tuple[FullPose, ShapeParams]:
    """Plain-text pose: 'key: values' lines for global_rot, articulation,
    and optionally translation and beta."""
    fields: dict[str, np.ndarray] = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"missing pose file: {path}") from exc
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise CliError(EXIT_PARSE, f"{path}: bad pose line {raw!r}")
        try:
            fields[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError as exc:
            raise CliError(EXIT_PARSE, f"{path}: bad numbers in {raw!r}") from exc
    try:
        pose = FullPose(
            global_rot=fields.get("global_rot", np.zeros(3)),
            articulation=fields.get("articulation", np.zeros(45)),
            translation=fields.get("translation"))
        beta = ShapeParams(fields.get("beta", np.zeros(10)))
    except ValueError as exc:
        raise CliError(EXIT_SHAPE, f"{path}: {exc}") from exc
    return pose, beta


def write_params_file(path, bio: bio_dof.BioPose, beta: ShapeParams,
                      global_rot, translation) -> None:
    lines = []
    for name, value in zip(bio_dof.DOF_NAMES, bio.values):
        lines.append(f"bio {name} {_fmt(value)}")
    for i, value in enumerate(beta.beta):
        lines.append(f"beta {i} {_fmt(value)}")
    lines.append("global_rot " + _fmt_row(global_rot))
    lines.append("translation " + _fmt_row(translation))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params_file(path):
    """Inverse of write_params_file (fit reports parse too)."""
    bio = np.zeros(bio_dof.DOF_COUNT)
    beta = np.zeros(10)
    rot = np.zeros(3)
    trans = np.zeros(3)
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"missing params file: {path}") from exc
    try:
        for raw in text.splitlines():
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "bio" and len(parts) == 3:
                bio[bio_dof.DOF_NAMES.index(parts[1])] = float(parts[2])
            elif parts[0] == "beta" and len(parts) == 3:
                beta[int(parts[1])] = float(parts[2])
            elif parts[0] == "global_rot" and len(parts) == 4:
                rot = np.array([float(v) for v in parts[1:]])
            elif parts[0] == "translation" and len(parts) == 4:
                trans = np.array([float(v) for v in parts[1:]])
    except (ValueError, IndexError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: bad params line ({exc})") from exc
    return bio_dof.BioPose(bio), ShapeParams(beta), rot, trans


def write_skeleton_file(path, joints: np.ndarray) -> None:
    lines = [_fmt_row(row) for row in joints]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# shared option handling
# ---------------------------------------------------------------------------

def _resolve_model(args) -> HandModel:
    path = getattr(args, "model", None) or os.environ.get(MODEL_ENV_VAR)
    if not path:
        raise CliError(EXIT_PARSE,
                       f"--model is required (or set {MODEL_ENV_VAR})")
    try:
        return load_model(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"missing model file: {path}") from exc
    except ContainerError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    except ModelError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from exc


def _resolve_limits(args) -> bio_dof.DofLimits:
    path = getattr(args, "limits", None)
    if not path:
        return bio_dof.DofLimits.default()
    try:
        return bio_dof.DofLimits.load(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"missing limits file: {path}") from exc
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_model_desk(args) -> int:
    model = make_desk_hand_small() if args.small else make_desk_hand()
    save_model(model, args.out, text=args.text)
    print(f"wrote {args.out} ({model.vertex_count} vertices)")
    return EXIT_OK


def cmd_fk(args) -> int:
    model = _resolve_model(args)
    pose, beta = load_pose_file(args.pose)
    try:
        mesh, skeleton = forward(model, pose, beta)
    except ValueError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from exc
    out = _out_dir(args)
    write_obj(mesh, out / "mesh.obj")
    write_skeleton_file(out / "skeleton.txt", skeleton.joints)
    print(f"wrote {out / 'mesh.obj'} and {out / 'skeleton.txt'}")
    return EXIT_OK


def cmd_ik_fit(args) -> int:
    model = _resolve_model(args)
    limits = _resolve_limits(args)
    record = load_annotation_records(args.target)[0]
    if record.vertices is not None and record.vertices.shape[0] != model.vertex_count:
        raise CliError(EXIT_SHAPE, "target vertex count does not match the model")
    target = ik_optim.FitTarget(joints=record.joints, vertices=record.vertices)

    if args.from_ik_net:
        try:
            net = ik_net.load_checkpoint(args.from_ik_net)
        except FileNotFoundError as exc:
            raise CliError(EXIT_PARSE,
                           f"missing checkpoint: {args.from_ik_net}") from exc
        except (ContainerError, ValueError, KeyError) as exc:
            raise CliError(EXIT_PARSE, str(exc)) from exc
        feats = ik_net.featurize(record.joints)
        init_bio, init_beta = ik_net.predict(net, feats, limits)
        init_rot = np.zeros(3)
        init_trans = np.zeros(3)
    elif args.init:
        init_bio, init_beta, init_rot, init_trans = load_params_file(args.init)
    else:
        raise CliError(EXIT_PARSE, "ik-fit needs --init or --from-ik-net")

    config = ik_optim.FitConfig(
        iterations=args.iterations, step_size=args.step_size,
        bend_weight=args.bend_weight, freeze_shape=args.freeze_shape)
    try:
        result = ik_optim.fit(model, target, init_bio=init_bio,
                              init_beta=init_beta, init_rot=init_rot,
                              init_trans=init_trans, config=config,
                              limits=limits)
    except (ik_optim.FitDivergedError, FloatingPointError) as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    out = _out_dir(args)
    ik_optim.write_fit_report(result, out / "fit_report.txt")
    write_params_file(out / "fit_params.txt", result.bio, result.beta,
                      result.global_rot, result.translation)
    print(f"wrote {out / 'fit_report.txt'} (final loss "
          f"{_fmt(min(result.loss_trace))})")
    return EXIT_OK


def cmd_ik_train(args) -> int:
    model = _resolve_model(args)
    limits = _resolve_limits(args)
    data = ik_net.generate_pairs(model, args.pairs, limits, seed=args.seed)
    net = ik_net.MlpIk(seed=args.seed)
    config = ik_net.TrainConfig(epochs=args.epochs,
                                decay_epochs=tuple(args.decay_epoch),
                                batch_size=args.batch_size,
                                learning_rate=args.rate, seed=args.seed)
    try:
        net, curve = ik_net.train(net, data, config)
    except FloatingPointError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    out = _out_dir(args)
    ik_net.save_checkpoint(net, out / "ik_net.hkc")
    lines = ["epoch,total,theta,beta,pose"]
    for row in curve:
        lines.append(",".join([str(int(row["epoch"]))] +
                              [_fmt(row[k]) for k in ("total", "theta", "beta",
                                                      "pose")]))
    (out / "loss_curve.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'ik_net.hkc'} (final loss {_fmt(curve[-1]['total'])})")
    return EXIT_OK


def cmd_ik_predict(args) -> int:
    limits = _resolve_limits(args)
    try:
        net = ik_net.load_checkpoint(args.ckpt)
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"missing checkpoint: {args.ckpt}") from exc
    except (ContainerError, ValueError, KeyError) as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    records = load_annotation_records(args.target)
    out = _out_dir(args)
    for i, record in enumerate(records):
        try:
            feats = ik_net.featurize(record.joints)
            bio, beta = ik_net.predict(net, feats, limits)
        except (ik_net.DegenerateSkeletonError, FloatingPointError) as exc:
            raise CliError(EXIT_NUMERIC, f"record {i}: {exc}") from exc
        name = "params.txt" if len(records) == 1 else f"params_{i:05d}.txt"
        write_params_file(out / name, bio, beta, np.zeros(3), np.zeros(3))
    print(f"wrote {len(records)} parameter file(s) to {out}")
    return EXIT_OK


def cmd_lixel(args) -> int:
    try:
        heatmap = lixel.encode(args.coord, args.length, args.sigma)
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    Path(args.out).write_text(lixel.dump_text(heatmap))
    decoded = lixel.decode(heatmap)
    print(f"wrote {args.length}-lixel heatmap to {args.out} "
          f"(decodes to {_fmt(decoded)})")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = load_annotation_records(args.pred)
    gt = load_annotation_records(args.gt)
    if len(pred) != len(gt):
        raise CliError(EXIT_SHAPE,
                       f"record counts differ: {len(pred)} vs {len(gt)}")
    have_verts = all(r.vertices is not None for r in pred + gt)
    try:
        report = metrics.evaluate(
            [r.joints for r in pred], [r.joints for r in gt],
            [r.vertices for r in pred] if have_verts else None,
            [r.vertices for r in gt] if have_verts else None,
            thresholds=args.threshold or metrics.DEFAULT_F_THRESHOLDS,
            root_center=args.root_center)
    except metrics.DegenerateConfigurationError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from exc
    report.save(args.out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_profile(args) -> int:
    if args.graph in profiler.CATALOG:
        graph = profiler.CATALOG[args.graph]()
    else:
        try:
            graph = profiler.load_graph_text(args.graph,
                                             input_stride=args.input_stride)
        except FileNotFoundError as exc:
            raise CliError(
                EXIT_PARSE,
                f"unknown graph {args.graph!r} (catalog: "
                f"{', '.join(sorted(profiler.CATALOG))}) and no such file") from exc
        except ValueError as exc:
            raise CliError(EXIT_PARSE, str(exc)) from exc
    try:
        report = profiler.profile(graph, args.resolution)
    except profiler.ShapeError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from exc
    if args.out:
        report.save(args.out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_synth_cameras(args) -> int:
    cams = synth.sample_cameras(elev_min=args.elev_min, elev_max=args.elev_max,
                                azim_step=args.azim_step,
                                elev_step=args.elev_step)
    text = synth.cameras_to_text(cams)
    Path(args.out).write_text(text)
    print(f"wrote {len(cams)} cameras to {args.out}")
    return EXIT_OK


def cmd_synth_poses(args) -> int:
    if args.library:
        try:
            lib = synth.load_pose_library(args.library)
        except FileNotFoundError as exc:
            raise CliError(EXIT_PARSE,
                           f"missing pose library: {args.library}") from exc
        except (ContainerError, ValueError, KeyError) as exc:
            raise CliError(EXIT_PARSE, str(exc)) from exc
    else:
        model = _resolve_model(args)
        limits = _resolve_limits(args)
        lib = synth.make_pose_library(model, count=args.count, limits=limits,
                                      seed=args.seed)
    augmented = synth.augment_library(lib, per_pose=args.per_pose,
                                      seed=args.seed,
                                      swap_probability=args.swap_probability)
    synth.save_pose_library(augmented, args.out)
    print(f"wrote {len(augmented)} poses to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handkit",
        description="hand kinematics toolkit: FK, 23-DoF IK, metrics, "
                    "profiling, and synthetic data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="model utilities")
    msub = p.add_subparsers(dest="model_command", required=True)
    p = msub.add_parser("desk", help="write the procedural desk-hand model")
    p.add_argument("--out", required=True)
    p.add_argument("--small", action="store_true",
                   help="reduced vertex count for quick tests")
    p.add_argument("--text", action="store_true", help="plain-text container")
    p.set_defaults(func=cmd_model_desk)

    p = sub.add_parser("fk", help="pose the mesh and skeleton from a pose file")
    p.add_argument("--model")
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fk)

    p = sub.add_parser("ik-fit", help="refine parameters against target joints"
                                      "/vertices")
    p.add_argument("--model")
    p.add_argument("--target", required=True)
    p.add_argument("--init")
    p.add_argument("--from-ik-net", dest="from_ik_net")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--bend-weight", type=float, default=1e-2)
    p.add_argument("--freeze-shape", action="store_true")
    p.add_argument("--limits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ik_fit)

    p = sub.add_parser("ik-train", help="train the IK network on self-generated"
                                        " FK pairs")
    p.add_argument("--model")
    p.add_argument("--pairs", type=int, default=20000)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--decay-epoch", type=int, action="append",
                   default=None, help="repeatable; default 30 and 35")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--rate", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ik_train)

    p = sub.add_parser("ik-predict", help="predict parameters from target "
                                          "skeletons with a trained network")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--limits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ik_predict)

    p = sub.add_parser("eval", help="metric report for prediction/truth files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, action="append")
    p.add_argument("--root-center", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lixel", help="dump a coordinate's lixel heatmap as "
                                     "delimiter-separated text")
    p.add_argument("--coord", type=float, required=True)
    p.add_argument("--length", type=int, default=lixel.DEFAULT_RESOLUTION)
    p.add_argument("--sigma", type=float, default=lixel.DEFAULT_SIGMA)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lixel)

    p = sub.add_parser("profile", help="MAC profile of a catalog or text graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--input-stride", type=int, default=1,
                   help="for text graphs that consume backbone features")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synth", help="synthetic data generation")
    ssub = p.add_subparsers(dest="synth_command", required=True)
    p = ssub.add_parser("cameras", help="camera grid on the unit sphere")
    p.add_argument("--elev-min", type=float, default=synth.DEFAULT_ELEV_MIN)
    p.add_argument("--elev-max", type=float, default=synth.DEFAULT_ELEV_MAX)
    p.add_argument("--azim-step", type=float, default=synth.DEFAULT_STEP)
    p.add_argument("--elev-step", type=float, default=synth.DEFAULT_STEP)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_cameras)
    p = ssub.add_parser("poses", help="finger-swap augmented pose library")
    p.add_argument("--model")
    p.add_argument("--limits")
    p.add_argument("--library", help="existing pose-library container")
    p.add_argument("--count", type=int, default=synth.BASE_LIBRARY_SIZE)
    p.add_argument("--per-pose", type=int, default=synth.DEFAULT_VARIANTS_PER_POSE)
    p.add_argument("--swap-probability", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_poses)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "decay_epoch", None) is None and hasattr(args, "decay_epoch"):
        args.decay_epoch = [30, 35]
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
