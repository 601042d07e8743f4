"""Command-line surface: generate, encode, decode, loss, evaluate,
roundtrip.

Every command is deterministic given its seeds; all failures map to
distinct exit codes (2 usage, 3 missing file, 4 bad format, 5 dimension
mismatch, 6 invalid value).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .camera import GridSpec, Variant
from .codecs import annotations_from, decode, encode
from .evaluation import EvalConfig, evaluate_dataset
from .fileio import (
    DimensionMismatchError,
    FileFormatError,
    config_camera,
    config_cluster,
    config_counts,
    config_eval,
    config_grid,
    config_loss,
    config_model,
    config_bounds,
    config_threshold,
    default_config,
    load_config,
    load_dataset,
    load_encoded_manifest,
    read_predictions,
    read_tensor,
    save_dataset,
    save_encoded_manifest,
    scene_truths,
    write_predictions,
    write_tensor,
    atomic_write_text,
)
from .loss import LossWeights, loss as loss_fn
from .pipeline import run_roundtrip, sample_corpus
from .postprocess import ClusterParams, cluster
from .report import (
    evaluation_tables,
    format_table,
    save_coverage_figure,
    save_pr_figure,
)
from .scenegen import render

_VARIANT_NAMES = [v.value for v in Variant]


def _config_from(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)
    return default_config()


def _add_config_flag(parser) -> None:
    parser.add_argument("--config", help="JSON experiment config (defaults are built in)")


def _cluster_params(args, config) -> ClusterParams:
    base = config_cluster(config)
    eps = base.eps if args.eps is None else args.eps
    min_points = base.min_points if args.min_points is None else args.min_points
    return ClusterParams(eps, min_points, base.confidence_threshold)


def _eval_config(args, config) -> EvalConfig:
    base = config_eval(config)
    return EvalConfig(
        vis_cutoff=base.vis_cutoff if args.vis_cutoff is None else args.vis_cutoff,
        radius_frac=base.radius_frac if args.radius_frac is None else args.radius_frac,
    )


def _cmd_generate(args) -> int:
    config = _config_from(args)
    cam = config_camera(config)
    model = config_model(config)
    bounds = config_bounds(config)
    counts = config_counts(config)
    scenes = sample_corpus(args.seed, args.count, model, counts, bounds, cam)
    pairs = [(scene, render(scene)) for scene in scenes]
    manifest = save_dataset(args.out, pairs)
    print(f"wrote {len(pairs)} scenes to {manifest.parent}")
    return 0


def _cmd_encode(args) -> int:
    config = _config_from(args)
    variant = Variant(args.variant)
    grid = config_grid(config, variant)
    dataset = load_dataset(args.scenes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = {}
    cam = model = None
    for stem, scene, rendered in dataset:
        cam = scene.camera
        model = scene.model
        tensor = encode(annotations_from(scene, rendered), rendered, model, cam, grid)
        name = f"{stem}.{variant.value}.bin"
        write_tensor(out / name, tensor.astype(np.float32))
        names[stem] = name
    if not names:
        raise ValueError("dataset holds no scenes")
    save_encoded_manifest(out, grid, cam, model, names)
    print(f"encoded {len(names)} scenes ({variant.value}) to {out}")
    return 0


def _cmd_decode(args) -> int:
    config = _config_from(args)
    manifest = load_encoded_manifest(args.tensors)
    grid: GridSpec = manifest["grid"]
    cam = manifest["camera"]
    model = manifest["model"]
    threshold = config_threshold(config) if args.threshold is None else args.threshold
    params = _cluster_params(args, config)
    directory = Path(args.tensors)
    by_scene = {}
    hypothesis_count = 0
    for stem, name in manifest["tensors"].items():
        tensor = read_tensor(directory / name)
        expected = (grid.sx, grid.sy, grid.channels)
        if tensor.shape != expected:
            raise DimensionMismatchError(
                f"{name}: tensor shape {tensor.shape} does not match grid {expected}"
            )
        hypotheses = decode(tensor.astype(float), grid, cam, model, threshold)
        hypothesis_count += len(hypotheses)
        by_scene[stem] = cluster(hypotheses, params, model)
    write_predictions(args.out, by_scene)
    total = sum(len(v) for v in by_scene.values())
    print(
        f"decoded {hypothesis_count} hypotheses into {total} predictions "
        f"across {len(by_scene)} scenes -> {args.out}"
    )
    return 0


def _grid_for_tensor(variant: Variant, shape) -> GridSpec:
    sx, sy, channels = (int(v) for v in shape)
    blocks, rem = divmod(channels, 8)
    if rem or blocks < 1:
        raise FileFormatError(f"channel count {channels} is not a positive multiple of 8")
    if variant is Variant.Z:
        return GridSpec(variant, sx, sy, sz=blocks, poses_per_cell=1)
    if variant is Variant.MP:
        return GridSpec(variant, sx, sy, sz=1, poses_per_cell=blocks)
    if blocks != 1:
        raise DimensionMismatchError(
            f"variant {variant.value} expects 8 channels, tensor has {channels}"
        )
    return GridSpec(variant, sx, sy)


def _cmd_loss(args) -> int:
    config = _config_from(args)
    pred = read_tensor(args.pred).astype(float)
    gt = read_tensor(args.gt).astype(float)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(
            f"prediction tensor {pred.shape} vs ground truth {gt.shape}"
        )
    variant = Variant(args.variant)
    grid = _grid_for_tensor(variant, pred.shape)
    base = config_loss(config)
    weights = LossWeights(
        presence=base.presence if args.lambda1 is None else args.lambda1,
        visibility=base.visibility if args.lambda2 is None else args.lambda2,
        position=base.position if args.lambda3 is None else args.lambda3,
        orientation=base.orientation if args.lambda4 is None else args.lambda4,
        pose_mode=args.lambda3_mode or base.pose_mode,
    )
    sym = config_model(config).symmetry
    breakdown = loss_fn(pred, gt, weights, grid, sym)
    for name in ("total", "presence", "visibility", "position", "orientation"):
        print(f"{name:12s} {getattr(breakdown, name)!r}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _config_from(args)
    cfg = _eval_config(args, config)
    predictions = read_predictions(args.predictions)
    truths = scene_truths(args.scenes)
    for stem in truths:
        predictions.setdefault(stem, [])
    report = evaluate_dataset(predictions, truths, cfg)
    text = evaluation_tables(report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "evaluation.txt", text)
    rows = [
        [
            "scene",
            r.scene_id,
            str(r.eligible),
            str(r.tp),
            str(r.fp),
            str(r.discarded),
            str(r.missed),
            repr(r.curve.ap),
        ]
        for r in report.scenes
    ]
    rows.append(["pooled", "", "", "", "", "", "", repr(report.pooled.ap)])
    rows.append(["macro", "", "", "", "", "", "", repr(report.macro_ap)])
    for name, curve in sorted(report.per_model.items()):
        rows.append(["model", name, "", "", "", "", "", repr(curve.ap)])
    csv_lines = ["scope,scene,eligible,tp,fp,discarded,missed,ap"]
    csv_lines += [",".join(row) for row in rows]
    atomic_write_text(out / "evaluation.csv", "\n".join(csv_lines) + "\n")
    save_pr_figure(out / "pr_curve.png", report)
    print(text, end="")
    return 0


def _cmd_roundtrip(args) -> int:
    config = _config_from(args)
    cam = config_camera(config)
    model = config_model(config)
    bounds = config_bounds(config)
    counts = config_counts(config)
    variant_names = args.variant or _VARIANT_NAMES
    grids = {Variant(name): config_grid(config, Variant(name)) for name in variant_names}
    threshold = config_threshold(config) if args.threshold is None else args.threshold
    params = _cluster_params(args, config)
    eval_cfg = _eval_config(args, config)
    scenes = sample_corpus(args.seed, args.scenes, model, counts, bounds, cam)
    stats = run_roundtrip(scenes, grids, threshold, params, eval_cfg)

    headers = (
        "variant",
        "scenes",
        "objects",
        "eligible",
        "captured",
        "missed",
        "recovered",
        "max_err_frac",
        "ap",
        "gated_scenes",
        "gated_missed",
    )
    rows = []
    for variant in grids:
        s = stats[variant]
        gated = (str(s.gated_scenes), str(s.gated_missed)) if variant is Variant.AP else ("", "")
        rows.append(
            (
                variant.value,
                s.scenes,
                s.objects,
                s.eligible,
                s.captured_eligible,
                s.missed,
                s.recovered,
                f"{s.max_roundtrip_frac:.3e}",
                f"{s.ap:.6f}",
                *gated,
            )
        )
    text = format_table(headers, rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "roundtrip.txt", text)
    csv_lines = [",".join(headers)]
    csv_lines += [",".join(str(v) for v in row) for row in rows]
    atomic_write_text(out / "roundtrip.csv", "\n".join(csv_lines) + "\n")
    save_coverage_figure(
        out / "coverage.png",
        [
            {"variant": v.value, "captured": stats[v].captured_eligible, "missed": stats[v].missed}
            for v in grids
        ],
    )
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posegrid",
        description="Grid tensor codecs, losses, and metrics for multi-object 6D pose estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample scenes and write a dataset directory")
    _add_config_flag(p)
    p.add_argument("--seed", type=int, default=0, help="base seed for the corpus")
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("encode", help="encode dataset scenes into ground-truth tensors")
    _add_config_flag(p)
    p.add_argument("--scenes", required=True, help="dataset directory")
    p.add_argument("--variant", required=True, choices=_VARIANT_NAMES)
    p.add_argument("--out", required=True, help="output tensor directory")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode tensors and cluster into predictions")
    _add_config_flag(p)
    p.add_argument("--tensors", required=True, help="directory written by encode")
    p.add_argument("--threshold", type=float, default=None, help="presence threshold")
    p.add_argument("--eps", type=float, default=None, help="clustering radius (length units)")
    p.add_argument("--min-points", type=int, default=None, help="core point support")
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("loss", help="loss breakdown between two tensors")
    _add_config_flag(p)
    p.add_argument("--pred", required=True, help="prediction tensor file")
    p.add_argument("--gt", required=True, help="ground-truth tensor file")
    p.add_argument("--variant", required=True, choices=_VARIANT_NAMES)
    p.add_argument("--lambda1", type=float, default=None, help="presence weight")
    p.add_argument("--lambda2", type=float, default=None, help="visibility weight")
    p.add_argument("--lambda3", type=float, default=None, help="position weight scale")
    p.add_argument("--lambda4", type=float, default=None, help="orientation weight")
    p.add_argument(
        "--lambda3-mode",
        choices=["cubic", "linear"],
        default=None,
        help="visibility ramp on pose terms: 8v^3 or v",
    )
    p.add_argument(
        "--deterministic-sum",
        action="store_true",
        help="no-op: reductions already run in a fixed order",
    )
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("evaluate", help="match predictions against a dataset and report AP")
    _add_config_flag(p)
    p.add_argument("--predictions", required=True, help="predictions CSV")
    p.add_argument("--scenes", required=True, help="dataset directory")
    p.add_argument("--vis-cutoff", type=float, default=None, help="ground-truth visibility cutoff")
    p.add_argument("--radius-frac", type=float, default=None, help="match radius / diameter")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "roundtrip",
        help="encode+decode seeded scenes in memory; report coverage and fidelity",
    )
    _add_config_flag(p)
    p.add_argument("--seed", type=int, default=0, help="base seed for the corpus")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.add_argument(
        "--variant",
        action="append",
        choices=_VARIANT_NAMES,
        help="repeatable; default is all six",
    )
    p.add_argument("--threshold", type=float, default=None, help="presence threshold")
    p.add_argument("--eps", type=float, default=None, help="clustering radius (length units)")
    p.add_argument("--min-points", type=int, default=None, help="core point support")
    p.add_argument("--vis-cutoff", type=float, default=None, help="ground-truth visibility cutoff")
    p.add_argument("--radius-frac", type=float, default=None, help="match radius / diameter")
    p.add_argument(
        "--deterministic-sum",
        action="store_true",
        help="no-op: reductions already run in a fixed order",
    )
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_roundtrip)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:  # unreadable path (directory, permissions)
        print(f"error: cannot read: {exc}", file=sys.stderr)
        return 3
    except DimensionMismatchError as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return 5
    except FileFormatError as exc:
        print(f"error: bad file format: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
