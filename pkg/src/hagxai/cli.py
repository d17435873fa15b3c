"""Command-line surface for the end-to-end workflows.

Commands: ``attention`` (fixations -> attention maps), ``explain``
(bundles -> saliency artifacts), ``train`` (bundles + attention ->
cross-validated parameters), ``eval`` (saliency + attention [+ scorer]
-> metric tables), and ``bundle validate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 remote/scorer
error.  Every run writes its resolved configuration next to its outputs
so results are reproducible from the artifacts alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import attention as attention_mod
from . import metrics as metrics_mod
from .bundles import find_bundles, read_bundle
from .errors import DataError, ScorerError, UndefinedResultError
from .explainers import (
    METHODS,
    fullgrad_cam,
    fullgrad_cam_pp,
    grad_cam,
    grad_cam_pp,
    load_saliency_dir,
    save_saliency,
)
from .hag import HagParams, hag_forward, load_params, save_params, unify_branches
from .scoring import ScorerClient, classification_reference, detection_reference
from .tensor_ops import GaussianKernelSpec, resize_bilinear
from .training import TrainConfig, cross_validate, summarize_folds, write_history_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REMOTE = 3

_EXPLAINERS = {"gc": grad_cam, "gcpp": grad_cam_pp, "fgc": fullgrad_cam, "fgcpp": fullgrad_cam_pp}

CONFIG_SCHEMA = {
    "task": str,
    "bundles": str,
    "attention": str,
    "saliency": str,
    "labels": str,
    "images": str,
    "out": str,
    "scorer": str,
    "methods": list,
    "workers": int,
    "seed": int,
    "sigma": float,
    "height": int,
    "width": int,
    "perturbation": {
        "steps": int,
        "step_area_fraction": float,
        "area_limit_mode": str,
        "fill_mode": str,
        "seed": int,
    },
    "train": {
        "batch_size": int,
        "max_epochs": int,
        "lr_init": float,
        "lr_final": float,
        "lr_decay_epochs": int,
        "early_stop_patience": int,
        "folds": int,
        "seed": int,
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse's default usage-error exit code is 2; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _validate_config(config: dict, schema=None, prefix="") -> None:
    schema = CONFIG_SCHEMA if schema is None else schema
    for key, value in config.items():
        if key not in schema:
            raise DataError(f"unknown config key {prefix + key!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise DataError(f"config key {prefix + key!r} must be a table")
            _validate_config(value, expected, prefix=f"{prefix}{key}.")


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return json.dumps(str(value))


def _toml_dumps(config: dict) -> str:
    lines = []
    tables = []
    for key, value in config.items():
        if value is None:
            continue
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_toml_value(value)}")
    for name, table in tables:
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in table.items():
            if value is not None:
                lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _write_resolved_config(out_dir: Path, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.toml").write_text(_toml_dumps(resolved), encoding="utf-8")


def _merge_config(args, keys) -> dict:
    """File config overridden by any explicitly passed CLI flags."""
    config = {}
    if getattr(args, "config", None):
        config = _load_toml(args.config)
        _validate_config(config)
    merged = {}
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
        elif key in config:
            merged[key] = config[key]
    for table in ("perturbation", "train"):
        if table in keys and table in config:
            merged[table] = config[table]
    return merged


# --- attention ---------------------------------------------------------------


def cmd_attention(args) -> int:
    merged = _merge_config(args, ("out", "sigma", "height", "width", "seed"))
    sigma = merged.get("sigma")
    if sigma is None or sigma <= 0:
        raise UsageError("--sigma must be a positive number of pixels")
    height, width = merged.get("height"), merged.get("width")
    if not height or not width or height < 1 or width < 1:
        raise UsageError("--height and --width are required and must be >= 1")
    out_dir = Path(merged.get("out") or "attention_out")

    records = attention_mod.load_fixations(args.fixations)
    grouped = attention_mod.group_fixations(records)
    maps = [
        attention_mod.build_attention_map(recs, height, width, sigma, weight_by_duration=args.weight_by_duration)
        for _, recs in sorted(grouped.items())
    ]
    attention_mod.save_attention_maps(maps, out_dir)
    _write_resolved_config(
        out_dir,
        {
            "command": "attention",
            "fixations": str(args.fixations),
            "height": height,
            "width": width,
            "sigma": sigma,
            "weight_by_duration": bool(args.weight_by_duration),
        },
    )
    print(f"wrote {len(maps)} attention maps to {out_dir}")
    return EXIT_OK


# --- explain -----------------------------------------------------------------


def _hag_params_for_explain(args) -> tuple[HagParams, str]:
    if not args.params:
        raise UsageError("--method hag requires --params <trained params JSON>")
    params, task, _ = load_params(args.params)
    if args.delta_kernels:
        params = HagParams(
            grad_slope_pos=params.grad_slope_pos,
            grad_slope_neg=params.grad_slope_neg,
            act_slope_pos=params.act_slope_pos,
            act_slope_neg=params.act_slope_neg,
            grad_kernel=GaussianKernelSpec(size=1, amplitude=1.0, variance=1.0),
            global_kernel=GaussianKernelSpec(size=1, amplitude=1.0, variance=1.0),
        )
    return params, task


def cmd_explain(args) -> int:
    merged = _merge_config(args, ("bundles", "out", "workers"))
    bundles_dir = merged.get("bundles")
    if not bundles_dir:
        raise UsageError("--bundles is required")
    out_dir = Path(merged.get("out") or "saliency_out")
    workers = int(merged.get("workers") or 1)

    method = args.method
    if method == "hag":
        params, task = _hag_params_for_explain(args)
        normalization = "maxmin" if args.maxmin_norm else None

        def explain(bundle):
            return hag_forward(bundle, params, task=task, normalization=normalization)

    else:
        explain = _EXPLAINERS[method]

    paths = find_bundles(bundles_dir)
    if not paths:
        raise DataError(f"no bundle archives found under {bundles_dir}")

    def work(path):
        return explain(read_bundle(path))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, paths))
    else:
        results = [work(p) for p in paths]
    for sal in sorted(results, key=lambda s: s.image_id):
        save_saliency(sal, out_dir, write_png=args.heatmaps)
    _write_resolved_config(
        out_dir,
        {
            "command": "explain",
            "method": method,
            "bundles": str(bundles_dir),
            "params": str(args.params) if args.params else None,
            "delta_kernels": bool(args.delta_kernels),
            "maxmin_norm": bool(args.maxmin_norm),
            "workers": workers,
        },
    )
    print(f"wrote {len(results)} saliency maps to {out_dir}")
    return EXIT_OK


# --- train -------------------------------------------------------------------


def _paired_dataset(bundles_dir, attention_dir, target_resolution="branch"):
    attention_maps = attention_mod.load_attention_maps(attention_dir)
    dataset = []
    for path in find_bundles(bundles_dir):
        bundle = read_bundle(path)
        if bundle.image_id not in attention_maps:
            raise DataError(f"no attention map for bundle image {bundle.image_id!r}")
        target = attention_maps[bundle.image_id].map
        bundle = unify_branches(bundle)
        if target_resolution == "branch":
            h, w = bundle.max_branch_shape
            target = resize_bilinear(target, h, w)
        dataset.append((bundle, target.astype(np.float64)))
    if not dataset:
        raise DataError(f"no bundles found under {bundles_dir}")
    return dataset


def cmd_train(args) -> int:
    merged = _merge_config(args, ("bundles", "attention", "task", "out", "seed", "train"))
    bundles_dir = merged.get("bundles")
    attention_dir = merged.get("attention")
    if not bundles_dir or not attention_dir:
        raise UsageError("--bundles and --attention are required")
    task = merged.get("task") or "detection"
    out_dir = Path(merged.get("out") or "train_out")

    overrides = dict(merged.get("train", {}))
    if args.folds is not None:
        overrides["folds"] = args.folds
    if merged.get("seed") is not None:
        overrides["seed"] = int(merged["seed"])
    if overrides.get("folds", 5) < 2:
        raise UsageError("--folds must be at least 2")
    config = TrainConfig.for_task(task, **overrides)

    dataset = _paired_dataset(bundles_dir, attention_dir, args.target_resolution)
    records = cross_validate(dataset, config)

    out_dir.mkdir(parents=True, exist_ok=True)
    for record in records:
        save_params(record.final_params, task, out_dir / f"params_fold{record.fold_index}.json", seed=config.seed)
        write_history_csv(record, out_dir / f"loss_fold{record.fold_index}.csv")
    summary = summarize_folds(records)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_resolved_config(
        out_dir,
        {
            "command": "train",
            "bundles": str(bundles_dir),
            "attention": str(attention_dir),
            "task": task,
            "target_resolution": args.target_resolution,
            "train": {
                "batch_size": config.batch_size,
                "max_epochs": config.max_epochs,
                "lr_init": config.lr_init,
                "lr_final": config.lr_final,
                "lr_decay_epochs": config.lr_decay_epochs,
                "early_stop_patience": config.early_stop_patience,
                "folds": config.folds,
                "seed": config.seed,
            },
        },
    )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# --- eval --------------------------------------------------------------------


def _load_labels(path) -> list[metrics_mod.ConditionLabel]:
    labels = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"image_id", "occlusion", "degradation"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise DataError(f"{path}: expected header image_id,occlusion,degradation")
        for row_no, row in enumerate(reader, start=2):
            try:
                labels.append(
                    metrics_mod.ConditionLabel(
                        image_id=row["image_id"].strip(),
                        occlusion=bool(int(row["occlusion"])),
                        degradation=bool(int(row["degradation"])),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: row {row_no}: occlusion/degradation must be 0 or 1") from exc
    return labels


def _find_image(images_dir: Path, image_id: str) -> Path:
    for ext in (".png", ".jpg", ".jpeg", ".bmp"):
        candidate = images_dir / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    raise DataError(f"no image file for {image_id!r} under {images_dir}")


def _plausibility(sal_map: np.ndarray, attention_map: np.ndarray):
    if sal_map.shape != attention_map.shape:
        sal_map = resize_bilinear(sal_map, *attention_map.shape)
    try:
        r = metrics_mod.pcc(sal_map, attention_map)
    except UndefinedResultError:
        r = math.nan
    return r, metrics_mod.rmse(sal_map, attention_map)


def _faithfulness(sal, image, client, perturbation, curves_dir):
    reference_objects = client.detect(image)
    if client.task == "detection":
        reference = detection_reference(reference_objects)
        bboxes = [o["bbox"] for o in reference_objects]
        cfg = metrics_mod.PerturbationConfig(area_limit_mode="bbox_union", **perturbation)
    else:
        if not reference_objects:
            raise DataError(f"{sal.image_id}: scorer returned no reference prediction")
        probs = reference_objects[0].get("class_probs", [])
        reference = classification_reference(int(np.argmax(probs)) if probs else 0)
        bboxes = None
        cfg = metrics_mod.PerturbationConfig(area_limit_mode="whole_image", **perturbation)
    scorer = client.curve_scorer(reference, seed=cfg.seed)
    deletion = metrics_mod.deletion_curve(image, sal.map, scorer, cfg, bboxes=bboxes)
    insertion = metrics_mod.insertion_curve(image, sal.map, scorer, cfg, bboxes=bboxes)
    for curve, name in ((deletion, "deletion"), (insertion, "insertion")):
        if curve.error:
            raise ScorerError(f"{sal.image_id} {name} curve failed: {curve.error}")
        if curves_dir:
            _dump_curve(curve, curves_dir, f"{sal.image_id}__{sal.method}__{name}")
    return metrics_mod.auc(deletion), metrics_mod.auc(insertion)


def _dump_curve(curve, curves_dir: Path, stem: str) -> None:
    curves_dir.mkdir(parents=True, exist_ok=True)
    with (curves_dir / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction_modified", "score"])
        for fraction, score in curve.samples:
            writer.writerow([repr(fraction), repr(score)])
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(curve.fractions, curve.scores, marker="", linewidth=1.2)
    ax.set_xlabel("fraction modified")
    ax.set_ylabel("model score")
    ax.set_title(stem, fontsize=8)
    fig.tight_layout()
    fig.savefig(curves_dir / f"{stem}.svg")
    plt.close(fig)


def cmd_eval(args) -> int:
    merged = _merge_config(args, ("saliency", "attention", "labels", "images", "scorer", "out", "workers", "perturbation"))
    saliency_dir = merged.get("saliency")
    attention_dir = merged.get("attention")
    if not saliency_dir or not attention_dir:
        raise UsageError("--saliency and --attention are required")
    out_dir = Path(merged.get("out") or "eval_out")
    scorer_url = merged.get("scorer")
    images_dir = merged.get("images")
    if scorer_url and not images_dir:
        raise UsageError("--images is required when --scorer is given")

    saliencies = load_saliency_dir(saliency_dir)
    if not saliencies:
        raise DataError(f"no saliency artifacts under {saliency_dir}")
    attention_maps = attention_mod.load_attention_maps(attention_dir)

    client = None
    perturbation = dict(merged.get("perturbation", {}))
    perturbation.pop("area_limit_mode", None)
    if scorer_url:
        client = ScorerClient(scorer_url)
        client.health()
    curves_dir = out_dir / "curves" if args.curves else None

    rows = []
    for sal in sorted(saliencies, key=lambda s: (s.image_id, s.method)):
        if sal.image_id not in attention_maps:
            raise DataError(f"no attention map for saliency image {sal.image_id!r}")
        r, err = _plausibility(sal.map, attention_maps[sal.image_id].map)
        row = {"image_id": sal.image_id, "method": sal.method, "pcc": r, "rmse": err, "d_auc": None, "i_auc": None}
        if client is not None:
            image = np.asarray(_load_image(_find_image(Path(images_dir), sal.image_id)))
            row["d_auc"], row["i_auc"] = _faithfulness(sal, image, client, perturbation, curves_dir)
        rows.append(row)

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics_csv(rows, out_dir / "metrics.csv")
    (out_dir / "summary.json").write_text(
        json.dumps(_summarize(rows), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if merged.get("labels"):
        labels = _load_labels(merged["labels"])
        table = metrics_mod.stratified_eval(
            [{k: v for k, v in row.items() if v is not None} for row in rows], labels
        )
        _write_condition_csv(table, out_dir / "condition_table.csv")
    _write_resolved_config(
        out_dir,
        {
            "command": "eval",
            "saliency": str(saliency_dir),
            "attention": str(attention_dir),
            "scorer": scorer_url,
            "images": str(images_dir) if images_dir else None,
            "labels": str(merged.get("labels")) if merged.get("labels") else None,
            "perturbation": perturbation or None,
        },
    )
    print(f"wrote metrics for {len(rows)} saliency maps to {out_dir}")
    return EXIT_OK


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"))


def _write_metrics_csv(rows, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "method", "pcc", "rmse", "d_auc", "i_auc"])
        for row in rows:
            writer.writerow(
                [
                    row["image_id"],
                    row["method"],
                    "" if row["pcc"] is None or math.isnan(row["pcc"]) else repr(row["pcc"]),
                    repr(row["rmse"]),
                    "" if row["d_auc"] is None else repr(row["d_auc"]),
                    "" if row["i_auc"] is None else repr(row["i_auc"]),
                ]
            )


def _summarize(rows) -> dict:
    by_method: dict = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    summary = {}
    for method, metric_rows in sorted(by_method.items()):
        entry = {}
        for metric in ("pcc", "rmse", "d_auc", "i_auc"):
            values = [r[metric] for r in metric_rows if r[metric] is not None and not math.isnan(r[metric])]
            if values:
                entry[metric] = {"mean": float(np.mean(values)), "std": float(np.std(values)), "n": len(values)}
        summary[method] = entry
    return summary


def _write_condition_csv(table, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "method", "metric", "mean_yes", "mean_no"])
        for row in table.rows():
            writer.writerow([row["condition"], row["method"], row["metric"], repr(row["mean_yes"]), repr(row["mean_no"])])


# --- bundle ------------------------------------------------------------------


def cmd_bundle_validate(args) -> int:
    bundle = read_bundle(args.path)
    print(
        f"{bundle.image_id}: OK — {len(bundle.branches)} branch(es), {len(bundle.objects)} object(s), "
        f"image {bundle.image_h}x{bundle.image_w}"
    )
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="hagxai", description="Saliency explanations, training, and evaluation for vision models")
    parser.add_argument("--config", help="TOML run configuration; flags override file values")
    parser.add_argument("--workers", type=int, help="worker threads for per-image work")
    parser.add_argument("--seed", type=int, help="seed for stochastic steps")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_att = sub.add_parser("attention", help="build attention maps from a fixation CSV")
    p_att.add_argument("fixations", help="fixation CSV (image_id,participant_id,x,y,duration_ms)")
    p_att.add_argument("--height", type=int, help="map height in pixels")
    p_att.add_argument("--width", type=int, help="map width in pixels")
    p_att.add_argument("--sigma", type=float, help="Gaussian smoothing std in pixels")
    p_att.add_argument("--weight-by-duration", action="store_true", help="weight impulses by fixation duration")
    p_att.set_defaults(func=cmd_attention)

    p_exp = sub.add_parser("explain", help="generate saliency maps from bundle archives")
    p_exp.add_argument("--method", required=True, choices=METHODS)
    p_exp.add_argument("--bundles", help="directory of bundle archives")
    p_exp.add_argument("--params", help="trained parameter JSON (required for --method hag)")
    p_exp.add_argument("--heatmaps", action="store_true", help="also write PNG renderings")
    p_exp.add_argument("--delta-kernels", action="store_true", help="replace both kernels with identity kernels")
    p_exp.add_argument("--maxmin-norm", action="store_true", help="use max-min per-object normalization")
    p_exp.set_defaults(func=cmd_explain)

    p_tr = sub.add_parser("train", help="cross-validate the learnable parameters")
    p_tr.add_argument("--bundles", help="directory of bundle archives")
    p_tr.add_argument("--attention", help="directory of attention maps (NPY + index.json)")
    p_tr.add_argument("--task", choices=("detection", "classification"))
    p_tr.add_argument("--folds", type=int, help="cross-validation folds (default 5)")
    p_tr.add_argument(
        "--target-resolution",
        choices=("branch", "image"),
        default="branch",
        help="resolution at which targets are compared (default: maximum branch resolution)",
    )
    p_tr.set_defaults(func=cmd_train)

    p_ev = sub.add_parser("eval", help="plausibility (and faithfulness, with a scorer) metrics")
    p_ev.add_argument("--saliency", help="directory of saliency artifacts")
    p_ev.add_argument("--attention", help="directory of attention maps")
    p_ev.add_argument("--scorer", help="scorer endpoint URL (enables deletion/insertion AUC)")
    p_ev.add_argument("--images", help="directory of original images named <image_id>.<ext>")
    p_ev.add_argument("--labels", help="condition label CSV (image_id,occlusion,degradation)")
    p_ev.add_argument("--curves", action="store_true", help="dump per-curve CSV and SVG plots")
    p_ev.set_defaults(func=cmd_eval)

    p_bu = sub.add_parser("bundle", help="bundle archive utilities")
    bu_sub = p_bu.add_subparsers(dest="bundle_command", required=True)
    p_val = bu_sub.add_parser("validate", help="check an archive against the format contract")
    p_val.add_argument("path")
    p_val.set_defaults(func=cmd_bundle_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ScorerError as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
