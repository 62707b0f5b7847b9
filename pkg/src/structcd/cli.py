"""Command-line pipeline: raster -> structure features -> forest -> report.

Subcommands:

* ``features``  write the structure-feature stacks and (r, a, b)/ME maps
* ``train``     fit the random forest from ground truth and save the model
* ``predict``   apply a saved model, writing the change map and mask
* ``evaluate``  score a predicted mask against a reference mask
* ``compare``   run CVA, intensity NCI, the structural features without ME,
                and the full 4-feature pipeline on one scene; emit a table
* ``synth``     render a synthetic scene config to disk

All subcommands share ``--config``, ``--out``, ``--seed`` and ``--threads``.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal error.
Every output an invocation produces is a pure function of (config, flags):
reruns are byte-identical. ``--threads`` is accepted for interface
compatibility; the compute kernels are vectorized and their results never
depend on a thread count. An advisory ``.structcd.lock`` file guards each
output directory against concurrent runs, and a failed run removes the
artifacts it had begun writing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import cva, nci_intensity
from .cfog import FeatureStack, extract_cfog
from .config import PipelineConfig, load_config, scene_config_text
from .evaluation import MetricsReport, confusion, format_table, metrics
from .forest import Forest, load_forest, predict_batch, save_forest, train
from .neighborhood import feature_image, matching_error, nsci
from .raster import (
    BinaryMask,
    MultibandRaster,
    load_mask,
    load_raster,
    save_raster,
    to_intensity,
)
from .synth import acceptance_scene, generate
from .validation import DegenerateTrainingError, ShapeMismatchError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

LOCK_NAME = ".structcd.lock"


class UsageError(Exception):
    """Bad invocation: flags, missing config pieces, unknown subcommand."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract says 1
        raise UsageError(f"{self.prog}: {message}")


class ArtifactSession:
    """Tracks files written into a locked output directory.

    On failure every artifact registered so far is deleted, so a crashed run
    cannot leave a half-written model or feature map behind to poison the
    next one. The advisory lock file blocks two runs from sharing the
    directory.
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self._paths: list[Path] = []
        self._lock_fd = None

    def __enter__(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        lock = self.out_dir / LOCK_NAME
        try:
            self._lock_fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(
                f"output directory {self.out_dir} is locked by another run "
                f"(remove {lock} if that run is dead)"
            ) from None
        return self

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self._paths.append(p)
        return p

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is not None:
                for p in self._paths:
                    try:
                        p.unlink(missing_ok=True)
                    except OSError:
                        pass  # best effort; never mask the original failure
        finally:
            if self._lock_fd is not None:
                os.close(self._lock_fd)
                (self.out_dir / LOCK_NAME).unlink(missing_ok=True)
        return False


def _load_pipeline_inputs(config: PipelineConfig, need_truth: bool):
    """(t1, t2, truth-or-None) from the [input] files or the [scene]."""
    if config.scene is not None:
        t1, t2, truth = generate(config.scene)
    elif config.t1 is not None:
        t1 = load_raster(config.t1)
        t2 = load_raster(config.t2)
        if t1.data.shape != t2.data.shape:
            raise ShapeMismatchError(
                f"t1 {t1.data.shape} and t2 {t2.data.shape} differ in shape"
            )
        truth = None
        if config.truth is not None:
            truth = load_mask(config.truth)
            if (truth.height, truth.width) != (t1.height, t1.width):
                raise ShapeMismatchError("truth mask shape differs from the inputs")
    else:
        raise UsageError("config provides neither [input] files nor a [scene]")
    if need_truth and truth is None:
        raise UsageError("this command needs ground truth ([input] truth or a [scene])")
    return t1, t2, truth


def _structure_stack(raster: MultibandRaster, config: PipelineConfig) -> FeatureStack:
    """Descriptor stack for one raster under the configured band mode."""
    if config.band_mode == "intensity":
        return extract_cfog(to_intensity(raster), config.cfog)
    planes = [
        extract_cfog(raster.band(b), config.cfog).data for b in range(raster.bands)
    ]
    return FeatureStack(np.concatenate(planes, axis=0))


def compute_features(t1: MultibandRaster, t2: MultibandRaster, config: PipelineConfig):
    """(stack1, stack2, NsciMap, MeMap) for a raster pair."""
    stack1 = _structure_stack(t1, config)
    stack2 = _structure_stack(t2, config)
    nsci_map = nsci(stack1, stack2, config.neighborhood)
    if config.template_source == "t1":
        me_map = matching_error(stack1, stack2, config.neighborhood)
    else:
        me_map = matching_error(stack2, stack1, config.neighborhood)
    return stack1, stack2, nsci_map, me_map


def sample_pixel_indices(truth: BinaryMask, per_class: int, seed: int):
    """Stratified without-replacement pixel sample: (flat indices, labels).

    Draws up to ``per_class`` pixels from each class; a class with fewer
    pixels contributes all of them (with a warning on stderr).
    """
    labels = truth.labels.ravel().astype(np.int64)
    rng = np.random.default_rng(seed)
    picked = []
    for cls in (0, 1):
        pool = np.flatnonzero(labels == cls)
        if pool.size == 0:
            raise DegenerateTrainingError(
                f"ground truth has no class-{cls} pixels; cannot train"
            )
        take = min(per_class, pool.size)
        if take < per_class:
            print(
                f"warning: class {cls} has only {pool.size} pixels "
                f"(requested {per_class} per class)",
                file=sys.stderr,
            )
        picked.append(rng.choice(pool, size=take, replace=False))
    sel = np.concatenate(picked)
    return sel, labels[sel]


def sample_training_set(features: np.ndarray, truth: BinaryMask, per_class: int, seed: int):
    """Stratified sample of per-pixel feature rows: (X, y, flat indices)."""
    sel, y = sample_pixel_indices(truth, per_class, seed)
    flat = features.reshape(-1, features.shape[-1])
    return flat[sel], y, sel


def _save_visualization(plane: np.ndarray, lo: float, hi: float, path: Path) -> None:
    """8-bit PNG of a plane on a fixed physical range [lo, hi]."""
    scaled = (plane - lo) * (255.0 / (hi - lo))
    save_raster(MultibandRaster(scaled[np.newaxis]), path, "clamp-to-8bit")


def cmd_features(config: PipelineConfig, out_dir) -> int:
    t1, t2, _ = _load_pipeline_inputs(config, need_truth=False)
    stack1, stack2, nsci_map, me_map = compute_features(t1, t2, config)
    with ArtifactSession(out_dir) as session:
        save_raster(stack1.to_raster(), session.path("cfog_t1.sdf"), "raw-float")
        save_raster(stack2.to_raster(), session.path("cfog_t2.sdf"), "raw-float")
        save_raster(nsci_map.to_raster(), session.path("nsci.sdf"), "raw-float")
        save_raster(me_map.to_raster(), session.path("me.sdf"), "raw-float")
        # visualizations on fixed physical ranges, so an identical pair
        # renders as white correlation / black matching error
        _save_visualization(nsci_map.r, -1.0, 1.0, session.path("nsci_r.png"))
        _save_visualization(
            me_map.me, 0.0, config.neighborhood.me_bound, session.path("me.png")
        )
    print(f"features written to {out_dir}")
    return EXIT_OK


def _train_forest(config: PipelineConfig, X: np.ndarray, y: np.ndarray) -> Forest:
    return train(
        X,
        y,
        trees=config.forest.trees,
        mtry=config.forest.mtry,
        max_depth=config.forest.max_depth,
        min_leaf=config.forest.min_leaf,
        seed=config.forest.seed,
    )


def cmd_train(config: PipelineConfig, out_dir) -> int:
    t1, t2, truth = _load_pipeline_inputs(config, need_truth=True)
    _, _, nsci_map, me_map = compute_features(t1, t2, config)
    features = feature_image(nsci_map, me_map)
    X, y, _ = sample_training_set(
        features, truth, config.sampling.per_class_count, config.sampling.seed
    )
    model = _train_forest(config, X, y)
    accuracy = float((predict_batch(model, X) == y).mean())
    with ArtifactSession(out_dir) as session:
        save_forest(model, session.path("model.sdrf"))
    print(f"trained {model.k} trees on {int((y == 0).sum())} unchanged / "
          f"{int((y == 1).sum())} changed pixels")
    print(f"training accuracy: {accuracy:.4f}")
    print(f"model written to {Path(out_dir) / 'model.sdrf'}")
    return EXIT_OK


def cmd_predict(config: PipelineConfig, model_path, out_dir) -> int:
    model = load_forest(model_path)
    t1, t2, _ = _load_pipeline_inputs(config, need_truth=False)
    _, _, nsci_map, me_map = compute_features(t1, t2, config)
    features = feature_image(nsci_map, me_map)
    if features.shape[-1] != model.n_features:
        raise ShapeMismatchError(
            f"model expects {model.n_features} features, pipeline produced "
            f"{features.shape[-1]}"
        )
    classes = predict_batch(model, features.reshape(-1, features.shape[-1]))
    mask = BinaryMask(classes.reshape(nsci_map.r.shape))
    with ArtifactSession(out_dir) as session:
        save_raster(mask.to_raster(), session.path("change_map.png"), "clamp-to-8bit")
        save_raster(mask.to_raster(), session.path("change_mask.pgm"), "clamp-to-8bit")
    print(f"flagged {mask.changed_count()} of {mask.labels.size} pixels as changed")
    return EXIT_OK


def cmd_evaluate(pred_path, truth_path, out_dir) -> int:
    pred = load_mask(pred_path)
    truth = load_mask(truth_path)
    report = metrics(confusion(pred, truth))
    table = format_table([("prediction", report)])
    print(table, end="")
    print(report.to_json())
    if out_dir is not None:
        with ArtifactSession(out_dir) as session:
            session.path("metrics.json").write_text(
                report.to_json() + "\n", encoding="utf-8"
            )
            session.path("metrics.txt").write_text(table, encoding="utf-8")
    return EXIT_OK


def _row(method: str, report: MetricsReport) -> dict:
    return {"method": method, **json.loads(report.to_json())}


def cmd_compare(config: PipelineConfig, out_dir) -> int:
    t1, t2, truth = _load_pipeline_inputs(config, need_truth=True)
    _, _, nsci_map, me_map = compute_features(t1, t2, config)

    cva_result = cva(t1, t2)
    nci_map = nci_intensity(t1, t2, config.neighborhood.nsci_window)

    full = feature_image(nsci_map, me_map)  # (H, W, 4): r, a, b, ME
    feature_sets = {
        "NCI": np.stack([nci_map.r, nci_map.a, nci_map.b], axis=-1),
        "NSCI": full[..., :3],
        "NSCI+ME": full,
    }

    masks = {"CVA": cva_result.mask}
    # one stratified pixel sample shared by every learned method, so the
    # rows differ only in their features
    sel, y = sample_pixel_indices(
        truth, config.sampling.per_class_count, config.sampling.seed
    )
    for name, feats in feature_sets.items():
        flat = feats.reshape(-1, feats.shape[-1])
        model = _train_forest(config, flat[sel], y)
        classes = predict_batch(model, flat)
        masks[name] = BinaryMask(classes.reshape(truth.labels.shape))

    rows = [
        (name, metrics(confusion(masks[name], truth)))
        for name in ("CVA", "NCI", "NSCI", "NSCI+ME")
    ]
    table = format_table(rows)
    report_json = json.dumps({"rows": [_row(n, r) for n, r in rows]}, indent=2)

    with ArtifactSession(out_dir) as session:
        session.path("compare.txt").write_text(table, encoding="utf-8")
        session.path("compare.json").write_text(report_json + "\n", encoding="utf-8")
        for name, mask in masks.items():
            slug = name.lower().replace("+", "_")
            save_raster(
                mask.to_raster(), session.path(f"mask_{slug}.png"), "clamp-to-8bit"
            )
    print(table, end="")
    return EXIT_OK


def cmd_synth(config: PipelineConfig | None, out_dir, seed: int | None) -> int:
    spec = config.scene if config is not None and config.scene is not None else None
    if spec is None:
        spec = acceptance_scene()
        if seed is not None:
            spec = replace(spec, seed=seed)
    t1, t2, truth = generate(spec)
    with ArtifactSession(out_dir) as session:
        save_raster(t1, session.path("t1.sdf"), "raw-float")
        save_raster(t2, session.path("t2.sdf"), "raw-float")
        save_raster(truth.to_raster(), session.path("truth.pgm"), "clamp-to-8bit")
        # previews reduce to intensity so they exist for any band count
        save_raster(to_intensity(t1), session.path("t1_preview.png"), "normalize-to-8bit")
        save_raster(to_intensity(t2), session.path("t2_preview.png"), "normalize-to-8bit")
        session.path("scene.cfg").write_text(scene_config_text(spec), encoding="utf-8")
    print(
        f"scene written to {out_dir} "
        f"({truth.changed_count()} of {truth.labels.size} pixels changed)"
    )
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="structcd", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--seed", type=int, help="override every configured seed")
    common.add_argument(
        "--threads",
        type=int,
        default=0,
        help="worker threads, 0 = auto (results are identical at any setting)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("features", parents=[common], help="write descriptor and map artifacts")
    sub.add_parser("train", parents=[common], help="fit and save the forest model")
    p_predict = sub.add_parser("predict", parents=[common], help="apply a saved model")
    p_predict.add_argument("model", help="path to an .sdrf model file")
    p_eval = sub.add_parser("evaluate", parents=[common], help="score a mask against truth")
    p_eval.add_argument("pred", help="predicted mask image")
    p_eval.add_argument("truth", help="reference mask image")
    sub.add_parser(
        "compare", parents=[common], help="run all four methods and tabulate metrics"
    )
    sub.add_parser("synth", parents=[common], help="render a synthetic scene to disk")
    return parser


def _resolve_config(args) -> PipelineConfig:
    if args.seed is not None and args.seed < 0:
        raise UsageError("--seed must be >= 0")
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _resolve_out(args, config: PipelineConfig | None) -> str:
    out = args.out or (config.out_dir if config is not None else None)
    if out is None:
        raise UsageError("no output directory: pass --out or set [output] dir")
    return out


def _dispatch(args) -> int:
    if args.command == "evaluate":
        return cmd_evaluate(args.pred, args.truth, args.out)
    config = _resolve_config(args)
    if args.threads < 0:
        raise UsageError("--threads must be >= 0")
    out_dir = _resolve_out(args, config)
    if args.command == "features":
        return cmd_features(config, out_dir)
    if args.command == "train":
        return cmd_train(config, out_dir)
    if args.command == "predict":
        return cmd_predict(config, args.model, out_dir)
    if args.command == "compare":
        return cmd_compare(config, out_dir)
    if args.command == "synth":
        return cmd_synth(config if args.config else None, out_dir, args.seed)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        # covers raster/config format problems, shape mismatches, missing
        # files and degenerate training sets
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort contract boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
