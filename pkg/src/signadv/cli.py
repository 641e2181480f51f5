"""Command-line front end.

Subcommands:

    signadv dataset gen   --per-class N --seed S --out DIR
    signadv train         --data DIR --out model.rpw [--epochs E --seed S]
    signadv attack        --model M --class C [--target T | --untargeted]
                          [--mask auto|PATH] --out DIR [--force]
    signadv eval stationary|driveby|crop ...

A TOML config file (--config) supplies defaults section by section; every
flag overrides its config key.  Unknown config keys are rejected up front.
All randomness descends from one --seed through stable per-module substreams,
and artifacts are byte-identical across re-runs regardless of --threads.

Exit codes: 0 success, 2 usage/validation, 3 numeric failure, 4 premise
violation (clean sign misclassified), 5 I/O or input-schema failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import attack as attack_lib
from . import evaluate as eval_lib
from . import model as model_lib
from . import signs as signs_lib
from .errors import (
    DivergenceError,
    NonFiniteError,
    PremiseError,
    ShapeError,
    ValidationError,
    WeightFormatError,
)
from .rng import derive_seed, substream
from .transforms import DistributionConfig, sample_transform, synthesize_instance

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_PREMISE = 4
EXIT_IO_SCHEMA = 5

KNOWN_CONFIG_KEYS = {
    "dataset": {"per_class", "seed", "side", "out"},
    "train": {"epochs", "batch_size", "learning_rate", "seed", "augmentation"},
    "attack": {
        "lambda",
        "norm",
        "eta",
        "iterations",
        "batch_size",
        "nps_weight",
        "seed",
        "palette",
    },
    "distribution": {
        "scale_range",
        "yaw_range",
        "pitch_range",
        "brightness_range",
        "experimental_fraction",
        "photo_dir",
        "photo_annotations",
    },
    "eval": {"samples", "k", "frame_count", "jitter", "seed"},
}

OUTCOMES_SCHEMA = {
    "type": "object",
    "required": ["true_class", "target_class", "pairs"],
    "properties": {
        "true_class": {"type": "integer", "minimum": 0},
        "target_class": {"type": ["integer", "null"]},
        "pairs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["clean_label", "perturbed_label"],
                "properties": {
                    "clean_label": {"type": "integer", "minimum": 0},
                    "perturbed_label": {"type": "integer", "minimum": 0},
                    "distance_tag": {"type": "string"},
                    "angle_tag": {"type": "string"},
                },
            },
        },
    },
}


class RunConfig:
    """Validated TOML config; flags override these values key by key."""

    def __init__(self, sections: dict):
        for section, keys in sections.items():
            if section not in KNOWN_CONFIG_KEYS:
                raise ValidationError(f"unknown config section [{section}]")
            if not isinstance(keys, dict):
                raise ValidationError(f"config section [{section}] must be a table")
            unknown = set(keys) - KNOWN_CONFIG_KEYS[section]
            if unknown:
                raise ValidationError(
                    f"unknown config keys in [{section}]: {sorted(unknown)}"
                )
        self.sections = sections

    @classmethod
    def load(cls, path: "str | None") -> "RunConfig":
        if path is None:
            return cls({})
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file {path} does not exist")
        with open(p, "rb") as fh:
            return cls(tomllib.load(fh))

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)


def _resolve(flag_value, config: RunConfig, section: str, key: str, default):
    if flag_value is not None:
        return flag_value
    return config.get(section, key, default)


def _info(msg: str) -> None:
    print(msg)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# ---------------------------------------------------------------- dataset


def _split_dir_write(out: Path, name: str, images: np.ndarray, labels: np.ndarray) -> None:
    split_dir = out / name
    split_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i in range(len(images)):
        fname = f"{name}_{i:05d}.png"
        signs_lib.save_png(split_dir / fname, images[i])
        entries[fname] = (int(labels[i]), None)
    signs_lib.write_annotations(split_dir / "labels.tsv", entries)


def cmd_dataset_gen(args) -> int:
    config = RunConfig.load(args.config)
    per_class = _resolve(args.per_class, config, "dataset", "per_class", 100)
    seed = _resolve(args.seed, config, "dataset", "seed", 0)
    side = _resolve(args.side, config, "dataset", "side", 32)
    out = Path(_resolve(args.out, config, "dataset", "out", "dataset"))
    dataset = signs_lib.generate_dataset(per_class, seed, side=side)
    for name in ("train", "val", "test"):
        split = getattr(dataset, name)
        _split_dir_write(out, name, split.images, split.labels)
    manifest = {
        "schema": "sign-dataset-v1",
        "per_class": per_class,
        "seed": seed,
        "side": side,
        "classes": [spec.name for spec in signs_lib.REFERENCE_CLASSES],
    }
    (out / "meta.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    _info(
        f"train={len(dataset.train)} val={len(dataset.val)} test={len(dataset.test)}"
    )
    return EXIT_OK


def _load_split(data_dir: Path, name: str) -> signs_lib.LabeledImages:
    split_dir = data_dir / name
    labels_file = split_dir / "labels.tsv"
    if not split_dir.is_dir() or not labels_file.exists():
        raise WeightFormatError(f"dataset split {split_dir} missing or has no labels.tsv")
    result = signs_lib.load_image_folder(split_dir, labels_file)
    for message in result.warnings:
        _warn(f"{name}: {message}")
    if not result.records:
        raise WeightFormatError(f"dataset split {split_dir} holds no labeled images")
    images = np.stack([r.image for r in result.records])
    labels = np.asarray([r.class_label for r in result.records], dtype=np.int64)
    return signs_lib.LabeledImages(images, labels)


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise WeightFormatError(f"data directory {data_dir} does not exist")
    dataset = signs_lib.Dataset(
        train=_load_split(data_dir, "train"),
        val=_load_split(data_dir, "val"),
        test=_load_split(data_dir, "test"),
    )
    train_config = model_lib.TrainConfig(
        epochs=_resolve(args.epochs, config, "train", "epochs", 15),
        batch_size=_resolve(args.batch_size, config, "train", "batch_size", 64),
        learning_rate=_resolve(args.learning_rate, config, "train", "learning_rate", 1e-3),
        seed=_resolve(args.seed, config, "train", "seed", 0),
        augmentation=bool(_resolve(None, config, "train", "augmentation", False) or args.augment),
    )
    params, metrics = model_lib.train(dataset, train_config)
    for m in metrics:
        _info(f"epoch {m.epoch}: train_loss={m.train_loss:.4f} val_accuracy={m.val_accuracy:.4f}")
    acc = model_lib.accuracy(params, dataset.test.images, dataset.test.labels)
    model_lib.save_weights(params, args.out)
    _info(f"test_accuracy={acc:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------- attack


def _load_photos(config: RunConfig):
    photo_dir = config.get("distribution", "photo_dir")
    annotations = config.get("distribution", "photo_annotations")
    if photo_dir is None:
        return ()
    if annotations is None:
        raise ValidationError("distribution.photo_dir requires photo_annotations")
    result = signs_lib.load_image_folder(photo_dir, annotations)
    for message in result.warnings:
        _warn(f"photos: {message}")
    photos = []
    for rec in result.records:
        if rec.corners is None:
            _warn(f"photos: {rec.filename} has no corner annotation, skipped")
            continue
        if rec.image.shape[0] != rec.image.shape[1]:
            _warn(f"photos: {rec.filename} is not square, skipped")
            continue
        photos.append((rec.image, rec.corners))
    return tuple(photos)


def _distribution_from_config(config: RunConfig) -> DistributionConfig:
    def pair(key, default):
        value = config.get("distribution", key, default)
        if len(value) != 2:
            raise ValidationError(f"distribution.{key} must be a 2-element range")
        return (float(value[0]), float(value[1]))

    photos = _load_photos(config)
    fraction = float(config.get("distribution", "experimental_fraction", 0.5 if photos else 0.0))
    return DistributionConfig(
        scale_range=pair("scale_range", (0.3, 1.0)),
        yaw_range=pair("yaw_range", (-60.0, 60.0)),
        pitch_range=pair("pitch_range", (-15.0, 15.0)),
        brightness_range=pair("brightness_range", (-0.3, 0.3)),
        experimental_fraction=fraction,
        photos=photos,
    )


def _attack_config(args, config: RunConfig, target_class) -> attack_lib.AttackConfig:
    palette_path = _resolve(args.palette, config, "attack", "palette", None)
    palette = attack_lib.load_palette(palette_path) if palette_path else attack_lib.DEFAULT_PALETTE
    return attack_lib.AttackConfig(
        lam=_resolve(args.lam, config, "attack", "lambda", attack_lib.L2_STAGE_LAMBDA),
        norm=_resolve(args.norm, config, "attack", "norm", "L2"),
        eta=_resolve(args.eta, config, "attack", "eta", 0.1),
        iterations=_resolve(args.iterations, config, "attack", "iterations", 500),
        batch_size=_resolve(args.batch_size, config, "attack", "batch_size", 16),
        target_class=target_class,
        nps_weight=_resolve(args.nps_weight, config, "attack", "nps_weight", 1.0),
        distribution=_distribution_from_config(config),
        palette=palette,
        seed=_resolve(args.seed, config, "attack", "seed", 0),
    )


def _canonical_for(true_class: int, side: int, seed: int) -> np.ndarray:
    spec = signs_lib.REFERENCE_CLASSES[true_class]
    return signs_lib.render_sign(spec, side, derive_seed(seed, "canonical-bg", true_class))


def _check_class(value: int, name: str) -> int:
    if not 0 <= value < len(signs_lib.REFERENCE_CLASSES):
        raise ValidationError(
            f"{name} {value} outside [0, {len(signs_lib.REFERENCE_CLASSES)})"
        )
    return value


def cmd_attack(args) -> int:
    config = RunConfig.load(args.config)
    if args.untargeted and args.target is not None:
        raise ValidationError("--target and --untargeted are mutually exclusive")
    if not args.untargeted and args.target is None:
        raise ValidationError("attack needs --target CLASS or --untargeted")
    true_class = _check_class(args.true_class, "--class")
    target_class = None if args.untargeted else _check_class(args.target, "--target")
    if target_class == true_class:
        raise ValidationError("--target must differ from --class")
    params = model_lib.load_weights(args.model)
    attack_config = _attack_config(args, config, target_class)
    side = params.input_side
    canonical = _canonical_for(true_class, side, attack_config.seed)

    label, confidence = attack_lib.canonical_prediction(params, canonical)
    if label != true_class:
        if not args.force:
            raise PremiseError(
                f"clean sign classifies as {label} (conf {confidence:.3f}), not "
                f"{true_class}; success-rate denominators would be empty. "
                "Pass --force to attack anyway."
            )
        _warn(f"clean sign classifies as {label}, continuing under --force")

    region = signs_lib.sign_region_mask(signs_lib.REFERENCE_CLASSES[true_class], side)
    if args.mask == "auto":
        _info("discovering sticker mask (L1 stage)")
        mask = attack_lib.discover_mask(
            canonical, true_class, params, attack_config,
            sign_region=region, threads=args.threads,
        )
    elif args.mask is not None:
        with Image.open(args.mask) as im:
            grid = np.asarray(im.convert("L")) > 127
        if grid.shape != (side, side):
            raise ValidationError(f"mask {args.mask} is {grid.shape}, model wants {(side, side)}")
        if not grid.any():
            raise ValidationError(f"empty mask: {args.mask} selects no pixels")
        mask = attack_lib.Mask(grid.astype(np.float32))
    else:
        mask = attack_lib.region_mask(region)

    perturbation, trace = attack_lib.run_attack(
        canonical, true_class, params, mask, attack_config, threads=args.threads
    )

    out = Path(args.out)
    meta = {
        "true_class": true_class,
        "seed": attack_config.seed,
        "eta": attack_config.eta,
        "iterations": attack_config.iterations,
        "batch_size": attack_config.batch_size,
        "nps_weight": attack_config.nps_weight,
        "canonical_side": side,
        "mask_mode": args.mask or "sign-region",
        "probe_success": trace.best_probe_success,
        "best_step": trace.best_step,
        "model_path": str(args.model),
        "distribution": {
            "scale_range": list(attack_config.distribution.scale_range),
            "yaw_range": list(attack_config.distribution.yaw_range),
            "pitch_range": list(attack_config.distribution.pitch_range),
            "brightness_range": list(attack_config.distribution.brightness_range),
            "experimental_fraction": attack_config.distribution.experimental_fraction,
        },
    }
    attack_lib.save_perturbation(out, perturbation, meta)
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "loss", "norm_term", "nps_term", "expectation_term", "probe_success"]
        )
        for r in trace.records:
            writer.writerow(
                [
                    r.step,
                    repr(r.loss),
                    repr(r.norm_term),
                    repr(r.nps_term),
                    repr(r.expectation_term),
                    "" if r.probe_success is None else repr(r.probe_success),
                ]
            )
    _info(f"mask_coverage={perturbation.mask.coverage:.4f}")
    _info(f"probe_success={trace.best_probe_success:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------- eval


def _load_attack_artifacts(args):
    perturbation, meta = attack_lib.load_perturbation(args.attack)
    params = model_lib.load_weights(args.model)
    true_class = args.true_class if args.true_class is not None else meta.get("true_class")
    if true_class is None:
        raise ValidationError("true class not in meta.json; pass --class")
    true_class = _check_class(int(true_class), "--class")
    if args.untargeted:
        target_class = None
    elif args.target is not None:
        target_class = _check_class(args.target, "--target")
    else:
        target_class = perturbation.target_class
    seed = meta.get("seed", 0)
    side = int(meta.get("canonical_side", params.input_side))
    canonical = _canonical_for(true_class, side, int(seed))
    return perturbation, meta, params, true_class, target_class, canonical


def _fresh_pairs(canonical, perturbation, distribution, count, seed):
    rng = substream(seed, "eval-pairs")
    pairs = []
    for i in range(count):
        sample = sample_transform(distribution, rng)
        clean = synthesize_instance(canonical, sample)
        perturbed = attack_lib.apply_perturbation(clean, perturbation, sample=sample)
        quad = sample.projected_quad()
        width = (quad[:, 0].max() - quad[:, 0].min()) / sample.instance_side
        pairs.append(
            eval_lib.ConditionPair(
                clean_image=clean,
                perturbed_image=perturbed,
                distance_tag=f"draw{i:03d}",
                angle_tag=f"scale{width:.2f}",
            )
        )
    return pairs


def _distribution_from_meta(meta: dict) -> DistributionConfig:
    dist = meta.get("distribution")
    if not dist:
        return DistributionConfig()
    return DistributionConfig(
        scale_range=tuple(dist["scale_range"]),
        yaw_range=tuple(dist["yaw_range"]),
        pitch_range=tuple(dist["pitch_range"]),
        brightness_range=tuple(dist["brightness_range"]),
    )


def _print_and_write(report: eval_lib.EvalReport, out_path: "str | None") -> None:
    if out_path:
        eval_lib.write_report(report, out_path)
    rate = report.success_rate
    _info("success_rate=undefined" if rate is None else f"success_rate={rate:.2f}")


def cmd_eval_stationary(args) -> int:
    config = RunConfig.load(args.config)
    if args.outcomes:
        raw = Path(args.outcomes).read_text()
        table = json.loads(raw)
        jsonschema.validate(table, OUTCOMES_SCHEMA)
        true_class = table["true_class"]
        target_class = table["target_class"]
        outcomes = [(p["clean_label"], p["perturbed_label"]) for p in table["pairs"]]
        numerator, denominator = eval_lib.count_success(outcomes, true_class, target_class)
        report = eval_lib.EvalReport(
            mode="untargeted" if target_class is None else "targeted",
            true_class=true_class,
            target_class=target_class,
            numerator=numerator,
            denominator=denominator,
            success_rate=numerator / denominator if denominator else None,
            average_target_confidence=None,
            extra={"source": "outcome-table", "pair_count": len(outcomes)},
        )
        _print_and_write(report, args.out)
        return EXIT_OK
    if not args.attack or not args.model:
        raise ValidationError("eval stationary needs --attack and --model (or --outcomes)")
    perturbation, meta, params, true_class, target_class, canonical = _load_attack_artifacts(args)
    samples = _resolve(args.samples, config, "eval", "samples", 256)
    seed = _resolve(args.seed, config, "eval", "seed", 0)
    pairs = _fresh_pairs(
        canonical, perturbation, _distribution_from_meta(meta), samples, seed
    )
    report = eval_lib.stationary_success_rate(pairs, true_class, target_class, params)
    _print_and_write(report, args.out)
    return EXIT_OK


def _load_frame_pairs(frames_dir: Path) -> list:
    clean_files = sorted(frames_dir.glob("*_clean.png"))
    if not clean_files:
        raise WeightFormatError(f"no *_clean.png frames under {frames_dir}")
    pairs = []
    for clean_path in clean_files:
        stem = clean_path.name[: -len("_clean.png")]
        perturbed_path = frames_dir / f"{stem}_perturbed.png"
        if not perturbed_path.exists():
            raise WeightFormatError(f"frame {stem} has no perturbed image")
        pairs.append(
            eval_lib.ConditionPair(
                clean_image=signs_lib.load_png(clean_path),
                perturbed_image=signs_lib.load_png(perturbed_path),
                distance_tag=stem,
                angle_tag="",
            )
        )
    return pairs


def cmd_eval_driveby(args) -> int:
    config = RunConfig.load(args.config)
    if bool(args.simulate) == bool(args.frames):
        raise ValidationError("pass exactly one of --simulate or --frames DIR")
    perturbation, meta, params, true_class, target_class, canonical = _load_attack_artifacts(args)
    k = _resolve(args.k, config, "eval", "k", 10)
    seed = _resolve(args.seed, config, "eval", "seed", 0)
    if args.simulate:
        frame_count = _resolve(args.frame_count, config, "eval", "frame_count", 150)
        sequence = eval_lib.simulate_drive_by(
            canonical, perturbation, eval_lib.DriveByConfig(frame_count=frame_count), seed
        )
        if args.dump_frames:
            dump = Path(args.dump_frames)
            dump.mkdir(parents=True, exist_ok=True)
            for f in sequence:
                signs_lib.save_png(dump / f"frame{f.index:03d}_clean.png", f.clean)
                signs_lib.save_png(dump / f"frame{f.index:03d}_perturbed.png", f.perturbed)
    else:
        sequence = _load_frame_pairs(Path(args.frames))
    report = eval_lib.drive_by_eval(sequence, k, true_class, target_class, params)
    _print_and_write(report, args.out)
    return EXIT_OK


def cmd_eval_crop(args) -> int:
    config = RunConfig.load(args.config)
    perturbation, meta, params, true_class, target_class, canonical = _load_attack_artifacts(args)
    if target_class is None:
        raise ValidationError("crop evaluation reports both modes; it needs a --target")
    samples = _resolve(args.samples, config, "eval", "samples", 128)
    seed = _resolve(args.seed, config, "eval", "seed", 0)
    jitter = _resolve(args.jitter, config, "eval", "jitter", 0.1)
    pairs = _fresh_pairs(
        canonical, perturbation, _distribution_from_meta(meta), samples, seed
    )
    targeted, untargeted = eval_lib.randomized_crop_eval(
        pairs, jitter, true_class, target_class, params, seed=seed
    )
    if args.out:
        Path(args.out).write_text(
            json.dumps(
                {
                    "schema": "crop-eval-v1",
                    "targeted": targeted.to_json_dict(),
                    "untargeted": untargeted.to_json_dict(),
                },
                sort_keys=True,
                indent=2,
            )
            + "\n"
        )
    for name, report in (("targeted", targeted), ("untargeted", untargeted)):
        rate = report.success_rate
        _info(
            f"{name}_success_rate=undefined"
            if rate is None
            else f"{name}_success_rate={rate:.2f}"
        )
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--threads", type=int, default=1, help="worker thread bound")


def _add_eval_common(parser: argparse.ArgumentParser) -> None:
    _add_common(parser)
    parser.add_argument("--model", help="RPW1 weights file")
    parser.add_argument("--attack", help="perturbation archive directory")
    parser.add_argument("--class", dest="true_class", type=int, help="true class id")
    parser.add_argument("--target", type=int, help="target class id")
    parser.add_argument("--untargeted", action="store_true")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="report JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signadv",
        description="Robust sign perturbation synthesis and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    dataset = sub.add_parser("dataset", help="procedural dataset tools")
    dataset_sub = dataset.add_subparsers(dest="dataset_command", required=True)
    gen = dataset_sub.add_parser("gen", help="generate a PNG dataset")
    _add_common(gen)
    gen.add_argument("--per-class", type=int, dest="per_class")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--side", type=int)
    gen.add_argument("--out")
    gen.set_defaults(func=cmd_dataset_gen)

    train = sub.add_parser("train", help="train the classifier")
    _add_common(train)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int, dest="batch_size")
    train.add_argument("--learning-rate", type=float, dest="learning_rate")
    train.add_argument("--seed", type=int)
    train.add_argument("--augment", action="store_true")
    train.set_defaults(func=cmd_train)

    atk = sub.add_parser("attack", help="synthesize a robust perturbation")
    _add_common(atk)
    atk.add_argument("--model", required=True)
    atk.add_argument("--class", dest="true_class", type=int, required=True)
    atk.add_argument("--target", type=int)
    atk.add_argument("--untargeted", action="store_true")
    atk.add_argument("--mask", help='"auto" for two-stage discovery, or a mask PNG path')
    atk.add_argument("--lambda", dest="lam", type=float)
    atk.add_argument("--norm", choices=["L1", "L2"])
    atk.add_argument("--eta", type=float)
    atk.add_argument("--iterations", type=int)
    atk.add_argument("--batch-size", dest="batch_size", type=int)
    atk.add_argument("--nps-weight", dest="nps_weight", type=float)
    atk.add_argument("--palette", help="text palette file")
    atk.add_argument("--seed", type=int)
    atk.add_argument("--out", required=True)
    atk.add_argument("--force", action="store_true",
                     help="attack even if the clean sign is misclassified")
    atk.set_defaults(func=cmd_attack)

    ev = sub.add_parser("eval", help="success-rate evaluation")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)

    stationary = ev_sub.add_parser("stationary", help="fresh condition draws")
    _add_eval_common(stationary)
    stationary.add_argument("--samples", type=int)
    stationary.add_argument("--outcomes", help="pre-recorded outcome table JSON")
    stationary.set_defaults(func=cmd_eval_stationary)

    driveby = ev_sub.add_parser("driveby", help="approach sequence, every k-th frame")
    _add_eval_common(driveby)
    driveby.add_argument("--k", type=int)
    driveby.add_argument("--simulate", action="store_true")
    driveby.add_argument("--frames", help="directory of *_clean.png/*_perturbed.png")
    driveby.add_argument("--frame-count", dest="frame_count", type=int)
    driveby.add_argument("--dump-frames", dest="dump_frames")
    driveby.set_defaults(func=cmd_eval_driveby)

    crop = ev_sub.add_parser("crop", help="randomized-crop robustness")
    _add_eval_common(crop)
    crop.add_argument("--samples", type=int)
    crop.add_argument("--jitter", type=float)
    crop.set_defaults(func=cmd_eval_crop)

    return parser


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PremiseError as exc:
        print(f"premise violation: {exc}", file=sys.stderr)
        return EXIT_PREMISE
    except jsonschema.exceptions.ValidationError as exc:
        print(f"schema error: {exc.message}", file=sys.stderr)
        return EXIT_IO_SCHEMA
    except (WeightFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
