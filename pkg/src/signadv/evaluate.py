"""Success-rate evaluation: stationary condition grids and drive-by sequences.

Counting follows one rule everywhere: a condition pair enters the denominator
iff its clean image classifies as the true class, and enters the numerator
iff additionally its perturbed image classifies as the target (targeted mode)
or as anything but the true class (untargeted mode).  A report with an empty
denominator carries success_rate = None rather than raising; evaluating a bad
classifier should still produce a report.

The drive-by protocol classifies every k-th frame of an approach sequence and
aggregates those frames with the same counting rule.  Frames from separate
recordings are pooled into one count, not averaged per recording.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as model_lib
from .attack import Perturbation
from .errors import ValidationError
from .rng import substream
from .transforms import (
    INSTANCE_SIDE,
    MODEL_SIDE,
    TransformSample,
    WarpPlan,
    crop_resize,
    pose_homography,
    synthesize_instance,
)


@dataclass
class ConditionPair:
    """Clean/perturbed images of the same pose (same condition draw)."""

    clean_image: np.ndarray
    perturbed_image: np.ndarray
    distance_tag: str = ""
    angle_tag: str = ""

    def __post_init__(self):
        c = np.asarray(self.clean_image)
        p = np.asarray(self.perturbed_image)
        if c.shape != p.shape:
            raise ValidationError(
                f"pair images differ in shape: {c.shape} vs {p.shape}"
            )
        if c.ndim != 3 or c.shape[2] != 3:
            raise ValidationError(f"pair images must be [h, w, 3], got {c.shape}")


@dataclass
class PairOutcome:
    """Classifier outcome for one condition pair."""

    distance_tag: str
    angle_tag: str
    clean_label: int
    clean_confidence: float
    perturbed_label: int
    perturbed_confidence: float
    target_confidence: float = 0.0


@dataclass
class EvalReport:
    mode: str  # targeted | untargeted
    true_class: int
    target_class: "int | None"
    numerator: int
    denominator: int
    success_rate: "float | None"
    average_target_confidence: "float | None"
    records: list[PairOutcome] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        body = {
            "schema": "eval-report-v1",
            "mode": self.mode,
            "true_class": self.true_class,
            "target_class": self.target_class,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "success_rate": self.success_rate,
            "average_target_confidence": self.average_target_confidence,
            "per_condition": [
                {
                    "distance_tag": r.distance_tag,
                    "angle_tag": r.angle_tag,
                    "clean_top": [r.clean_label, r.clean_confidence],
                    "perturbed_top": [r.perturbed_label, r.perturbed_confidence],
                }
                for r in self.records
            ],
        }
        body.update(self.extra)
        return body


REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "schema",
        "mode",
        "true_class",
        "target_class",
        "numerator",
        "denominator",
        "success_rate",
        "per_condition",
    ],
    "properties": {
        "schema": {"const": "eval-report-v1"},
        "mode": {"enum": ["targeted", "untargeted"]},
        "true_class": {"type": "integer", "minimum": 0},
        "target_class": {"type": ["integer", "null"]},
        "numerator": {"type": "integer", "minimum": 0},
        "denominator": {"type": "integer", "minimum": 0},
        "success_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "average_target_confidence": {"type": ["number", "null"]},
        "per_condition": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["distance_tag", "angle_tag", "clean_top", "perturbed_top"],
                "properties": {
                    "distance_tag": {"type": "string"},
                    "angle_tag": {"type": "string"},
                    "clean_top": {
                        "type": "array",
                        "prefixItems": [{"type": "integer"}, {"type": "number"}],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "perturbed_top": {
                        "type": "array",
                        "prefixItems": [{"type": "integer"}, {"type": "number"}],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
            },
        },
    },
}


def count_success(
    outcomes: "list[tuple[int, int]]",
    true_class: int,
    target_class: "int | None",
) -> tuple[int, int]:
    """(numerator, denominator) over (clean_label, perturbed_label) pairs.

    Denominator counts pairs whose clean image classified correctly;
    numerator counts those that additionally hit the attack condition.
    """
    numerator = 0
    denominator = 0
    for clean_label, perturbed_label in outcomes:
        if clean_label != true_class:
            continue
        denominator += 1
        if target_class is None:
            if perturbed_label != true_class:
                numerator += 1
        elif perturbed_label == target_class:
            numerator += 1
    return numerator, denominator


def _classify_pairs(pairs, true_class, target_class, params):
    clean = np.stack([np.asarray(p.clean_image) for p in pairs])
    pert = np.stack([np.asarray(p.perturbed_image) for p in pairs])
    c_labels, c_conf, _ = model_lib.predict_batch(params, clean)
    p_labels, p_conf, p_probs = model_lib.predict_batch(params, pert)
    records = []
    for i, pair in enumerate(pairs):
        target_conf = (
            float(p_probs[i, target_class]) if target_class is not None else float(p_conf[i])
        )
        records.append(
            PairOutcome(
                distance_tag=pair.distance_tag,
                angle_tag=pair.angle_tag,
                clean_label=int(c_labels[i]),
                clean_confidence=float(c_conf[i]),
                perturbed_label=int(p_labels[i]),
                perturbed_confidence=float(p_conf[i]),
                target_confidence=target_conf,
            )
        )
    return records


def report_from_records(
    records: "list[PairOutcome]",
    true_class: int,
    target_class: "int | None",
) -> EvalReport:
    numerator, denominator = count_success(
        [(r.clean_label, r.perturbed_label) for r in records], true_class, target_class
    )
    rate = numerator / denominator if denominator > 0 else None
    successes = []
    for r in records:
        if r.clean_label != true_class:
            continue
        hit = (
            r.perturbed_label != true_class
            if target_class is None
            else r.perturbed_label == target_class
        )
        if hit:
            successes.append(r.target_confidence)
    avg_conf = float(np.mean(successes)) if successes else None
    report = EvalReport(
        mode="untargeted" if target_class is None else "targeted",
        true_class=true_class,
        target_class=target_class,
        numerator=numerator,
        denominator=denominator,
        success_rate=rate,
        average_target_confidence=avg_conf,
        records=records,
    )
    if denominator == 0:
        report.extra["status"] = "undefined: no clean image classified as the true class"
    return report


def stationary_success_rate(
    pairs: "list[ConditionPair]",
    true_class: int,
    target_class: "int | None",
    params: model_lib.ModelParameters,
) -> EvalReport:
    """Classify every pair and count per the paired success-rate rule."""
    if not pairs:
        raise ValidationError("stationary evaluation needs at least one pair")
    records = _classify_pairs(pairs, true_class, target_class, params)
    return report_from_records(records, true_class, target_class)


@dataclass(frozen=True)
class DriveByConfig:
    """Synthetic approach: projected scale ramps up monotonically while the
    view angle drifts smoothly inside +-angle_amplitude degrees."""

    frame_count: int = 150
    start_scale: float = 0.15
    end_scale: float = 1.0
    angle_amplitude: float = 10.0
    brightness_jitter: float = 0.1

    def __post_init__(self):
        if self.frame_count < 20:
            raise ValidationError(f"frame_count must be >= 20, got {self.frame_count}")
        if not 0.0 < self.start_scale < self.end_scale <= 1.0:
            raise ValidationError(
                f"need 0 < start_scale < end_scale <= 1, got "
                f"({self.start_scale}, {self.end_scale})"
            )
        if not 0.0 <= self.angle_amplitude <= 45.0:
            raise ValidationError(
                f"angle_amplitude {self.angle_amplitude} outside [0, 45]"
            )
        if not 0.0 <= self.brightness_jitter <= 0.3:
            raise ValidationError(
                f"brightness_jitter {self.brightness_jitter} outside [0, 0.3]"
            )


@dataclass
class FramePair:
    clean: np.ndarray
    perturbed: np.ndarray
    sample: TransformSample
    index: int


def simulate_drive_by(
    canonical_sign: np.ndarray,
    perturbation: Perturbation,
    path_config: DriveByConfig,
    seed: int,
) -> list[FramePair]:
    """Frame pairs of an approach; each pair shares one condition draw, so the
    perturbed frame differs from the clean frame only on the projected sign."""
    canonical = np.asarray(canonical_sign, dtype=np.float32)
    side = canonical.shape[0]
    masked = perturbation.masked_delta()
    if masked.shape[0] != side:
        raise ValidationError(
            f"perturbation side {masked.shape[0]} != canonical side {side}"
        )
    n = path_config.frame_count
    background_id = int(substream(seed, "driveby-scene").integers(0, 2**31))
    frames = []
    for i in range(n):
        t = i / (n - 1)
        rng = substream(seed, "driveby-frame", i)
        scale = path_config.start_scale + t * (path_config.end_scale - path_config.start_scale)
        yaw = path_config.angle_amplitude * np.sin(2.0 * np.pi * (0.25 + 0.5 * t))
        yaw += float(rng.uniform(-1.0, 1.0))
        pitch = float(rng.uniform(-2.0, 2.0))
        center = (0.5 + float(rng.uniform(-0.02, 0.02)), 0.5 + float(rng.uniform(-0.02, 0.02)))
        brightness = float(rng.uniform(-1.0, 1.0)) * path_config.brightness_jitter
        sample = TransformSample(
            homography=pose_homography(float(yaw), pitch, scale, center=center),
            brightness_delta=brightness,
            crop_rect=(0, 0, INSTANCE_SIDE, INSTANCE_SIDE),
            background_id=background_id,
            noise_seed=int(rng.integers(0, 2**63)),
        )
        clean = synthesize_instance(canonical, sample)
        warped = WarpPlan(sample, side).warp(masked.astype(np.float64))
        perturbed = np.clip(clean + warped, 0.0, 1.0).astype(np.float32)
        frames.append(
            FramePair(
                clean=clean,
                perturbed=perturbed,
                sample=sample,
                index=i,
            )
        )
    return frames


def frame_pairs_to_conditions(frames: "list[FramePair]") -> list[ConditionPair]:
    pairs = []
    for f in frames:
        quad = f.sample.projected_quad()
        width = quad[:, 0].max() - quad[:, 0].min()
        pairs.append(
            ConditionPair(
                clean_image=f.clean,
                perturbed_image=f.perturbed,
                distance_tag=f"frame{f.index:03d}",
                angle_tag=f"scale{width / f.sample.instance_side:.2f}",
            )
        )
    return pairs


def drive_by_eval(
    sequence: "list[FramePair] | list[ConditionPair]",
    k: int,
    true_class: int,
    target_class: "int | None",
    params: model_lib.ModelParameters,
) -> EvalReport:
    """Classify every k-th frame (indices 0, k, 2k, ...) and aggregate."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not sequence:
        raise ValidationError("drive-by evaluation needs a non-empty sequence")
    if isinstance(sequence[0], FramePair):
        pairs = frame_pairs_to_conditions(sequence)
    else:
        pairs = list(sequence)
    indices = list(range(0, len(pairs), k))
    if len(indices) < 2:
        warnings.warn(
            f"only {len(indices)} frame(s) sampled at k={k}; rate is noisy",
            stacklevel=2,
        )
    report = stationary_success_rate(
        [pairs[i] for i in indices], true_class, target_class, params
    )
    report.extra["sampled_frame_indices"] = indices
    report.extra["k"] = k
    return report


def randomized_crop_eval(
    pairs: "list[ConditionPair]",
    crop_jitter: float,
    true_class: int,
    target_class: int,
    params: model_lib.ModelParameters,
    seed: int = 0,
) -> tuple[EvalReport, EvalReport]:
    """Re-crop each pair identically with seeded jitter, classify, and report
    (targeted, untargeted) rates.  Zero jitter reduces to the stationary
    evaluation exactly."""
    if not pairs:
        raise ValidationError("crop evaluation needs at least one pair")
    if not 0.0 <= crop_jitter <= 0.2:
        raise ValidationError(f"crop_jitter {crop_jitter} outside [0, 0.2]")
    rng = substream(seed, "crop-eval")
    cropped = []
    for pair in pairs:
        h = pair.clean_image.shape[0]
        w = max(1, round(h * (1.0 - crop_jitter)))
        x = int(rng.integers(0, h - w + 1))
        y = int(rng.integers(0, h - w + 1))
        rect = (x, y, w, w)
        cropped.append(
            ConditionPair(
                clean_image=crop_resize(pair.clean_image, rect, MODEL_SIDE),
                perturbed_image=crop_resize(pair.perturbed_image, rect, MODEL_SIDE),
                distance_tag=pair.distance_tag,
                angle_tag=pair.angle_tag,
            )
        )
    records = _classify_pairs(cropped, true_class, target_class, params)
    targeted = report_from_records(records, true_class, target_class)
    untargeted_records = [
        PairOutcome(**{**r.__dict__, "target_confidence": r.perturbed_confidence})
        for r in records
    ]
    untargeted = report_from_records(untargeted_records, true_class, None)
    for rep in (targeted, untargeted):
        rep.extra["crop_jitter"] = crop_jitter
    return targeted, untargeted


def write_report(report: EvalReport, path: "str | Path") -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    )
