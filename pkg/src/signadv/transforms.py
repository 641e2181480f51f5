"""Physical-condition distribution and perturbation alignment.

A TransformSample captures one draw of viewing conditions: a plane homography
from the canonical sign frame into an instance frame (both in unit
coordinates), plus brightness shift, sensor noise seed, crop rectangle, and
background selector.  synthesize_instance renders the sign as it would appear
under those conditions; warp_perturbation pushes a canonical-frame
perturbation through the identical geometric chain.

The geometric chain is linear in the pixel values, so its gradient is an
exact adjoint: every stage is a sparse gather (4 taps per output pixel), and
the adjoint is the corresponding scatter with transposed weights.

Synthetic homographies come from a pinhole construction: rotate the unit
square in 3D about its center (yaw then pitch), push it to distance 1/scale
along the optical axis, project at unit focal length, and fit the projective
map from the four corner correspondences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ValidationError
from .geometry import (
    apply_homography,
    clip_polygon_to_rect,
    homography_from_points,
    invert_homography,
    polygon_area,
)
from .rng import substream
from .signs import CornerAnnotation

INSTANCE_SIDE = 64  # frame synthetic instances are composed in before crop/resize
MODEL_SIDE = 32
MIN_CANONICAL_SIDE = 8
MIN_CROP_COVERAGE = 0.6  # crop must keep this fraction of the projected sign quad
CROP_SCALE_RANGE = (0.75, 1.0)
NOISE_SIGMA = 0.01

UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class TransformSample:
    """One draw from the viewing-condition distribution.

    homography maps canonical sign frame -> instance frame, both in unit
    coordinates, with the last entry normalized to 1.  crop_rect is
    (x, y, w, h) in instance pixels.  For experimental samples the instance
    is the annotated photograph itself (carried in `photo`), and
    background_id doubles as the photo's index in the source list.
    """

    homography: np.ndarray
    brightness_delta: float
    crop_rect: tuple[int, int, int, int]
    background_id: int
    noise_seed: int
    source: str = "synthetic"
    instance_side: int = INSTANCE_SIDE
    noise_sigma: float = NOISE_SIGMA
    photo: "np.ndarray | None" = None

    def __post_init__(self):
        h = np.asarray(self.homography, dtype=np.float64)
        if h.shape != (3, 3):
            raise ValidationError(f"homography must be 3x3, got {h.shape}")
        if abs(np.linalg.det(h)) <= 1e-6:
            raise ValidationError("homography is not invertible")
        if abs(h[2, 2] - 1.0) > 1e-9:
            raise ValidationError("homography last entry must be normalized to 1")
        object.__setattr__(self, "homography", h)
        if not -0.3 <= self.brightness_delta <= 0.3:
            raise ValidationError(
                f"brightness_delta {self.brightness_delta} outside [-0.3, 0.3]"
            )
        if self.source not in ("synthetic", "experimental"):
            raise ValidationError(f"unknown source {self.source!r}")
        if self.instance_side < MODEL_SIDE:
            raise ValidationError(
                f"instance_side must be >= {MODEL_SIDE}, got {self.instance_side}"
            )
        if self.noise_sigma < 0.0:
            raise ValidationError("noise_sigma must be non-negative")
        if self.source == "experimental":
            if self.photo is None:
                raise ValidationError("experimental sample requires a photo")
            p = np.asarray(self.photo)
            if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3:
                raise ValidationError(f"photo must be square [P, P, 3], got {p.shape}")
            if p.shape[0] != self.instance_side:
                raise ValidationError(
                    f"photo side {p.shape[0]} != instance_side {self.instance_side}"
                )
        x, y, w, h_ = self.crop_rect
        n = self.instance_side
        if w < 1 or h_ < 1 or x < 0 or y < 0 or x + w > n or y + h_ > n:
            raise ValidationError(f"crop_rect {self.crop_rect} outside {n}x{n} instance")
        cov = self.crop_coverage()
        if cov < MIN_CROP_COVERAGE - 1e-9:
            raise ValidationError(
                f"crop covers {cov:.3f} of the projected sign, need >= {MIN_CROP_COVERAGE}"
            )

    def projected_quad(self) -> np.ndarray:
        """Sign-frame corners mapped into instance pixels, [4, 2]."""
        return apply_homography(self.homography, UNIT_CORNERS) * self.instance_side

    def crop_coverage(self) -> float:
        quad = self.projected_quad()
        total = polygon_area(quad)
        if total <= 0.0:
            return 0.0
        x, y, w, h = self.crop_rect
        kept = clip_polygon_to_rect(quad, x, y, x + w, y + h)
        if len(kept) < 3:
            return 0.0
        return polygon_area(kept) / total


@dataclass(frozen=True)
class DistributionConfig:
    """Ranges for the synthetic condition draws plus the experimental photo mix.

    scale_range is the projected size of the sign relative to the instance
    frame; yaw/pitch are plane rotations out of the image in degrees.  When
    annotated photos are present, experimental_fraction of the draws reuse a
    photo with its annotation-fitted homography instead of a synthetic pose.
    """

    scale_range: tuple[float, float] = (0.3, 1.0)
    yaw_range: tuple[float, float] = (-60.0, 60.0)
    pitch_range: tuple[float, float] = (-15.0, 15.0)
    brightness_range: tuple[float, float] = (-0.3, 0.3)
    experimental_fraction: float = 0.0
    photos: tuple[tuple[np.ndarray, CornerAnnotation], ...] = ()

    def __post_init__(self):
        for name, (lo, hi) in (
            ("scale_range", self.scale_range),
            ("yaw_range", self.yaw_range),
            ("pitch_range", self.pitch_range),
            ("brightness_range", self.brightness_range),
        ):
            if not lo <= hi:
                raise ValidationError(f"{name} has lo > hi: ({lo}, {hi})")
        if not (0.0 < self.scale_range[0] and self.scale_range[1] <= 1.0):
            raise ValidationError(f"scale_range {self.scale_range} outside (0, 1]")
        for name, rng_ in (("yaw_range", self.yaw_range), ("pitch_range", self.pitch_range)):
            if rng_[0] < -85.0 or rng_[1] > 85.0:
                raise ValidationError(f"{name} {rng_} outside [-85, 85] degrees")
        if self.brightness_range[0] < -0.3 or self.brightness_range[1] > 0.3:
            raise ValidationError(
                f"brightness_range {self.brightness_range} outside [-0.3, 0.3]"
            )
        if not 0.0 <= self.experimental_fraction <= 1.0:
            raise ValidationError(
                f"experimental_fraction {self.experimental_fraction} outside [0, 1]"
            )
        if self.experimental_fraction > 0.0 and not self.photos:
            raise ValidationError("experimental_fraction > 0 but no annotated photos")
        for i, (photo, corners) in enumerate(self.photos):
            p = np.asarray(photo)
            if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3:
                raise ValidationError(f"photo {i} must be square [P, P, 3], got {p.shape}")
            if p.shape[0] < MODEL_SIDE:
                raise ValidationError(f"photo {i} side {p.shape[0]} < {MODEL_SIDE}")
            if not isinstance(corners, CornerAnnotation):
                raise ValidationError(f"photo {i} lacks a corner annotation")


def _rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    cy, sy = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    cp, sp = math.cos(math.radians(pitch_deg)), math.sin(math.radians(pitch_deg))
    r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return r_pitch @ r_yaw


def pose_homography(yaw_deg: float, pitch_deg: float, scale: float,
                    center: "tuple[float, float] | None" = None) -> np.ndarray:
    """Pinhole homography for a unit square rotated in 3D and viewed head-on.

    The square sits at distance 1/scale on the optical axis, so a frontal
    view occupies `scale` of the unit instance frame.  If the rotated square
    projects wider than the frame, focal length shrinks to fit.  Returns the
    canonical-unit -> instance-unit map with last entry 1.
    """
    if not 0.0 < scale <= 1.0:
        raise ValidationError(f"scale {scale} outside (0, 1]")
    rot = _rotation(yaw_deg, pitch_deg)
    centered = np.concatenate([UNIT_CORNERS - 0.5, np.zeros((4, 1))], axis=1)
    pts3 = centered @ rot.T
    depth = pts3[:, 2] + 1.0 / scale
    if np.any(depth <= 1e-3):
        raise ValidationError("pose puts sign corners behind the camera")
    proj = pts3[:, :2] / depth[:, None]
    extent = proj.max(axis=0) - proj.min(axis=0)
    fit = min(1.0, 1.0 / max(extent.max(), 1e-9))
    proj = proj * fit
    if center is None:
        center = (0.5, 0.5)
    lo = -proj.min(axis=0)
    hi = 1.0 - proj.max(axis=0)
    cx = min(max(center[0], lo[0]), hi[0])
    cy = min(max(center[1], lo[1]), hi[1])
    dst = proj + np.array([cx, cy])
    return homography_from_points(UNIT_CORNERS, dst)


def annotation_homography(corners: CornerAnnotation, photo_side: int) -> np.ndarray:
    """Canonical-unit -> photo-unit map fitted to annotated sign corners."""
    dst = corners.as_array() / float(photo_side)
    return homography_from_points(UNIT_CORNERS, dst)


def _sample_crop(rng: np.random.Generator, homography: np.ndarray,
                 instance_side: int) -> tuple[int, int, int, int]:
    # rejection-sample until the crop keeps enough of the projected sign;
    # the full frame always qualifies, so fall back to it
    n = instance_side
    quad = apply_homography(homography, UNIT_CORNERS) * n
    total = polygon_area(quad)
    lo, hi = CROP_SCALE_RANGE
    for _ in range(20):
        w = max(1, round(n * rng.uniform(lo, hi)))
        h = max(1, round(n * rng.uniform(lo, hi)))
        x = int(rng.integers(0, n - w + 1))
        y = int(rng.integers(0, n - h + 1))
        kept = clip_polygon_to_rect(quad, x, y, x + w, y + h)
        if len(kept) >= 3 and polygon_area(kept) >= MIN_CROP_COVERAGE * total:
            return (x, y, w, h)
    return (0, 0, n, n)


def sample_transform(config: DistributionConfig, rng: np.random.Generator) -> TransformSample:
    """Draw one viewing condition; experimental draws reuse an annotated photo."""
    use_photo = (
        config.experimental_fraction > 0.0
        and len(config.photos) > 0
        and rng.uniform() < config.experimental_fraction
    )
    if use_photo:
        idx = int(rng.integers(0, len(config.photos)))
        photo, corners = config.photos[idx]
        photo = np.asarray(photo, dtype=np.float32)
        side = photo.shape[0]
        homography = annotation_homography(corners, side)
        brightness = float(rng.uniform(*config.brightness_range))
        crop = _sample_crop(rng, homography, side)
        noise_seed = int(rng.integers(0, 2**63))
        return TransformSample(
            homography=homography,
            brightness_delta=brightness,
            crop_rect=crop,
            background_id=idx,
            noise_seed=noise_seed,
            source="experimental",
            instance_side=side,
            photo=photo,
        )
    yaw = float(rng.uniform(*config.yaw_range))
    pitch = float(rng.uniform(*config.pitch_range))
    scale = float(rng.uniform(*config.scale_range))
    # translation drawn inside the frame-feasible interval for this pose
    center = (float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)))
    homography = pose_homography(yaw, pitch, scale, center=center)
    brightness = float(rng.uniform(*config.brightness_range))
    crop = _sample_crop(rng, homography, INSTANCE_SIDE)
    background_id = int(rng.integers(0, 2**31))
    noise_seed = int(rng.integers(0, 2**63))
    return TransformSample(
        homography=homography,
        brightness_delta=brightness,
        crop_rect=crop,
        background_id=background_id,
        noise_seed=noise_seed,
        source="synthetic",
        instance_side=INSTANCE_SIDE,
    )


def identity_sample(instance_side: int = INSTANCE_SIDE) -> TransformSample:
    """Identity homography, zero brightness and noise, full-frame crop."""
    return TransformSample(
        homography=np.eye(3),
        brightness_delta=0.0,
        crop_rect=(0, 0, instance_side, instance_side),
        background_id=0,
        noise_seed=0,
        instance_side=instance_side,
        noise_sigma=0.0,
    )


class _Resample:
    """Sparse 4-tap bilinear gather with an exact scatter adjoint.

    idx holds flattened source indices [n_out, 4]; wts the matching weights.
    Out-of-range taps are either clamped to the border (pad="clamp") or given
    zero weight (pad="zero").
    """

    def __init__(self, src_hw: tuple[int, int], dst_hw: tuple[int, int],
                 src_x: np.ndarray, src_y: np.ndarray, pad: str,
                 gate: "np.ndarray | None" = None):
        sh, sw = src_hw
        x0 = np.floor(src_x).astype(np.int64)
        y0 = np.floor(src_y).astype(np.int64)
        fx = src_x - x0
        fy = src_y - y0
        xs = np.stack([x0, x0 + 1, x0, x0 + 1], axis=-1)
        ys = np.stack([y0, y0, y0 + 1, y0 + 1], axis=-1)
        wts = np.stack(
            [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1
        )
        valid = (xs >= 0) & (xs < sw) & (ys >= 0) & (ys < sh)
        if pad == "zero":
            wts = wts * valid
        elif pad != "clamp":
            raise ValueError(f"unknown pad mode {pad!r}")
        if gate is not None:
            wts = wts * gate[..., None]
        xs = np.clip(xs, 0, sw - 1)
        ys = np.clip(ys, 0, sh - 1)
        self.src_hw = src_hw
        self.dst_hw = dst_hw
        self.idx = (ys * sw + xs).reshape(-1, 4)
        self.wts = wts.reshape(-1, 4)

    def forward(self, src: np.ndarray) -> np.ndarray:
        flat = src.reshape(-1, src.shape[-1])
        out = np.einsum("ok,okc->oc", self.wts, flat[self.idx].astype(np.float64))
        return out.reshape(*self.dst_hw, src.shape[-1]).astype(src.dtype)

    def adjoint(self, grad_out: np.ndarray) -> np.ndarray:
        channels = grad_out.shape[-1]
        acc = np.zeros((self.src_hw[0] * self.src_hw[1], channels), dtype=np.float64)
        contrib = grad_out.reshape(-1, 1, channels) * self.wts[..., None]
        # np.add.at applies updates in index order, so accumulation is
        # deterministic regardless of duplicate targets
        np.add.at(acc, self.idx.reshape(-1), contrib.reshape(-1, channels))
        return acc.reshape(*self.src_hw, channels).astype(grad_out.dtype)


def _instance_grid(instance_side: int, homography: np.ndarray):
    n = instance_side
    cx = (np.arange(n) + 0.5) / n
    u, v = np.meshgrid(cx, cx, indexing="xy")
    pts = np.stack([u.ravel(), v.ravel()], axis=1)
    src = apply_homography(invert_homography(homography), pts)
    return src[:, 0].reshape(n, n), src[:, 1].reshape(n, n)


def _crop_grid(crop_rect, out_side: int):
    x, y, w, h = crop_rect
    bx = x + (np.arange(out_side) + 0.5) * (w / out_side) - 0.5
    by = y + (np.arange(out_side) + 0.5) * (h / out_side) - 0.5
    return np.meshgrid(bx, by, indexing="xy")


class WarpPlan:
    """Precomputed two-stage chain: homography resample, then crop + resize.

    Stage A maps the canonical frame into the instance frame; a gate zeroes
    every output pixel whose center falls outside the canonical unit square,
    which is what keeps perturbations off the background.  Stage B is the
    crop-then-resize of the instance frame down to the model input.
    """

    def __init__(self, sample: TransformSample, canonical_side: int,
                 out_side: int = MODEL_SIDE):
        if canonical_side < MIN_CANONICAL_SIDE:
            raise ValidationError(
                f"canonical side must be >= {MIN_CANONICAL_SIDE}, got {canonical_side}"
            )
        n = sample.instance_side
        u, v = _instance_grid(n, sample.homography)
        gate = ((u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)).astype(np.float64)
        sx = u * canonical_side - 0.5
        sy = v * canonical_side - 0.5
        self.canonical_side = canonical_side
        self.gate = gate
        self.stage_a_zero = _Resample(
            (canonical_side, canonical_side), (n, n), sx, sy, pad="zero", gate=gate
        )
        self.stage_a_clamp = _Resample(
            (canonical_side, canonical_side), (n, n), sx, sy, pad="clamp"
        )
        bx, by = _crop_grid(sample.crop_rect, out_side)
        self.stage_b = _Resample((n, n), (out_side, out_side), bx, by, pad="clamp")

    def warp(self, delta: np.ndarray) -> np.ndarray:
        return self.stage_b.forward(self.stage_a_zero.forward(delta))

    def warp_adjoint(self, grad_out: np.ndarray) -> np.ndarray:
        return self.stage_a_zero.adjoint(self.stage_b.adjoint(grad_out))

    def compose_image(self, canonical: np.ndarray, background: np.ndarray) -> np.ndarray:
        warped = self.stage_a_clamp.forward(canonical)
        g = self.gate[..., None]
        return warped * g + background * (1.0 - g)

    def crop_resize(self, instance: np.ndarray) -> np.ndarray:
        return self.stage_b.forward(instance)


def _check_canonical(arr: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim != 3 or a.shape[0] != a.shape[1] or a.shape[2] != 3:
        raise ValidationError(f"{name} must be square [S, S, 3], got {a.shape}")
    if a.shape[0] < MIN_CANONICAL_SIDE:
        raise ValidationError(
            f"{name} side must be >= {MIN_CANONICAL_SIDE}, got {a.shape[0]}"
        )
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite values")
    return a


def render_background(instance_side: int, background_id: int) -> np.ndarray:
    """Deterministic background for a synthetic instance: solid or gradient."""
    rng = substream(background_id, "background")
    base = rng.uniform(0.05, 0.95, size=3)
    if rng.uniform() < 0.5:
        return np.broadcast_to(base, (instance_side, instance_side, 3)).astype(np.float64)
    other = rng.uniform(0.05, 0.95, size=3)
    t = np.linspace(0.0, 1.0, instance_side)
    if rng.uniform() < 0.5:
        ramp = t[None, :, None]
    else:
        ramp = t[:, None, None]
    return (base * (1.0 - ramp) + other * ramp).astype(np.float64)


def synthesize_instance(canonical_sign: np.ndarray, sample: TransformSample) -> np.ndarray:
    """Render the sign under one condition draw: warp over a background, shift
    brightness, add sensor noise, crop, and resize to the model input."""
    canonical = _check_canonical(canonical_sign, "canonical sign")
    if np.any(canonical < 0.0) or np.any(canonical > 1.0):
        raise ValidationError("canonical sign pixels must lie in [0, 1]")
    plan = WarpPlan(sample, canonical.shape[0])
    if sample.source == "experimental":
        instance = np.asarray(sample.photo, dtype=np.float64)
    else:
        background = render_background(sample.instance_side, sample.background_id)
        instance = plan.compose_image(canonical.astype(np.float64), background)
    instance = np.clip(instance + sample.brightness_delta, 0.0, 1.0)
    if sample.noise_sigma > 0.0:
        noise_rng = np.random.default_rng(sample.noise_seed)
        instance = instance + noise_rng.normal(0.0, sample.noise_sigma, instance.shape)
        instance = np.clip(instance, 0.0, 1.0)
    out = plan.crop_resize(instance)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def warp_perturbation(delta_canonical: np.ndarray, sample: TransformSample) -> np.ndarray:
    """Push a canonical-frame perturbation through the instance's geometric
    chain (homography, crop, resize) with zero padding off the sign plane.
    Linear in the perturbation."""
    delta = _check_canonical(delta_canonical, "delta")
    return WarpPlan(sample, delta.shape[0]).warp(delta)


def warp_perturbation_adjoint(upstream_grad: np.ndarray, sample: TransformSample,
                              canonical_side: int) -> np.ndarray:
    """Exact transpose of warp_perturbation for the same sample and side."""
    grad = np.asarray(upstream_grad)
    if grad.ndim != 3 or grad.shape[2] != 3:
        raise ValidationError(f"upstream grad must be [h, w, 3], got {grad.shape}")
    return WarpPlan(sample, canonical_side).warp_adjoint(grad)


def crop_resize(image: np.ndarray, crop_rect: tuple[int, int, int, int],
                out_side: int) -> np.ndarray:
    """Crop a rectangle out of an image and bilinear-resize it to a square.

    A full-frame crop at the image's own side is an exact identity.
    """
    img = np.asarray(image)
    if img.ndim != 3:
        raise ValidationError(f"image must be [h, w, c], got shape {img.shape}")
    x, y, w, h = crop_rect
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.shape[1] or y + h > img.shape[0]:
        raise ValidationError(f"crop_rect {crop_rect} outside image {img.shape[:2]}")
    bx, by = _crop_grid(crop_rect, out_side)
    plan = _Resample(img.shape[:2], (out_side, out_side), bx, by, pad="clamp")
    return plan.forward(img)
