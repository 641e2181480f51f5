"""Robust perturbation synthesis.

The optimizer minimizes, over the perturbation delta,

    lambda * ||M . delta||_p  +  w_nps * NPS(canonical + M . delta)
        + mean over condition draws of J(f(clip(x_i + warp_i(M . delta))), y)

with Adam, where M is a binary mask on the canonical sign frame, warp_i is the
linear alignment of the canonical frame into instance i, and J is softmax
cross-entropy toward the target class (negated toward the true class for
untargeted attacks).  The non-printability score pushes the printed result
(canonical plus perturbation, not the perturbation alone) toward a palette of
printable colors; that reading of "colors used in the perturbation" is a
choice, since the printed sticker reproduces sign plus ink.

Mask discovery is two-stage: an L1 full-surface attack concentrates energy on
vulnerable regions, the top decile of its per-pixel saliency is kept, and the
bounding rectangles of the surviving connected components become the sticker
mask for the L2 stage.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import model as model_lib
from .errors import DivergenceError, NonFiniteError, ValidationError
from .optim import AdamState, adam_step
from .parallel import ordered_map
from .rng import substream
from .rpw import read_rpw, write_rpw
from .signs import CornerAnnotation
from .transforms import (
    DistributionConfig,
    TransformSample,
    WarpPlan,
    annotation_homography,
    identity_sample,
    sample_transform,
    synthesize_instance,
)

PROBE_SIZE = 64
PROBE_EVERY = 50
L1_STAGE_LAMBDA = 1e-2
L2_STAGE_LAMBDA = 1e-3
SALIENCY_PERCENTILE = 90.0
MAX_MASK_COVERAGE = 0.40
MIN_COMPONENT_FRACTION = 0.01
SIGN_WIDTH_MM = 600.0  # assumed physical sign width for sticker-sheet scale


@dataclass
class Mask:
    """Binary perturbable-region grid on the canonical sign frame."""

    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValidationError(f"mask grid must be square 2-d, got {g.shape}")
        if not np.all((g == 0) | (g == 1)):
            raise ValidationError("mask grid entries must be exactly 0 or 1")
        self.grid = g.astype(np.float32)

    @property
    def coverage(self) -> float:
        return float(self.grid.mean())

    @property
    def side(self) -> int:
        return self.grid.shape[0]


@dataclass(frozen=True)
class PrintablePalette:
    colors: tuple[tuple[float, float, float], ...]
    name: str

    def __post_init__(self):
        if not self.colors:
            raise ValidationError("palette must contain at least one color")
        seen = set()
        for c in self.colors:
            if len(c) != 3 or not all(0.0 <= v <= 1.0 for v in c):
                raise ValidationError(f"palette color {c} is not an RGB triple in [0, 1]")
            if c in seen:
                raise ValidationError(f"palette color {c} appears twice")
            seen.add(c)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.colors, dtype=np.float64)


DEFAULT_PALETTE = PrintablePalette(
    colors=(
        (0.0, 0.0, 0.0),
        (1.0, 1.0, 1.0),
        (0.9, 0.1, 0.1),
        (0.1, 0.6, 0.15),
        (0.1, 0.2, 0.8),
        (0.95, 0.85, 0.1),
        (0.9, 0.5, 0.1),
        (0.6, 0.1, 0.6),
        (0.2, 0.8, 0.8),
        (0.25, 0.25, 0.25),
        (0.5, 0.5, 0.5),
        (0.75, 0.75, 0.75),
    ),
    name="desk-printer-12",
)


def load_palette(path: "str | Path") -> PrintablePalette:
    """Text palette: one "r g b" triple in [0,1] per line, "#" comments."""
    colors = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
        try:
            colors.append(tuple(float(p) for p in parts))
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return PrintablePalette(colors=tuple(colors), name=Path(path).stem)


@dataclass
class Perturbation:
    delta: np.ndarray  # [S, S, 3] in [-1, 1], zero off mask
    mask: Mask
    target_class: "int | None"
    norm_used: str
    lambda_used: float
    palette_id: str

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.float32)
        if d.ndim != 3 or d.shape[2] != 3 or d.shape[0] != d.shape[1]:
            raise ValidationError(f"delta must be [S, S, 3], got {d.shape}")
        if d.shape[0] != self.mask.side:
            raise ValidationError(
                f"delta side {d.shape[0]} != mask side {self.mask.side}"
            )
        if np.any(np.abs(d) > 1.0):
            raise ValidationError("delta entries must lie in [-1, 1]")
        off = d * (1.0 - self.mask.grid[..., None])
        if np.any(off != 0.0):
            raise ValidationError("delta must be exactly zero off the mask")
        if self.norm_used not in ("L1", "L2"):
            raise ValidationError(f"norm_used must be L1 or L2, got {self.norm_used!r}")
        self.delta = d

    def masked_delta(self) -> np.ndarray:
        return self.delta * self.mask.grid[..., None]


@dataclass(frozen=True)
class AttackConfig:
    """Eq.-style objective hyperparameters plus the condition distribution.

    target_class None means untargeted (push away from the true class).
    """

    lam: float = L2_STAGE_LAMBDA
    norm: str = "L2"
    eta: float = 0.1
    iterations: int = 500
    batch_size: int = 16
    target_class: "int | None" = None
    nps_weight: float = 1.0
    distribution: DistributionConfig = field(default_factory=DistributionConfig)
    palette: PrintablePalette = DEFAULT_PALETTE
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.norm not in ("L1", "L2"):
            raise ValidationError(f"norm must be L1 or L2, got {self.norm!r}")
        if not 1e-4 <= self.eta <= 1.0:
            raise ValidationError(f"eta {self.eta} outside [1e-4, 1e0]")
        # iterations 0 is allowed so a no-op run returns the zero perturbation
        if self.iterations < 0:
            raise ValidationError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.nps_weight < 0.0:
            raise ValidationError(f"nps_weight must be >= 0, got {self.nps_weight}")


def full_mask(side: int) -> Mask:
    return Mask(np.ones((side, side), dtype=np.float32))


def region_mask(region: np.ndarray) -> Mask:
    return Mask((np.asarray(region) > 0).astype(np.float32))


def nps(delta: np.ndarray, mask: Mask, palette: PrintablePalette,
        canonical: np.ndarray) -> tuple[float, np.ndarray]:
    """Non-printability score of the printed result and its gradient in delta.

    Per masked pixel, the clamped value p = clip(canonical + delta, 0, 1)
    contributes prod over palette colors of (||p - p'||_1 / 3); the score is
    the mean over masked pixels.  The absolute value's subgradient is 0 at
    exact zeros, and the clamp passes gradient only strictly inside (0, 1).
    """
    d = np.asarray(delta)
    c = np.asarray(canonical)
    if d.shape != c.shape or d.ndim != 3 or d.shape[2] != 3:
        raise ValidationError(
            f"delta {d.shape} and canonical {c.shape} must both be [S, S, 3]"
        )
    if d.shape[0] != mask.side:
        raise ValidationError(f"delta side {d.shape[0]} != mask side {mask.side}")
    sel = mask.grid > 0
    n_masked = int(sel.sum())
    if n_masked == 0:
        raise ValidationError("mask selects no pixels")
    raw = (c + d)[sel].astype(np.float64)  # [P, 3]
    p_hat = np.clip(raw, 0.0, 1.0)
    pal = palette.as_array()  # [K, 3]
    diffs = p_hat[:, None, :] - pal[None, :, :]  # [P, K, 3]
    t = np.abs(diffs).sum(axis=2) / 3.0  # [P, K]
    k = pal.shape[0]
    score = float(np.prod(t, axis=1).mean())
    # product rule via prefix/suffix partial products, safe with zero factors
    pre = np.ones((t.shape[0], k + 1))
    suf = np.ones((t.shape[0], k + 1))
    for j in range(k):
        pre[:, j + 1] = pre[:, j] * t[:, j]
    for j in range(k - 1, -1, -1):
        suf[:, j] = suf[:, j + 1] * t[:, j]
    others = pre[:, :k] * suf[:, 1:]  # [P, K]
    dscore = (others[:, :, None] * np.sign(diffs) / 3.0).sum(axis=1) / n_masked
    gate = (raw > 0.0) & (raw < 1.0)
    grad = np.zeros(d.shape, dtype=np.float64)
    grad[sel] = dscore * gate
    return score, grad.astype(d.dtype, copy=False)


def objective(
    delta: np.ndarray,
    mask: Mask,
    batch: "list[tuple[np.ndarray, TransformSample]]",
    params: model_lib.ModelParameters,
    config: AttackConfig,
    canonical: np.ndarray,
    true_class: int,
    threads: int = 1,
    plans: "list[WarpPlan] | None" = None,
) -> tuple[float, np.ndarray, dict]:
    """Full loss, its gradient in delta, and the three decomposed terms.

    The expectation term averages cross-entropy toward the attack class over
    clip(instance + warp(M . delta)); its gradient flows through the model
    backward pass and the exact warp adjoint, with the clip pass-through
    strictly inside (0, 1).  Off-mask delta values are irrelevant: every term
    sees M . delta.
    """
    if not batch:
        raise ValidationError("objective needs a non-empty batch")
    d = np.asarray(delta)
    side = mask.side
    if d.shape != (side, side, 3):
        raise ValidationError(f"delta must be [{side}, {side}, 3], got {d.shape}")
    masked = d * mask.grid[..., None]

    if config.norm == "L1":
        norm_val = float(np.abs(masked).sum())
        norm_grad = np.sign(masked)
    else:
        norm_val = float(np.sqrt(np.square(masked).sum()))
        norm_grad = masked / norm_val if norm_val > 0.0 else np.zeros_like(masked)
    norm_term = config.lam * norm_val
    grad = config.lam * norm_grad

    if config.nps_weight > 0.0:
        nps_score, nps_grad = nps(masked, mask, config.palette, canonical)
        nps_term = config.nps_weight * nps_score
        grad = grad + config.nps_weight * nps_grad
    else:
        nps_term = 0.0

    if plans is None:
        plans = [WarpPlan(s, side) for _, s in batch]
    warped = ordered_map(lambda p: p.warp(masked), plans, threads)
    raws = [np.asarray(inst, dtype=d.dtype) + w for (inst, _), w in zip(batch, warped)]
    images = np.clip(np.stack(raws), 0.0, 1.0)

    attack_class = true_class if config.target_class is None else config.target_class
    logits, cache = model_lib.forward_with_cache(params, images)
    targets = np.full(len(batch), attack_class, dtype=np.int64)
    ce, grad_logits = model_lib.ops.softmax_cross_entropy(logits, targets)
    sign = -1.0 if config.target_class is None else 1.0
    expectation_term = sign * ce
    _, grad_images = model_lib.backward(params, cache, grad_logits)
    gates = [(raw > 0.0) & (raw < 1.0) for raw in raws]
    pulled = ordered_map(
        lambda i: plans[i].warp_adjoint(grad_images[i] * gates[i]),
        range(len(batch)),
        threads,
    )
    exp_grad = pulled[0].astype(np.float64)
    for g in pulled[1:]:
        exp_grad = exp_grad + g
    grad = grad + sign * exp_grad

    loss = norm_term + nps_term + expectation_term
    if not np.isfinite(loss):
        raise NonFiniteError(f"objective is non-finite: {loss}")
    grad = (grad * mask.grid[..., None]).astype(d.dtype, copy=False)
    parts = {
        "norm_term": norm_term,
        "nps_term": nps_term,
        "expectation_term": expectation_term,
    }
    return float(loss), grad, parts


@dataclass
class IterationRecord:
    step: int
    loss: float
    norm_term: float
    nps_term: float
    expectation_term: float
    probe_success: "float | None" = None


@dataclass
class AttackTrace:
    records: list[IterationRecord] = field(default_factory=list)
    best_step: int = 0
    best_probe_success: float = 0.0


def canonical_prediction(params: model_lib.ModelParameters,
                         canonical: np.ndarray) -> tuple[int, float]:
    """Predicted (label, confidence) for the clean sign resized to model input."""
    c = np.asarray(canonical)
    side = max(c.shape[0], params.input_side)
    instance = synthesize_instance(c, identity_sample(instance_side=side))
    label, conf, _ = model_lib.predict(params, instance)
    return label, conf


class _Probe:
    """Fixed held-out condition draws for tracking attack success."""

    def __init__(self, canonical, params, config, true_class):
        rng = substream(config.seed, "attack-probe")
        self.samples = [
            sample_transform(config.distribution, rng) for _ in range(PROBE_SIZE)
        ]
        side = canonical.shape[0]
        self.plans = [WarpPlan(s, side) for s in self.samples]
        self.clean = np.stack(
            [synthesize_instance(canonical, s) for s in self.samples]
        )
        clean_labels, _, _ = model_lib.predict_batch(params, self.clean)
        self.clean_correct = clean_labels == true_class
        self.params = params
        self.true_class = true_class
        self.target_class = config.target_class

    def success(self, masked_delta: np.ndarray, threads: int = 1) -> float:
        warped = ordered_map(lambda p: p.warp(masked_delta), self.plans, threads)
        perturbed = np.clip(self.clean + np.stack(warped), 0.0, 1.0)
        labels, _, _ = model_lib.predict_batch(self.params, perturbed)
        denom = int(self.clean_correct.sum())
        if denom == 0:
            return 0.0
        if self.target_class is None:
            hits = (labels != self.true_class) & self.clean_correct
        else:
            hits = (labels == self.target_class) & self.clean_correct
        return float(hits.sum() / denom)


def run_attack(
    canonical_sign: np.ndarray,
    true_class: int,
    params: model_lib.ModelParameters,
    mask: Mask,
    config: AttackConfig,
    threads: int = 1,
) -> tuple[Perturbation, AttackTrace]:
    """Adam-optimize the objective; return the iterate with the best held-out
    probe success (evaluated every PROBE_EVERY steps on a fixed 64-draw set).

    Deterministic given (inputs, config.seed), independent of thread count.
    """
    canonical = np.asarray(canonical_sign, dtype=np.float32)
    side = mask.side
    if canonical.shape != (side, side, 3):
        raise ValidationError(
            f"canonical sign must be [{side}, {side}, 3], got {canonical.shape}"
        )
    if mask.coverage == 0.0:
        raise ValidationError("mask has zero coverage")
    clean_label, _ = canonical_prediction(params, canonical)
    if clean_label != true_class:
        warnings.warn(
            f"clean sign predicted as {clean_label}, not {true_class}; "
            "success-rate denominators may be empty",
            stacklevel=2,
        )

    probe = _Probe(canonical, params, config, true_class)
    delta = np.zeros((side, side, 3), dtype=np.float32)
    best_success = probe.success(delta, threads)
    best_step = 0
    best_delta = delta.copy()

    batch_rng = substream(config.seed, "attack-batch")
    state = AdamState(eta=config.eta)
    trace = AttackTrace()
    mask3 = mask.grid[..., None]
    for step in range(config.iterations):
        samples = [
            sample_transform(config.distribution, batch_rng)
            for _ in range(config.batch_size)
        ]
        batch = [(synthesize_instance(canonical, s), s) for s in samples]
        plans = [WarpPlan(s, side) for s in samples]
        try:
            loss, grad, parts = objective(
                delta, mask, batch, params, config, canonical, true_class,
                threads=threads, plans=plans,
            )
        except NonFiniteError as exc:
            raise DivergenceError(f"loss diverged: {exc}", step=step) from exc
        updated, state = adam_step({"delta": delta}, {"delta": grad}, state)
        delta = np.clip(updated["delta"], -1.0, 1.0) * mask3
        record = IterationRecord(
            step=step,
            loss=loss,
            norm_term=parts["norm_term"],
            nps_term=parts["nps_term"],
            expectation_term=parts["expectation_term"],
        )
        if (step + 1) % PROBE_EVERY == 0 or step + 1 == config.iterations:
            success = probe.success(delta, threads)
            record.probe_success = success
            # later iterates win ties: same success with a smaller norm term
            if success >= best_success:
                best_success = success
                best_step = step + 1
                best_delta = delta.copy()
        trace.records.append(record)
    trace.best_step = best_step
    trace.best_probe_success = best_success

    perturbation = Perturbation(
        delta=best_delta,
        mask=mask,
        target_class=config.target_class,
        norm_used=config.norm,
        lambda_used=config.lam,
        palette_id=config.palette.name,
    )
    return perturbation, trace


def select_salient(saliency: np.ndarray, region: np.ndarray, keep: int) -> np.ndarray:
    """Boolean grid of the `keep` highest-saliency pixels inside region.

    Stable ranking: ties resolve in row-major order, so the selection is
    deterministic.
    """
    sal = np.asarray(saliency, dtype=np.float64)
    reg = np.asarray(region) > 0
    flat_idx = np.flatnonzero(reg.ravel())
    if flat_idx.size == 0:
        raise ValidationError("region selects no pixels")
    order = np.argsort(-sal.ravel()[flat_idx], kind="stable")
    keep = max(1, min(keep, flat_idx.size))
    out = np.zeros(sal.size, dtype=bool)
    out[flat_idx[order[:keep]]] = True
    return out.reshape(sal.shape)


def connected_components(grid: np.ndarray) -> list[np.ndarray]:
    """4-connectivity components of a boolean grid, in row-major discovery
    order; each component is an [n, 2] array of (row, col) pixels."""
    g = np.asarray(grid) > 0
    h, w = g.shape
    seen = np.zeros_like(g)
    comps = []
    for sy, sx in zip(*np.nonzero(g)):
        if seen[sy, sx]:
            continue
        queue = deque([(sy, sx)])
        seen[sy, sx] = True
        pixels = []
        while queue:
            y, x = queue.popleft()
            pixels.append((y, x))
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and g[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    queue.append((ny, nx))
        comps.append(np.asarray(pixels))
    return comps


def _rect_union_mask(components: "list[np.ndarray]", side: int) -> np.ndarray:
    grid = np.zeros((side, side), dtype=np.float32)
    for comp in components:
        y0, x0 = comp.min(axis=0)
        y1, x1 = comp.max(axis=0)
        grid[y0 : y1 + 1, x0 : x1 + 1] = 1.0
    return grid


def mask_from_saliency(
    saliency: np.ndarray,
    region: np.ndarray,
    percentile_q: float = SALIENCY_PERCENTILE,
    max_coverage: float = MAX_MASK_COVERAGE,
) -> Mask:
    """Sticker mask: keep the top (100 - q)% salient sign pixels, take
    4-connected components, drop those under 1% of the sign area, and emit
    the union of the survivors' bounding rectangles.

    If the rectangles exceed the coverage budget (relative to sign pixels),
    the selection is shrunk until they fit.
    """
    reg = np.asarray(region) > 0
    n_sign = int(reg.sum())
    if n_sign == 0:
        raise ValidationError("sign region is empty")
    side = reg.shape[0]
    keep = max(1, round((1.0 - percentile_q / 100.0) * n_sign))
    min_size = MIN_COMPONENT_FRACTION * n_sign
    while True:
        selected = select_salient(saliency, reg, keep)
        comps = connected_components(selected)
        survivors = [c for c in comps if len(c) >= min_size]
        if not survivors:
            survivors = [max(comps, key=len)]
        grid = _rect_union_mask(survivors, side)
        if float(grid.sum()) / n_sign <= max_coverage or keep == 1:
            return Mask(grid)
        keep = max(1, keep * 3 // 4)


def discover_mask(
    canonical_sign: np.ndarray,
    true_class: int,
    params: model_lib.ModelParameters,
    config: AttackConfig,
    sign_region: "np.ndarray | None" = None,
    threads: int = 1,
) -> Mask:
    """Two-stage mask discovery: L1 attack over the whole sign surface, then
    rectangle extraction from the resulting saliency (max channel |delta|)."""
    canonical = np.asarray(canonical_sign, dtype=np.float32)
    side = canonical.shape[0]
    region = (
        np.ones((side, side), dtype=np.float32)
        if sign_region is None
        else (np.asarray(sign_region) > 0).astype(np.float32)
    )
    stage1_config = replace(config, norm="L1", lam=L1_STAGE_LAMBDA)
    stage1_pert, _ = run_attack(
        canonical, true_class, params, region_mask(region), stage1_config, threads
    )
    saliency = np.abs(stage1_pert.delta).max(axis=2)
    # spend the whole sticker budget: rank-select down to the coverage cap
    # and let the shrink loop in mask_from_saliency trim the rectangles back
    budget_q = 100.0 * (1.0 - MAX_MASK_COVERAGE)
    return mask_from_saliency(saliency, region, percentile_q=budget_q)


def apply_perturbation(
    image: np.ndarray,
    perturbation: Perturbation,
    sample: "TransformSample | None" = None,
    corners: "CornerAnnotation | None" = None,
) -> np.ndarray:
    """clip(input + aligned masked delta, 0, 1).

    Without pose information the input must be the canonical frame itself;
    with a TransformSample the input is that sample's synthesized instance;
    with a CornerAnnotation the input is a photo and the delta is warped into
    the annotated quad at the photo's own resolution.
    """
    img = np.asarray(image)
    masked = perturbation.masked_delta()
    side = masked.shape[0]
    if sample is not None:
        aligned = WarpPlan(sample, side).warp(masked.astype(np.float64))
    elif corners is not None:
        if img.ndim != 3 or img.shape[0] != img.shape[1]:
            raise ValidationError(f"annotated photo must be square, got {img.shape}")
        photo_side = img.shape[0]
        pose = TransformSample(
            homography=annotation_homography(corners, photo_side),
            brightness_delta=0.0,
            crop_rect=(0, 0, photo_side, photo_side),
            background_id=0,
            noise_seed=0,
            instance_side=photo_side,
            noise_sigma=0.0,
        )
        aligned = WarpPlan(pose, side, out_side=photo_side).warp(masked.astype(np.float64))
    else:
        if img.shape != masked.shape:
            raise ValidationError(
                f"input shape {img.shape} is not the canonical frame "
                f"{masked.shape}; instance inputs need a TransformSample or "
                "CornerAnnotation"
            )
        aligned = masked
    if img.shape != aligned.shape:
        raise ValidationError(
            f"input shape {img.shape} does not match aligned delta {aligned.shape}"
        )
    return np.clip(img + aligned, 0.0, 1.0).astype(np.float32)


def quantize_to_palette(image: np.ndarray, palette: PrintablePalette) -> np.ndarray:
    """Nearest palette color by L1 distance, first index on ties."""
    img = np.asarray(image, dtype=np.float64)
    pal = palette.as_array()
    dists = np.abs(img[..., None, :] - pal).sum(axis=-1)
    return pal[dists.argmin(axis=-1)].astype(np.float32)


def export_sticker_sheet(
    perturbation: Perturbation,
    canonical: np.ndarray,
    print_side: int,
    path: "str | Path",
    palette: PrintablePalette = DEFAULT_PALETTE,
) -> Path:
    """Printable sheet: each mask rectangle of the palette-quantized perturbed
    sign, nearest-neighbor upsampled, with cut borders on white.  The output
    filename is annotated with the physical scale of one sheet pixel assuming
    a SIGN_WIDTH_MM-wide sign.  Returns the path actually written."""
    side = perturbation.mask.side
    if print_side < side:
        raise ValidationError(f"print_side {print_side} < canonical side {side}")
    factor = print_side // side
    printed = quantize_to_palette(
        np.clip(np.asarray(canonical) + perturbation.masked_delta(), 0.0, 1.0), palette
    )
    patches = []
    for comp in connected_components(perturbation.mask.grid):
        y0, x0 = comp.min(axis=0)
        y1, x1 = comp.max(axis=0)
        patch = printed[y0 : y1 + 1, x0 : x1 + 1]
        patches.append(np.repeat(np.repeat(patch, factor, axis=0), factor, axis=1))
    if not patches:
        raise ValidationError("mask has no rectangles to export")
    margin = max(2, factor)
    width = max(p.shape[1] for p in patches) + 2 * margin + 2
    height = sum(p.shape[0] + 2 for p in patches) + margin * (len(patches) + 1)
    sheet = np.ones((height, width, 3), dtype=np.float32)
    cursor = margin
    for patch in patches:
        h, w = patch.shape[:2]
        # 1px black cut line around each sticker
        sheet[cursor : cursor + h + 2, margin : margin + w + 2] = 0.0
        sheet[cursor + 1 : cursor + 1 + h, margin + 1 : margin + 1 + w] = patch
        cursor += h + 2 + margin
    mm_per_px = SIGN_WIDTH_MM / print_side
    target = Path(path)
    out = target.with_name(f"{target.stem}-{mm_per_px:.3f}mm-per-px{target.suffix or '.png'}")
    arr = (np.clip(sheet, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(out, format="PNG")
    return out


DELTA_ARCH_ID = "rp2-delta-v1"


def save_perturbation(dir_path: "str | Path", perturbation: Perturbation,
                      meta: "dict | None" = None) -> None:
    """Archive layout: delta.rpw + mask.png + meta.json."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    side = perturbation.mask.side
    write_rpw(out / "delta.rpw", DELTA_ARCH_ID, 0, side, [perturbation.delta])
    mask_img = (perturbation.mask.grid * 255.0).astype(np.uint8)
    Image.fromarray(mask_img, mode="L").save(out / "mask.png", format="PNG")
    record = {
        "schema": "rp2-perturbation-v1",
        "target_class": perturbation.target_class,
        "norm": perturbation.norm_used,
        "lambda": perturbation.lambda_used,
        "palette_id": perturbation.palette_id,
        "side": side,
    }
    if meta:
        record.update(meta)
    (out / "meta.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")


def load_perturbation(dir_path: "str | Path") -> tuple[Perturbation, dict]:
    src = Path(dir_path)
    for name in ("delta.rpw", "mask.png", "meta.json"):
        if not (src / name).exists():
            raise ValidationError(f"perturbation archive missing {name}")
    arch_id, _, side, tensors = read_rpw(src / "delta.rpw", tensor_names=["delta"])
    if arch_id != DELTA_ARCH_ID:
        raise ValidationError(f"unexpected archive id {arch_id!r}")
    if len(tensors) != 1 or tensors[0].shape != (side, side, 3):
        raise ValidationError("delta.rpw does not hold a single [S, S, 3] tensor")
    with Image.open(src / "mask.png") as im:
        grid = (np.asarray(im.convert("L")) > 127).astype(np.float32)
    meta = json.loads((src / "meta.json").read_text())
    delta = np.clip(tensors[0], -1.0, 1.0) * grid[..., None]
    perturbation = Perturbation(
        delta=delta,
        mask=Mask(grid),
        target_class=meta.get("target_class"),
        norm_used=meta.get("norm", "L2"),
        lambda_used=float(meta.get("lambda", L2_STAGE_LAMBDA)),
        palette_id=meta.get("palette_id", DEFAULT_PALETTE.name),
    )
    return perturbation, meta
