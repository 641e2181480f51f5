"""Procedural sign imagery and image-folder loading.

Eight geometric sign classes stand in for a real traffic-sign corpus so the
whole pipeline stays hermetic: shapes carry a border, a fill, and an optional
glyph (bars, arrow, cross), rasterized with 4x supersampling onto a random
solid background.

Folder loading reads PNG files plus a tab-separated annotation file:

    filename<TAB>label<TAB>x0,y0;x1,y1;x2,y2;x3,y3

with the corner field optional (four sign corners, clockwise from the
canonical frame's top-left, in image pixels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .geometry import is_strictly_convex
from .rng import substream

SUPERSAMPLE = 4
SHAPES = ("octagon", "triangle", "circle", "diamond", "square")
GLYPHS = ("none", "bar1", "bar2", "bar3", "arrow", "cross")

RGB = tuple[float, float, float]


@dataclass(frozen=True)
class SignClassSpec:
    class_id: int
    name: str
    shape: str
    fill_color: RGB
    glyph: str
    border_color: RGB

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}")
        if self.glyph not in GLYPHS:
            raise ValidationError(f"unknown glyph {self.glyph!r}")
        for c in (*self.fill_color, *self.border_color):
            if not 0.0 <= c <= 1.0:
                raise ValidationError(f"color component {c} outside [0, 1]")


REFERENCE_CLASSES: tuple[SignClassSpec, ...] = (
    SignClassSpec(0, "red_octagon", "octagon", (0.72, 0.08, 0.10), "none", (0.95, 0.95, 0.95)),
    SignClassSpec(1, "yellow_triangle", "triangle", (0.95, 0.82, 0.10), "none", (0.10, 0.10, 0.10)),
    SignClassSpec(2, "ring_one_bar", "circle", (0.93, 0.93, 0.93), "bar1", (0.75, 0.06, 0.08)),
    SignClassSpec(3, "ring_two_bars", "circle", (0.93, 0.93, 0.93), "bar2", (0.06, 0.30, 0.72)),
    SignClassSpec(4, "orange_diamond", "diamond", (0.95, 0.55, 0.10), "none", (0.15, 0.10, 0.05)),
    SignClassSpec(5, "blue_arrow_square", "square", (0.12, 0.30, 0.75), "arrow", (0.95, 0.95, 0.95)),
    SignClassSpec(6, "cross_disc", "circle", (0.20, 0.55, 0.85), "cross", (0.95, 0.95, 0.95)),
    SignClassSpec(7, "gray_bars_square", "square", (0.60, 0.60, 0.62), "bar3", (0.12, 0.12, 0.12)),
)

SIGN_RADIUS = 0.46  # outer radius of the shape in unit coordinates
_INNER_SCALE = 0.85  # fill polygon relative to border polygon


def _shape_vertices(shape: str, radius: float) -> "np.ndarray | None":
    """Vertices in unit coordinates around (0.5, 0.5); None means circle."""
    c = 0.5
    if shape == "octagon":
        angles = np.deg2rad(22.5 + 45.0 * np.arange(8))
    elif shape == "triangle":
        angles = np.deg2rad(np.array([-90.0, 30.0, 150.0]))
    elif shape == "diamond":
        angles = np.deg2rad(np.array([-90.0, 0.0, 90.0, 180.0]))
    elif shape == "square":
        h = radius * 0.82
        return np.array([[c - h, c - h], [c + h, c - h], [c + h, c + h], [c - h, c + h]])
    elif shape == "circle":
        return None
    else:
        raise ValidationError(f"unknown shape {shape!r}")
    return np.stack([c + radius * np.cos(angles), c + radius * np.sin(angles)], axis=1)


def _glyph_polygons(glyph: str, r: float) -> list[np.ndarray]:
    c = 0.5
    polys: list[np.ndarray] = []

    def rect(cx, cy, hw, hh):
        return np.array(
            [[cx - hw, cy - hh], [cx + hw, cy - hh], [cx + hw, cy + hh], [cx - hw, cy + hh]]
        )

    if glyph == "none":
        return polys
    if glyph in ("bar1", "bar2", "bar3"):
        n = int(glyph[-1])
        offsets = {1: [0.0], 2: [-0.17, 0.17], 3: [-0.28, 0.0, 0.28]}[n]
        for dy in offsets:
            polys.append(rect(c, c + dy * 2 * r, 0.52 * r, 0.09 * r))
    elif glyph == "arrow":
        polys.append(
            np.array(
                [[c, c - 0.52 * r], [c - 0.30 * r, c - 0.05 * r], [c + 0.30 * r, c - 0.05 * r]]
            )
        )
        polys.append(rect(c, c + 0.23 * r, 0.10 * r, 0.28 * r))
    elif glyph == "cross":
        polys.append(rect(c, c, 0.50 * r, 0.11 * r))
        polys.append(rect(c, c, 0.11 * r, 0.50 * r))
    else:
        raise ValidationError(f"unknown glyph {glyph!r}")
    return polys


def _transform_points(pts: np.ndarray, scale: float, rot_deg: float, shift: tuple[float, float]):
    c = np.array([0.5, 0.5])
    th = math.radians(rot_deg)
    rotm = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return (pts - c) @ (scale * rotm.T) + c + np.asarray(shift)


def _inside_convex(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    nxt = np.roll(poly, -1, axis=0)
    inside_pos = np.ones(px.shape, dtype=bool)
    inside_neg = np.ones(px.shape, dtype=bool)
    for (x0, y0), (x1, y1) in zip(poly, nxt):
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    return inside_pos | inside_neg


def _paint(canvas, px, py, mask_fn, color):
    mask = mask_fn(px, py)
    canvas[mask] = color


def _render(
    spec: SignClassSpec,
    side: int,
    background: np.ndarray,
    scale: float = 1.0,
    rot_deg: float = 0.0,
    shift: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    ss = side * SUPERSAMPLE
    coords = (np.arange(ss) + 0.5) / ss
    px, py = np.meshgrid(coords, coords, indexing="xy")
    canvas = np.empty((ss, ss, 3), dtype=np.float64)
    canvas[:] = background

    def place(radius_scale, color, polys=None):
        if polys is None:  # shape primitive
            verts = _shape_vertices(spec.shape, SIGN_RADIUS * radius_scale)
            if verts is None:  # circle
                center = _transform_points(np.array([[0.5, 0.5]]), scale, rot_deg, shift)[0]
                rr = SIGN_RADIUS * radius_scale * scale
                _paint(
                    canvas, px, py,
                    lambda x, y: (x - center[0]) ** 2 + (y - center[1]) ** 2 <= rr * rr,
                    color,
                )
            else:
                tv = _transform_points(verts, scale, rot_deg, shift)
                _paint(canvas, px, py, lambda x, y: _inside_convex(x, y, tv), color)
        else:
            for poly in polys:
                tv = _transform_points(poly, scale, rot_deg, shift)
                _paint(canvas, px, py, lambda x, y: _inside_convex(x, y, tv), color)

    place(1.0, np.asarray(spec.border_color))
    place(_INNER_SCALE, np.asarray(spec.fill_color))
    glyphs = _glyph_polygons(spec.glyph, SIGN_RADIUS)
    if glyphs:
        place(None, np.asarray(spec.border_color), polys=glyphs)

    # box-filter downsample collapses the supersampling into anti-aliased edges
    small = canvas.reshape(side, SUPERSAMPLE, side, SUPERSAMPLE, 3).mean(axis=(1, 3))
    return np.clip(small, 0.0, 1.0).astype(np.float32)


def render_sign(spec: SignClassSpec, side: int, rng_seed: int) -> np.ndarray:
    """Canonical sign image: centered shape on a seeded random solid background."""
    if side < 32:
        raise ValidationError(f"side must be >= 32, got {side}")
    rng = np.random.default_rng(rng_seed)
    background = rng.uniform(0.0, 1.0, size=3)
    return _render(spec, side, background)


def sign_region_mask(spec: SignClassSpec, side: int) -> np.ndarray:
    """Binary [side, side] mask of pixels whose center lies on the sign surface."""
    coords = (np.arange(side) + 0.5) / side
    px, py = np.meshgrid(coords, coords, indexing="xy")
    verts = _shape_vertices(spec.shape, SIGN_RADIUS)
    if verts is None:
        inside = (px - 0.5) ** 2 + (py - 0.5) ** 2 <= SIGN_RADIUS**2
    else:
        inside = _inside_convex(px, py, verts)
    return inside.astype(np.float32)


@dataclass
class LabeledImages:
    images: np.ndarray  # [N, side, side, 3] float32 in [0, 1]
    labels: np.ndarray  # [N] int64

    def __len__(self):
        return len(self.images)


@dataclass
class Dataset:
    train: LabeledImages
    val: LabeledImages
    test: LabeledImages

    @property
    def class_count(self) -> int:
        return int(self.train.labels.max()) + 1


def _jittered_sign(spec: SignClassSpec, side: int, rng: np.random.Generator) -> np.ndarray:
    background = rng.uniform(0.0, 1.0, size=3)
    scale = rng.uniform(0.6, 1.0)
    rot = rng.uniform(-15.0, 15.0)
    shift = tuple(rng.uniform(-0.1, 0.1, size=2))
    img = _render(spec, side, background, scale=scale, rot_deg=rot, shift=shift)
    img = img + rng.uniform(-0.2, 0.2)
    sigma = rng.uniform(0.0, 0.02)
    img = img + rng.normal(0.0, 1.0, size=img.shape) * sigma
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_dataset(
    per_class: int,
    seed: int,
    side: int = 32,
    classes: tuple[SignClassSpec, ...] = REFERENCE_CLASSES,
) -> Dataset:
    """Jittered renders split 70/15/15 per class, disjoint by index."""
    if per_class < 20:
        raise ValidationError(f"per_class must be >= 20, got {per_class}")
    n_val = round(0.15 * per_class)
    n_test = round(0.15 * per_class)
    n_train = per_class - n_val - n_test
    buckets = {"train": ([], []), "val": ([], []), "test": ([], [])}
    for spec in classes:
        for i in range(per_class):
            img = _jittered_sign(spec, side, substream(seed, "sign", spec.class_id, i))
            split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
            buckets[split][0].append(img)
            buckets[split][1].append(spec.class_id)

    def pack(name):
        imgs, labels = buckets[name]
        return LabeledImages(np.stack(imgs), np.asarray(labels, dtype=np.int64))

    return Dataset(pack("train"), pack("val"), pack("test"))


@dataclass(frozen=True)
class CornerAnnotation:
    """Four sign corners in image pixels, clockwise from canonical top-left."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (4, 2):
            raise ValidationError(f"corner annotation needs 4 points, got shape {pts.shape}")
        if not is_strictly_convex(pts):
            raise ValidationError("corner annotation is not strictly convex")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


@dataclass
class FolderRecord:
    filename: str
    image: np.ndarray
    class_label: int
    corners: "CornerAnnotation | None"


@dataclass
class FolderLoadResult:
    records: list[FolderRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def save_png(path: "str | Path", image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="RGB").save(path, format="PNG")


def load_png(path: "str | Path") -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as exc:
        raise ValidationError(f"cannot decode PNG {path}: {exc}") from exc
    return arr / 255.0


def _parse_corners(text: str) -> CornerAnnotation:
    parts = text.split(";")
    if len(parts) != 4:
        raise ValidationError(f"expected 4 corner pairs, got {len(parts)}")
    pts = []
    for part in parts:
        x, y = part.split(",")
        pts.append((float(x), float(y)))
    return CornerAnnotation(tuple(pts))


def parse_annotations(path: "str | Path") -> dict[str, tuple[int, "CornerAnnotation | None"]]:
    entries: dict[str, tuple[int, CornerAnnotation | None]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) not in (2, 3):
            raise ValidationError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        try:
            label = int(fields[1])
            corners = _parse_corners(fields[2]) if len(fields) == 3 and fields[2] else None
        except (ValueError, ValidationError) as exc:
            raise ValidationError(f"{path}:{lineno}: malformed annotation: {exc}") from exc
        entries[fields[0]] = (label, corners)
    return entries


def write_annotations(path: "str | Path", entries: dict) -> None:
    lines = []
    for name in sorted(entries):
        label, corners = entries[name]
        if corners is None:
            lines.append(f"{name}\t{label}")
        else:
            pts = ";".join(f"{x:g},{y:g}" for x, y in corners.points)
            lines.append(f"{name}\t{label}\t{pts}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_image_folder(path: "str | Path", annotations_path: "str | Path") -> FolderLoadResult:
    """Load annotated PNGs; files without annotations are skipped with a warning,
    annotations without files produce a warning."""
    folder = Path(path)
    result = FolderLoadResult()
    entries = parse_annotations(annotations_path) if Path(annotations_path).exists() else {}
    files = sorted(p.name for p in folder.glob("*.png")) if folder.exists() else []
    for name in files:
        if name not in entries:
            result.warnings.append(f"{name}: no annotation, skipped")
            continue
        label, corners = entries[name]
        result.records.append(FolderRecord(name, load_png(folder / name), label, corners))
    for name in sorted(entries):
        if name not in files:
            result.warnings.append(f"{name}: annotated but file missing")
    return result
