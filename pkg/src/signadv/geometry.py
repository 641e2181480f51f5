"""Planar projective geometry: 4-point homography estimation and polygon math.

Point arrays are [N, 2] in (x, y) order; image coordinates have y pointing
down. Homographies are 3x3 with the bottom-right entry normalized to 1.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

MIN_HOMOGRAPHY_DET = 1e-6


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact homography mapping four source points to four destination points
    (direct linear transform on the 8x8 system)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValidationError(
            f"need exactly four (x, y) correspondences, got {src.shape} -> {dst.shape}"
        )
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"degenerate correspondences: {exc}") from exc
    H = np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]], dtype=np.float64
    )
    if abs(np.linalg.det(H)) <= MIN_HOMOGRAPHY_DET:
        raise ValidationError("homography is numerically singular")
    return H


def apply_homography(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones((len(pts), 1))
    proj = np.hstack([pts, ones]) @ np.asarray(H, dtype=np.float64).T
    w = proj[:, 2:3]
    return proj[:, :2] / w


def invert_homography(H: np.ndarray) -> np.ndarray:
    inv = np.linalg.inv(np.asarray(H, dtype=np.float64))
    return inv / inv[2, 2]


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area (absolute value)."""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def clip_polygon_to_rect(
    points: np.ndarray, x0: float, y0: float, x1: float, y1: float
) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by an axis-aligned rect."""
    poly = [tuple(p) for p in np.asarray(points, dtype=np.float64)]

    def clip_edge(poly, inside, intersect):
        out = []
        for i, cur in enumerate(poly):
            prev = poly[i - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
        return out

    def x_cross(p, q, xc):
        t = (xc - p[0]) / (q[0] - p[0])
        return (xc, p[1] + t * (q[1] - p[1]))

    def y_cross(p, q, yc):
        t = (yc - p[1]) / (q[1] - p[1])
        return (p[0] + t * (q[0] - p[0]), yc)

    for edge in (
        (lambda p: p[0] >= x0, lambda p, q: x_cross(p, q, x0)),
        (lambda p: p[0] <= x1, lambda p, q: x_cross(p, q, x1)),
        (lambda p: p[1] >= y0, lambda p, q: y_cross(p, q, y0)),
        (lambda p: p[1] <= y1, lambda p, q: y_cross(p, q, y1)),
    ):
        if not poly:
            return np.zeros((0, 2))
        poly = clip_edge(poly, *edge)
    return np.asarray(poly, dtype=np.float64).reshape(-1, 2)


def edge_cross_products(points: np.ndarray) -> np.ndarray:
    """z component of consecutive edge cross products, one per vertex."""
    pts = np.asarray(points, dtype=np.float64)
    nxt = np.roll(pts, -1, axis=0)
    edges = nxt - pts
    prev_edges = np.roll(edges, 1, axis=0)
    return prev_edges[:, 0] * edges[:, 1] - prev_edges[:, 1] * edges[:, 0]


def is_strictly_convex(points: np.ndarray) -> bool:
    cross = edge_cross_products(points)
    return bool(np.all(cross > 1e-12) or np.all(cross < -1e-12))
