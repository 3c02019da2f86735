"""SE(2) pose algebra and rotated-box geometry in the bird's-eye-view plane."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi], with pi as the boundary representative.

    Angles already in range are returned bit-identical, so repeated
    normalization is a no-op.
    """
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    elif wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized normalize_angle; values already in (-pi, pi] pass through exactly."""
    out = np.asarray(angles, dtype=float).copy()
    need = (out > math.pi) | (out <= -math.pi)
    if np.any(need):
        w = np.mod(out[need] + math.pi, TWO_PI) - math.pi
        w[w <= -math.pi] = math.pi
        out[need] = w
    return out


@dataclass(frozen=True)
class Pose2:
    """A planar pose / rigid transform (x, y, theta), theta in (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        x, y = float(self.x), float(self.y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"pose translation must be finite, got ({self.x!r}, {self.y!r})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Motion composition a . b, the product of the homogeneous transforms."""
    c = math.cos(a.theta)
    s = math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2) -> Pose2:
    """Inverse pose, the inverse of the homogeneous transform."""
    c = math.cos(p.theta)
    s = math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def consistency_error(z: Pose2, xi: Pose2, chi: Pose2) -> np.ndarray:
    """Pose consistency error of measurement z between agent pose xi and object pose chi.

    Returns the (x, y, theta) coordinates of inverse(z) . (inverse(xi) . chi);
    zero exactly when chi = xi . z.
    """
    e = compose(inverse(z), compose(inverse(xi), chi))
    return np.array([e.x, e.y, e.theta])


@dataclass(frozen=True)
class OrientedBox2:
    """Rectangular BEV footprint: center, side lengths, heading (length runs along heading)."""

    cx: float
    cy: float
    length: float
    width: float
    heading: float

    def __post_init__(self) -> None:
        cx, cy = float(self.cx), float(self.cy)
        length, width = float(self.length), float(self.width)
        if not all(math.isfinite(v) for v in (cx, cy, length, width)):
            raise ValueError("box fields must be finite")
        if length <= 0.0 or width <= 0.0:
            raise ValueError(f"box sides must be positive, got {length} x {width}")
        object.__setattr__(self, "cx", cx)
        object.__setattr__(self, "cy", cy)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    def corners(self) -> list[tuple[float, float]]:
        """Corner coordinates in counterclockwise order."""
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        hl = 0.5 * self.length
        hw = 0.5 * self.width
        return [
            (self.cx + c * dx - s * dy, self.cy + s * dx + c * dy)
            for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
        ]

    def circumradius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    if len(poly) < 3:
        return 0.0
    acc = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * abs(acc)


def _clip_polygon(subject: list[tuple[float, float]], clip: list[tuple[float, float]]) -> list[tuple[float, float]]:
    # Sutherland-Hodgman; clip polygon must be convex and counterclockwise.
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            break
        cp1 = clip[i]
        cp2 = clip[(i + 1) % n]
        ex = cp2[0] - cp1[0]
        ey = cp2[1] - cp1[1]
        input_pts = output
        output = []
        prev = input_pts[-1]
        side_prev = ex * (prev[1] - cp1[1]) - ey * (prev[0] - cp1[0])
        for cur in input_pts:
            side_cur = ex * (cur[1] - cp1[1]) - ey * (cur[0] - cp1[0])
            if (side_cur >= 0.0) != (side_prev >= 0.0):
                # Parametric intersection from the signed distances; the sides
                # have opposite signs so the denominator cannot vanish and the
                # point always lies between prev and cur.
                t = side_prev / (side_prev - side_cur)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if side_cur >= 0.0:
                output.append(cur)
            prev = cur
            side_prev = side_cur
    return output


def rotated_iou_bev(a: OrientedBox2, b: OrientedBox2) -> float:
    """Exact intersection-over-union of two oriented BEV boxes via polygon clipping."""
    if a == b:
        return 1.0
    if math.hypot(b.cx - a.cx, b.cy - a.cy) > a.circumradius() + b.circumradius():
        return 0.0
    pa = a.corners()
    pb = b.corners()
    inter = _polygon_area(_clip_polygon(pa, pb))
    if inter <= 0.0:
        return 0.0
    # Areas from the same shoelace arithmetic so identical boxes give exactly 1.0.
    union = _polygon_area(pa) + _polygon_area(pb) - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)
