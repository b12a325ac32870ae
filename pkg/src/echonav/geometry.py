"""Continuous 2-D floorplan geometry: poses, collision, occupancy grids, geodesics.

Scenes are axis-aligned rectangles with axis-aligned rectangular obstacles.
All lengths are meters, all angles radians (counterclockwise-positive from the
+x axis, wrapped to (-pi, pi]). A scene is immutable after construction; the
occupancy grid, adjacency graph and distance fields are built lazily and
cached, so instances are cheap to share across parallel workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

AGENT_RADIUS = 0.1
FORWARD_STEP = 0.25
DEFAULT_GRID_RESOLUTION = 0.05
SCAN_RAYS = 32
SCAN_HALF_ARC = math.pi / 4
SCAN_MAX_RANGE = 10.0

# Clearance slack for collision entry tests: lets an agent standing exactly at
# contact distance move tangentially or away instead of being pinned by the
# last bit of float noise.
_CONTACT_TOL = 1e-9

# Octile factor: an 8-connected grid path overestimates the Euclidean length
# of a free-space segment by at most this ratio (worst case at 22.5 degrees).
OCTILE_FACTOR = math.sqrt(1.0 + (math.sqrt(2) - 1.0) ** 2)


def _dyadic_turn_increment() -> float:
    # pi/12 truncated to 48 mantissa bits: k*increment stays an exact IEEE
    # double for |k| <= 32, so turn sequences and the (-pi, pi] lattice wrap
    # are exactly invertible. Differs from float(pi/12) by 2.8e-16 rad.
    m, e = math.frexp(math.pi / 12)
    return math.ldexp(math.floor(m * 2**48) / 2**48, e)


TURN_INCREMENT = _dyadic_turn_increment()
_HEADING_WRAP_HI = 12 * TURN_INCREMENT  # lattice pi, strictly below float pi
_HEADING_WRAP_SPAN = 24 * TURN_INCREMENT


class Action(Enum):
    MOVE_FORWARD = "MoveForward"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    STOP = "Stop"


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    angle = math.remainder(angle, math.tau)
    if angle <= -math.pi:
        angle += math.tau
    return angle


@dataclass(frozen=True)
class Pose:
    """Agent pose: world position and heading (CCW from +x, in (-pi, pi])."""

    x: float
    y: float
    heading: float

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle with lower-left corner (x, y)."""

    x: float
    y: float
    w: float
    h: float

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h

    def distance(self, px: float, py: float) -> float:
        dx = max(self.x - px, 0.0, px - (self.x + self.w))
        dy = max(self.y - py, 0.0, py - (self.y + self.h))
        return math.hypot(dx, dy)


class ScenePlan:
    """Rectangular floorplan with rectangular obstacles and acoustic wall absorption."""

    def __init__(
        self,
        id: str,
        width: float,
        height: float,
        obstacles: list[Rect] | tuple[Rect, ...] = (),
        wall_absorption: float = 0.5,
        grid_resolution: float = DEFAULT_GRID_RESOLUTION,
    ) -> None:
        if width <= 0 or height <= 0:
            raise ValueError(f"scene dimensions must be positive, got {width}x{height}")
        if not 0.0 < wall_absorption < 1.0:
            raise ValueError(f"wall_absorption must be in (0, 1), got {wall_absorption}")
        if grid_resolution <= 0:
            raise ValueError("grid_resolution must be positive")
        for rect in obstacles:
            if rect.w <= 0 or rect.h <= 0:
                raise ValueError(f"obstacle has non-positive extent: {rect}")
            if rect.x <= 0 or rect.y <= 0 or rect.x + rect.w >= width or rect.y + rect.h >= height:
                raise ValueError(f"obstacle {rect} not strictly inside {width}x{height} bounds")
        self.id = str(id)
        self.width = float(width)
        self.height = float(height)
        self.obstacles = tuple(obstacles)
        self.wall_absorption = float(wall_absorption)
        self.grid_resolution = float(grid_resolution)
        self._free_mask: np.ndarray | None = None
        self._graph: csr_matrix | None = None
        self._free_centers: np.ndarray | None = None
        self._field_cache: dict[int, np.ndarray] = {}

    # ------------------------------------------------------------------
    # basic queries

    def in_bounds(self, px: float, py: float) -> bool:
        return 0.0 <= px <= self.width and 0.0 <= py <= self.height

    def inside_obstacle(self, px: float, py: float) -> bool:
        return any(r.contains(px, py) for r in self.obstacles)

    def clearance(self, px: float, py: float) -> float:
        """Distance to the nearest obstacle or boundary wall (negative outside bounds)."""
        c = min(px, self.width - px, py, self.height - py)
        for r in self.obstacles:
            if r.contains(px, py):
                return 0.0
            c = min(c, r.distance(px, py))
        return c

    def is_free(self, px: float, py: float, radius: float = AGENT_RADIUS) -> bool:
        """True if a disk of the given radius fits at (px, py)."""
        return self.in_bounds(px, py) and self.clearance(px, py) >= radius

    def pose_valid(self, pose: Pose) -> bool:
        return self.in_bounds(pose.x, pose.y) and not self.inside_obstacle(pose.x, pose.y)

    # ------------------------------------------------------------------
    # occupancy grid

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (
            max(1, int(round(self.height / self.grid_resolution))),
            max(1, int(round(self.width / self.grid_resolution))),
        )

    def free_mask(self) -> np.ndarray:
        """Boolean (ny, nx) mask of cells whose center clears obstacles and walls by the agent radius."""
        if self._free_mask is None:
            ny, nx = self.grid_shape
            res = self.grid_resolution
            cx = (np.arange(nx) + 0.5) * res
            cy = (np.arange(ny) + 0.5) * res
            gx, gy = np.meshgrid(cx, cy)
            clear = np.minimum.reduce([gx, self.width - gx, gy, self.height - gy])
            for r in self.obstacles:
                dx = np.maximum(np.maximum(r.x - gx, 0.0), gx - (r.x + r.w))
                dy = np.maximum(np.maximum(r.y - gy, 0.0), gy - (r.y + r.h))
                clear = np.minimum(clear, np.hypot(dx, dy))
            self._free_mask = clear >= AGENT_RADIUS
        return self._free_mask

    def free_space_connected(self) -> bool:
        """Check the scene invariant: eroded free space is one connected component."""
        mask = self.free_mask()
        if not mask.any():
            return False
        _, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
        return n == 1

    def cell_of(self, px: float, py: float) -> tuple[int, int]:
        ny, nx = self.grid_shape
        ix = min(nx - 1, max(0, int(px / self.grid_resolution)))
        iy = min(ny - 1, max(0, int(py / self.grid_resolution)))
        return iy, ix

    def cell_center(self, iy: int, ix: int) -> tuple[float, float]:
        res = self.grid_resolution
        return ((ix + 0.5) * res, (iy + 0.5) * res)

    def snap_to_free_cell(self, px: float, py: float) -> int:
        """Flat index of the free cell nearest to the point."""
        if not self.in_bounds(px, py):
            raise ValueError(f"point ({px}, {py}) outside scene bounds")
        mask = self.free_mask()
        ny, nx = self.grid_shape
        iy, ix = self.cell_of(px, py)
        if mask[iy, ix]:
            return iy * nx + ix
        if self._free_centers is None:
            ys, xs = np.nonzero(mask)
            res = self.grid_resolution
            self._free_centers = np.stack(
                [(xs + 0.5) * res, (ys + 0.5) * res, (ys * nx + xs).astype(float)], axis=1
            )
        fc = self._free_centers
        if fc.shape[0] == 0:
            raise ValueError(f"scene {self.id} has no free cells")
        d2 = (fc[:, 0] - px) ** 2 + (fc[:, 1] - py) ** 2
        return int(fc[int(np.argmin(d2)), 2])

    def _grid_graph(self) -> csr_matrix:
        if self._graph is None:
            mask = self.free_mask()
            ny, nx = self.grid_shape
            res = self.grid_resolution
            flat = np.arange(ny * nx).reshape(ny, nx)
            rows, cols, data = [], [], []
            # east, north, northeast, northwest; dijkstra treats the graph as undirected
            steps = [((0, 1), res), ((1, 0), res), ((1, 1), res * math.sqrt(2)), ((1, -1), res * math.sqrt(2))]
            for (dy, dx), w in steps:
                src = mask[max(0, -dy) : ny - max(0, dy), max(0, -dx) : nx - max(0, dx)]
                dst = mask[max(0, dy) : ny - max(0, -dy), max(0, dx) : nx - max(0, -dx)]
                both = src & dst
                a = flat[max(0, -dy) : ny - max(0, dy), max(0, -dx) : nx - max(0, dx)][both]
                b = flat[max(0, dy) : ny - max(0, -dy), max(0, dx) : nx - max(0, -dx)][both]
                rows.append(a)
                cols.append(b)
                data.append(np.full(a.shape, w))
            self._graph = csr_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                shape=(ny * nx, ny * nx),
            )
        return self._graph

    def distance_field(self, goal_x: float, goal_y: float) -> np.ndarray:
        """Geodesic distance (meters) from every grid cell to the goal point; cached per goal cell."""
        src = self.snap_to_free_cell(goal_x, goal_y)
        field = self._field_cache.get(src)
        if field is None:
            field = dijkstra(self._grid_graph(), directed=False, indices=src)
            if len(self._field_cache) >= 16:
                self._field_cache.pop(next(iter(self._field_cache)))
            self._field_cache[src] = field
        return field

    # ------------------------------------------------------------------
    # serialization (scene file: JSON, lengths in meters)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "obstacles": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in self.obstacles],
            "wall_absorption": self.wall_absorption,
            "grid_resolution": self.grid_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenePlan":
        return cls(
            id=d["id"],
            width=d["width"],
            height=d["height"],
            obstacles=[Rect(o["x"], o["y"], o["w"], o["h"]) for o in d["obstacles"]],
            wall_absorption=d["wall_absorption"],
            grid_resolution=d.get("grid_resolution", DEFAULT_GRID_RESOLUTION),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ScenePlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ----------------------------------------------------------------------
# motion

def _wrap_lattice(heading: float) -> float:
    # Exact on the 15-degree heading lattice; keeps arbitrary inputs in (-pi, pi].
    if heading > _HEADING_WRAP_HI:
        heading -= _HEADING_WRAP_SPAN
    elif heading <= -_HEADING_WRAP_HI:
        heading += _HEADING_WRAP_SPAN
    return heading


def _ray_box_entry(px: float, py: float, dx: float, dy: float, x0: float, y0: float, x1: float, y1: float) -> float:
    """First t >= 0 at which (px, py) + t*(dx, dy) is inside the open box, or inf."""
    tmin, tmax = 0.0, math.inf
    for p, d, lo, hi in ((px, dx, x0, x1), (py, dy, y0, y1)):
        if d == 0.0:
            if not lo < p < hi:
                return math.inf
        else:
            ta = (lo - p) / d
            tb = (hi - p) / d
            if ta > tb:
                ta, tb = tb, ta
            tmin = max(tmin, ta)
            tmax = min(tmax, tb)
    return tmin if tmin < tmax else math.inf


def _ray_disk_entry(px: float, py: float, dx: float, dy: float, cx: float, cy: float, r: float) -> float:
    """First t >= 0 at which the ray enters the open disk, or inf."""
    fx, fy = px - cx, py - cy
    c = fx * fx + fy * fy - r * r
    if c < 0.0:
        return 0.0
    b = fx * dx + fy * dy
    if b >= 0.0:
        return math.inf
    disc = b * b - c  # direction is unit-length
    if disc <= 0.0:
        return math.inf
    return max(0.0, -b - math.sqrt(disc))


def free_travel(scene: ScenePlan, px: float, py: float, dx: float, dy: float, limit: float) -> float:
    """Largest travel distance <= limit before the agent disk contacts an obstacle or wall.

    A pose produced by a previous contact stop sits at the clearance boundary
    up to float noise; each constraint therefore never demands more clearance
    than currently held, so tangent and outward moves stay legal while inward
    moves truncate to (effectively) zero.
    """
    r = AGENT_RADIUS - _CONTACT_TOL
    t = limit
    # boundary walls: only the walls being approached constrain, clamped at 0
    if dx > 0:
        t = min(t, max(0.0, scene.width - r - px) / dx)
    elif dx < 0:
        t = min(t, max(0.0, px - r) / -dx)
    if dy > 0:
        t = min(t, max(0.0, scene.height - r - py) / dy)
    elif dy < 0:
        t = min(t, max(0.0, py - r) / -dy)
    for rect in scene.obstacles:
        d_cur = rect.distance(px, py)
        r_use = r if d_cur >= r else max(d_cur - _CONTACT_TOL, 0.0)
        x0, y0, x1, y1 = rect.x, rect.y, rect.x + rect.w, rect.y + rect.h
        entry = min(
            _ray_box_entry(px, py, dx, dy, x0 - r_use, y0, x1 + r_use, y1),
            _ray_box_entry(px, py, dx, dy, x0, y0 - r_use, x1, y1 + r_use),
        )
        if entry > 0.0:
            entry = min(
                entry,
                _ray_disk_entry(px, py, dx, dy, x0, y0, r_use),
                _ray_disk_entry(px, py, dx, dy, x1, y0, r_use),
                _ray_disk_entry(px, py, dx, dy, x0, y1, r_use),
                _ray_disk_entry(px, py, dx, dy, x1, y1, r_use),
            )
        t = min(t, entry)
        if t <= 0.0:
            return 0.0
    return max(0.0, t)


def step_pose(scene: ScenePlan, pose: Pose, action: Action) -> tuple[Pose, float]:
    """Apply one discrete action; returns the new pose and the actual translation in meters.

    Turns are exactly +/-15 degrees on the heading lattice; MoveForward
    translates up to 0.25 m along the heading, truncated at first contact of
    the agent disk (radius 0.1 m) with an obstacle or wall (stop-at-contact,
    no sliding).
    """
    if not scene.pose_valid(pose):
        raise ValueError(f"pose ({pose.x}, {pose.y}) is not in free space of scene {scene.id}")
    if action is Action.STOP:
        return pose, 0.0
    if action is Action.TURN_LEFT:
        return Pose(pose.x, pose.y, _wrap_lattice(pose.heading + TURN_INCREMENT)), 0.0
    if action is Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, _wrap_lattice(pose.heading - TURN_INCREMENT)), 0.0
    dx, dy = math.cos(pose.heading), math.sin(pose.heading)
    moved = free_travel(scene, pose.x, pose.y, dx, dy, FORWARD_STEP)
    if moved <= 1e-6:  # sub-micron contact creep counts as blocked
        return pose, 0.0
    return Pose(pose.x + moved * dx, pose.y + moved * dy, pose.heading), moved


def relative_goal(pose: Pose, goal: tuple[float, float]) -> tuple[float, float]:
    """Azimuth (CCW-positive: + means the goal is to the agent's left) and Euclidean distance."""
    gx, gy = goal[0] - pose.x, goal[1] - pose.y
    azimuth = wrap_angle(math.atan2(gy, gx) - pose.heading)
    return azimuth, math.hypot(gx, gy)


# ----------------------------------------------------------------------
# geodesics and paths

def geodesic_distance(scene: ScenePlan, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Length of the shortest 8-connected grid path between the free cells nearest a and b.

    Returns math.inf if the endpoints are disconnected (ruled out by the scene
    connectivity invariant).
    """
    if not scene.in_bounds(*a) or not scene.in_bounds(*b):
        raise ValueError("geodesic endpoints must lie inside scene bounds")
    ca = scene.snap_to_free_cell(*a)
    field = scene.distance_field(*b)
    d = float(field[ca])
    return d if math.isfinite(d) else math.inf


def _segment_segment_dist2(ax, ay, bx, by, cx, cy, dx, dy) -> float:
    # squared min distance between segments AB and CD
    ux, uy = bx - ax, by - ay
    vx, vy = dx - cx, dy - cy
    wx, wy = ax - cx, ay - cy
    a = ux * ux + uy * uy
    b = ux * vx + uy * vy
    c = vx * vx + vy * vy
    d = ux * wx + uy * wy
    e = vx * wx + vy * wy
    den = a * c - b * b
    if den > 1e-18:
        s = min(1.0, max(0.0, (b * e - c * d) / den))
    else:
        s = 0.0
    t = (b * s + e) / c if c > 1e-18 else 0.0
    t = min(1.0, max(0.0, t))
    # refine s for clamped t
    if a > 1e-18:
        s = min(1.0, max(0.0, (b * t - d) / a))
    px, py = ax + s * ux - (cx + t * vx), ay + s * uy - (cy + t * vy)
    return px * px + py * py


def _segment_rect_clearance(ax: float, ay: float, bx: float, by: float, rect: Rect) -> float:
    x0, y0, x1, y1 = rect.x, rect.y, rect.x + rect.w, rect.y + rect.h
    if rect.contains(ax, ay) or rect.contains(bx, by):
        return 0.0
    # segment crossing the rectangle interior
    ex, ey = bx - ax, by - ay
    length = math.hypot(ex, ey)
    if length > 0:
        entry = _ray_box_entry(ax, ay, ex / length, ey / length, x0, y0, x1, y1)
        if entry < length:
            return 0.0
    edges = ((x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0))
    return math.sqrt(min(_segment_segment_dist2(ax, ay, bx, by, *e) for e in edges))


def segment_blocked(scene: ScenePlan, a: tuple[float, float], b: tuple[float, float]) -> bool:
    """True if the segment a->b passes through the interior of any obstacle."""
    ex, ey = b[0] - a[0], b[1] - a[1]
    length = math.hypot(ex, ey)
    if length == 0.0:
        return scene.inside_obstacle(a[0], a[1])
    dx, dy = ex / length, ey / length
    for rect in scene.obstacles:
        if _ray_box_entry(a[0], a[1], dx, dy, rect.x, rect.y, rect.x + rect.w, rect.y + rect.h) < length:
            return True
    return False


def line_of_sight(scene: ScenePlan, a: tuple[float, float], b: tuple[float, float], radius: float = AGENT_RADIUS) -> bool:
    """True if a disk of the given radius can travel the straight segment a->b."""
    r = radius - _CONTACT_TOL
    for px, py in (a, b):
        if not (r <= px <= scene.width - r and r <= py <= scene.height - r):
            return False
    for rect in scene.obstacles:
        if _segment_rect_clearance(a[0], a[1], b[0], b[1], rect) < r:
            return False
    return True


# Shortcut clearance margin beyond the agent radius: leaves room for the
# 15-degree heading quantization of path followers to weave without contact.
PATH_MARGIN = 0.15


def shortest_path(scene: ScenePlan, a: tuple[float, float], b: tuple[float, float]) -> list[tuple[float, float]]:
    """Waypoints from a to b: grid shortest path simplified by greedy line-of-sight shortcutting."""
    if not scene.in_bounds(*a) or not scene.in_bounds(*b):
        raise ValueError("path endpoints must lie inside scene bounds")
    if a == b:
        return [a]
    ny, nx = scene.grid_shape
    ca = scene.snap_to_free_cell(*a)
    cb = scene.snap_to_free_cell(*b)
    if ca == cb:
        return [a, b]
    _, pred = dijkstra(scene._grid_graph(), directed=False, indices=ca, return_predecessors=True)
    if pred[cb] < 0 and cb != ca:
        raise ValueError(f"no path between {a} and {b} in scene {scene.id}")
    cells = [cb]
    while cells[-1] != ca:
        cells.append(int(pred[cells[-1]]))
    cells.reverse()
    points = [a] + [scene.cell_center(c // nx, c % nx) for c in cells[1:-1]] + [b]
    path = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not line_of_sight(scene, points[i], points[j], radius=AGENT_RADIUS + PATH_MARGIN):
            j -= 1
        path.append(points[j])
        i = j
    return path


def path_length(points: list[tuple[float, float]]) -> float:
    return sum(math.hypot(q[0] - p[0], q[1] - p[1]) for p, q in zip(points, points[1:]))


# ----------------------------------------------------------------------
# range scan (depth proxy)

def range_scan(scene: ScenePlan, pose: Pose, n_rays: int = SCAN_RAYS, max_range: float = SCAN_MAX_RANGE) -> np.ndarray:
    """Ranges to the first obstacle/boundary hit along rays over a 90-degree forward arc.

    Rays are evenly spaced over [-45, +45] degrees about the heading, ordered
    right to left (CCW); ranges are capped at max_range.
    """
    angles = pose.heading + np.linspace(-SCAN_HALF_ARC, SCAN_HALF_ARC, n_rays)
    dxs, dys = np.cos(angles), np.sin(angles)
    hits = np.full(n_rays, max_range)
    with np.errstate(divide="ignore", invalid="ignore"):
        # boundary exit
        for p, d, lo, hi in ((pose.x, dxs, 0.0, scene.width), (pose.y, dys, 0.0, scene.height)):
            t = np.where(d > 0, (hi - p) / d, np.where(d < 0, (lo - p) / d, np.inf))
            hits = np.minimum(hits, t)
        # obstacle entries (slab test per rectangle)
        for rect in scene.obstacles:
            t1 = (rect.x - pose.x) / dxs
            t2 = (rect.x + rect.w - pose.x) / dxs
            t3 = (rect.y - pose.y) / dys
            t4 = (rect.y + rect.h - pose.y) / dys
            tmin = np.maximum(np.minimum(t1, t2), np.minimum(t3, t4))
            tmax = np.minimum(np.maximum(t1, t2), np.maximum(t3, t4))
            hit = (tmax >= tmin) & (tmax > 0)
            hits = np.where(hit, np.minimum(hits, np.maximum(tmin, 0.0)), hits)
    return np.minimum(hits, max_range)
