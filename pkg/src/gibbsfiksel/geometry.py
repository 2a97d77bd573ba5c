"""Polygonal observation windows.

Windows are thin immutable wrappers around shapely geometries.  Coordinates
are in micrometres throughout; no unit conversion happens here.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from functools import reduce, wraps

import numpy as np
import shapely
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import ConvexHull, QhullError
from shapely.geometry import MultiPolygon, Polygon, box
from shapely.geometry.polygon import orient

__all__ = [
    "BOUNDARY_TOL",
    "GeometryError",
    "DegenerateGeometryError",
    "CannotDilateError",
    "EmptyWindowError",
    "PolygonalWindow",
    "TileGrid",
    "convex_hull",
    "ripley_rasson_factor",
    "ripley_rasson_window",
    "intersect_windows",
    "erode_border",
    "tile_grid",
]

BOUNDARY_TOL = 1e-9
SLIVER_FRACTION = 1e-9


class GeometryError(ValueError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class CannotDilateError(GeometryError):
    pass


class EmptyWindowError(GeometryError):
    pass


# GEOS prepared geometries build their search indexes lazily and are not safe
# to query from several threads at once.  Fits share one window between worker
# threads, so every operation on a window's geometry holds this lock.
_GEOS_LOCK = threading.RLock()


def _serialised(fn):
    @wraps(fn)
    def locked(*args, **kwargs):
        with _GEOS_LOCK:
            return fn(*args, **kwargs)

    return locked


def _clean(geom, reference_area=None):
    """Return a valid (Multi)Polygon with slivers and collinear vertices removed."""
    if geom.is_empty:
        raise EmptyWindowError("window is empty")
    if not geom.is_valid:
        geom = shapely.make_valid(geom)
    parts = [g for g in getattr(geom, "geoms", [geom]) if isinstance(g, (Polygon, MultiPolygon))]
    polys = []
    for p in parts:
        polys.extend(getattr(p, "geoms", [p]))
    ref = reference_area if reference_area is not None else sum(p.area for p in polys)
    polys = [p for p in polys if p.area > SLIVER_FRACTION * ref]
    if not polys:
        raise EmptyWindowError("window is empty")
    polys = [orient(shapely.simplify(p, 0.0), 1.0) for p in polys]
    if len(polys) == 1:
        return polys[0]
    return MultiPolygon(polys)


@dataclass(frozen=True, eq=False)
class PolygonalWindow:
    """An observation window made of one or more polygons with optional holes.

    Outer rings are stored counterclockwise and holes clockwise.  Points on
    the boundary (within ``BOUNDARY_TOL``) count as inside.
    """

    geom: Polygon | MultiPolygon
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        geom = _clean(self.geom)
        shapely.prepare(geom)
        object.__setattr__(self, "geom", geom)

    @classmethod
    def from_rings(cls, rings):
        """Build a window from vertex rings; orientation separates outers from holes."""
        outers, holes = [], []
        for ring in rings:
            ring = np.asarray(ring, dtype=float)
            if len(ring) < 3:
                raise DegenerateGeometryError("rings need at least 3 vertices")
            x, y = ring[:, 0], ring[:, 1]
            signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            (outers if signed > 0 else holes).append(ring)
        if not outers:
            # a single clockwise ring is still a window
            outers, holes = [holes[0][::-1]], holes[1:]
        shells = [Polygon(o) for o in outers]
        assigned = [[] for _ in shells]
        for h in holes:
            hp = Polygon(h)
            k = next((i for i, s in enumerate(shells) if s.contains(hp.representative_point())), None)
            if k is None:
                raise DegenerateGeometryError("hole ring lies outside every outer ring")
            assigned[k].append(h)
        polys = [Polygon(o, assigned[i]) for i, o in enumerate(outers)]
        geom = polys[0] if len(polys) == 1 else MultiPolygon(polys)
        if not geom.is_valid:
            raise DegenerateGeometryError(f"rings do not form a simple polygon: {shapely.is_valid_reason(geom)}")
        return cls(geom)

    @classmethod
    def rectangle(cls, xmin, ymin, xmax, ymax):
        return cls(box(xmin, ymin, xmax, ymax))

    @property
    def polygons(self):
        return list(getattr(self.geom, "geoms", [self.geom]))

    @property
    def rings(self):
        out = []
        for p in self.polygons:
            out.append(np.asarray(p.exterior.coords)[:-1])
            out.extend(np.asarray(r.coords)[:-1] for r in p.interiors)
        return out

    @property
    def area(self):
        return float(self.geom.area)

    @property
    def bounds(self):
        return tuple(float(b) for b in self.geom.bounds)

    @property
    def diameter(self):
        hull = np.asarray(self.geom.convex_hull.exterior.coords)
        d = hull[:, None, :] - hull[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def is_rectangle(self):
        if isinstance(self.geom, MultiPolygon) or self.geom.interiors:
            return False
        xmin, ymin, xmax, ymax = self.bounds
        return abs(self.area - (xmax - xmin) * (ymax - ymin)) <= 1e-12 * self.area

    @_serialised
    def contains(self, x, y=None):
        """Vectorised point-in-window test; boundary points count as inside."""
        if y is None:
            pts = np.atleast_2d(np.asarray(x, dtype=float))
            x, y = pts[:, 0], pts[:, 1]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = shapely.intersects_xy(self.geom, x, y)
        if not np.all(inside):
            out = ~inside
            near = shapely.distance(self.geom.boundary, shapely.points(x[out], y[out])) <= BOUNDARY_TOL
            inside = inside.copy()
            inside[out] = near
        return inside

    def translate(self, dx, dy):
        return PolygonalWindow(shapely.affinity.translate(self.geom, dx, dy))

    @_serialised
    def set_covariance(self, dx, dy):
        """Area of ``W ∩ (W + (dx, dy))`` for arrays of displacements.

        Exact for rectangles.  Other windows interpolate a lattice of exact
        clipped areas, cached per window and displacement radius.
        """
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        if self.is_rectangle:
            xmin, ymin, xmax, ymax = self.bounds
            return np.clip(xmax - xmin - np.abs(dx), 0, None) * np.clip(ymax - ymin - np.abs(dy), 0, None)
        rmax = float(np.max(np.hypot(dx, dy), initial=0.0))
        interp = None
        for key, fn in self._cache.items():
            if key[0] == "setcov" and key[1] >= rmax:
                interp = fn
                break
        if interp is None:
            reach = max(rmax, 1e-12) * 1.0001
            ticks = np.linspace(-reach, reach, 65)
            gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
            shifted = shapely.affinity.translate
            vals = np.array(
                [self.geom.intersection(shifted(self.geom, a, b)).area for a, b in zip(gx.ravel(), gy.ravel())]
            ).reshape(gx.shape)
            interp = RegularGridInterpolator((ticks, ticks), vals)
            self._cache[("setcov", reach)] = interp
        return interp(np.column_stack([dx.ravel(), dy.ravel()])).reshape(dx.shape)

    def sample_uniform(self, n, rng):
        """Draw ``n`` independent uniform points by rejection from the bounding box."""
        xmin, ymin, xmax, ymax = self.bounds
        out = np.empty((0, 2))
        while len(out) < n:
            k = max(16, int(1.3 * (n - len(out)) * (xmax - xmin) * (ymax - ymin) / self.area))
            cand = np.column_stack([rng.uniform(xmin, xmax, k), rng.uniform(ymin, ymax, k)])
            out = np.vstack([out, cand[self.contains(cand)]])
        return out[:n]

    def to_dict(self):
        return {"rings": [r.tolist() for r in self.rings], "area": self.area}

    @classmethod
    def from_dict(cls, d):
        return cls.from_rings(d["rings"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def convex_hull(points):
    """Minimal convex polygon containing ``points``.

    Raises
    ------
    DegenerateGeometryError
        If fewer than three non-collinear points are given.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise DegenerateGeometryError("convex hull needs at least 3 non-collinear points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateGeometryError("points are collinear or coincident") from exc
    return PolygonalWindow(Polygon(pts[hull.vertices]))


def ripley_rasson_factor(n, n_vertices):
    """Dilation factor ``1/sqrt(1 - w/n)`` for ``n`` points with ``w`` hull vertices."""
    if n <= n_vertices:
        raise CannotDilateError(f"need more points than hull vertices (n={n}, vertices={n_vertices})")
    return 1.0 / np.sqrt(1.0 - n_vertices / n)


def ripley_rasson_window(points):
    """Convex hull of the points dilated about its centroid (Ripley-Rasson estimate).

    ``points`` may be an ``(n, 2)`` array or anything with a ``coords`` attribute.
    """
    pts = np.asarray(getattr(points, "coords", points), dtype=float)
    hull = convex_hull(pts)
    n_vertices = len(hull.rings[0])
    factor = ripley_rasson_factor(len(pts), n_vertices)
    c = hull.geom.centroid
    return PolygonalWindow(shapely.affinity.scale(hull.geom, factor, factor, origin=c))


@_serialised
def intersect_windows(windows):
    """Set intersection of one or more windows."""
    windows = list(windows)
    if not windows:
        raise ValueError("need at least one window")
    smallest = min(w.area for w in windows)
    geom = reduce(lambda a, b: a.intersection(b), (w.geom for w in windows))
    if geom.is_empty or geom.area <= SLIVER_FRACTION * smallest:
        raise EmptyWindowError("windows do not overlap")
    return PolygonalWindow(_clean(geom, reference_area=geom.area))


@_serialised
def erode_border(window, margin):
    """Points of ``window`` at distance at least ``margin`` from its boundary."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if margin == 0:
        return window
    geom = window.geom.buffer(-margin, quad_segs=32)
    if geom.is_empty or geom.area <= SLIVER_FRACTION * window.area:
        raise EmptyWindowError(f"erosion by {margin} empties the window")
    return PolygonalWindow(_clean(geom, reference_area=window.area))


@dataclass(frozen=True, eq=False)
class TileGrid:
    """Axis-aligned grid over a window's bounding box with clipped tile areas.

    Tiles are indexed row-major: ``index = iy * nx + ix``.
    """

    window: PolygonalWindow
    nx: int
    ny: int
    x0: float
    y0: float
    dx: float
    dy: float
    areas: np.ndarray
    points: np.ndarray  # one representative point per tile, inside the clipped tile when possible

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def centers(self):
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack([self.x0 + (ix.ravel() + 0.5) * self.dx, self.y0 + (iy.ravel() + 0.5) * self.dy])

    def cell_index(self, x, y=None):
        """Flat tile index for each point; -1 outside the bounding box."""
        if y is None:
            pts = np.atleast_2d(np.asarray(x, dtype=float))
            x, y = pts[:, 0], pts[:, 1]
        ix = np.floor((np.asarray(x) - self.x0) / self.dx).astype(int)
        iy = np.floor((np.asarray(y) - self.y0) / self.dy).astype(int)
        # points on the far edge belong to the last tile
        ix = np.where((ix == self.nx) & np.isclose(x, self.x0 + self.nx * self.dx), self.nx - 1, ix)
        iy = np.where((iy == self.ny) & np.isclose(y, self.y0 + self.ny * self.dy), self.ny - 1, iy)
        ok = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return np.where(ok, iy * self.nx + ix, -1)

    def same_as(self, other):
        return (
            self is other
            or (
                self.window is other.window
                and (self.nx, self.ny, self.x0, self.y0, self.dx, self.dy)
                == (other.nx, other.ny, other.x0, other.y0, other.dx, other.dy)
            )
        )


@_serialised
def tile_grid(window, nx, ny=None):
    """Partition the bounding box of ``window`` into ``nx`` by ``ny`` tiles clipped to the window."""
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be >= 1")
    xmin, ymin, xmax, ymax = window.bounds
    dx = (xmax - xmin) / nx
    dy = (ymax - ymin) / ny
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    ix, iy = ix.ravel(), iy.ravel()
    x0s = xmin + ix * dx
    y0s = ymin + iy * dy
    cells = shapely.box(x0s, y0s, x0s + dx, y0s + dy)
    full = shapely.contains(window.geom, cells)
    areas = np.where(full, dx * dy, 0.0)
    points = np.column_stack([x0s + 0.5 * dx, y0s + 0.5 * dy])
    partial = np.flatnonzero(~full & shapely.intersects(window.geom, cells))
    if len(partial):
        pieces = shapely.intersection(cells[partial], window.geom)
        areas[partial] = shapely.area(pieces)
        reps = shapely.point_on_surface(pieces)
        centroids = shapely.centroid(pieces)
        use_centroid = shapely.contains(pieces, centroids)
        chosen = np.where(use_centroid, centroids, reps)
        ok = ~shapely.is_empty(chosen)
        points[partial[ok]] = shapely.get_coordinates(chosen[ok])
    return TileGrid(window, nx, ny, xmin, ymin, dx, dy, areas, points)
