"""Closed curves, rod layouts and point-in-domain tests."""

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.spatial

from .errors import GeometryError

log = logging.getLogger(__name__)

OVERSAMPLING = 32


class Location(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    NEAR_BOUNDARY = "near_boundary"


@dataclass(frozen=True)
class CurveShape:
    """Polar radius ``r(t) = mean_radius * (1 + (amp/mean_radius) cos(lobes t))``."""

    mean_radius: float
    lobe_amplitude: float = 0.0
    lobes: int = 3

    def radius(self, t):
        return self.mean_radius + self.lobe_amplitude * np.cos(self.lobes * t)

    def radius_derivative(self, t):
        return -self.lobes * self.lobe_amplitude * np.sin(self.lobes * t)

    def scaled(self, ratio):
        return CurveShape(self.mean_radius * ratio, self.lobe_amplitude * ratio, self.lobes)


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Closed star-shaped curve sampled at M arc-length-uniform points.

    ``samples[m]`` is the m-th point y'_m, counter-clockwise, and
    ``arc_lengths[m]`` its arc-length coordinate measured from the curve
    point at polar angle ``rotation``.
    """

    shape: CurveShape
    center: tuple
    rotation: float
    samples: np.ndarray = field(repr=False)
    arc_lengths: np.ndarray = field(repr=False)
    length: float
    label: str = ""

    @property
    def M(self):
        return len(self.samples)

    @property
    def spacing(self):
        return self.length / self.M

    def point_at_angle(self, theta):
        """Curve point(s) at unrotated polar parameter ``theta``."""
        theta = np.asarray(theta, dtype=float)
        r = self.shape.radius(theta)
        ang = theta + self.rotation
        return np.stack(
            [self.center[0] + r * np.cos(ang), self.center[1] + r * np.sin(ang)], axis=-1
        )

    def polar_radius(self, points):
        """Distance from the center and the analytic curve radius in that direction."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        rho = np.hypot(p[..., 0], p[..., 1])
        theta = np.arctan2(p[..., 1], p[..., 0]) - self.rotation
        return rho, self.shape.radius(theta)

    def resample(self, M, offset=0.0):
        """Same curve sampled at M points, shifted by ``offset`` samples."""
        return _sample_curve(self.shape, self.center, self.rotation, M, offset, self.label)

    def midpoints(self):
        """Chord midpoints ``(y'_m + y'_{m+1}) / 2`` with cyclic wrap."""
        return 0.5 * (self.samples + np.roll(self.samples, -1, axis=0))

    def to_rows(self):
        return [(float(x), float(y)) for x, y in self.samples]


def _sample_curve(shape, center, rotation, M, offset=0.0, label=""):
    n_dense = OVERSAMPLING * M
    t = np.linspace(0.0, 2.0 * np.pi, n_dense + 1)
    r = shape.radius(t)
    dr = shape.radius_derivative(t)
    speed = np.hypot(r, dr)
    # cumulative trapezoid; exact enough for periodic smooth integrands
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
    length = cumulative[-1]
    targets = (np.arange(M) + offset) * (length / M)
    targets = np.mod(targets, length)
    theta = np.interp(targets, cumulative, t)
    rr = shape.radius(theta)
    ang = theta + rotation
    samples = np.stack([center[0] + rr * np.cos(ang), center[1] + rr * np.sin(ang)], axis=1)
    return BoundaryCurve(
        shape=shape,
        center=(float(center[0]), float(center[1])),
        rotation=float(rotation),
        samples=samples,
        arc_lengths=targets,
        length=float(length),
        label=label,
    )


def make_trefoil(mean_radius, lobe_amplitude, lobes=3, center=(0.0, 0.0), rotation=0.0, M=64, label=""):
    """Cosine-lobed polar curve sampled arc-length-uniformly at M points.

    The curve is ``r(t) = mean_radius + lobe_amplitude * cos(lobes * t)``,
    rotated by ``rotation`` radians and translated to ``center``.
    """
    if not mean_radius > 0:
        raise GeometryError("mean_radius must be positive")
    if lobe_amplitude < 0:
        raise GeometryError("lobe_amplitude must be non-negative")
    if lobe_amplitude >= mean_radius:
        raise GeometryError(
            "lobe_amplitude %g >= mean_radius %g: curve would self-intersect"
            % (lobe_amplitude, mean_radius)
        )
    if int(lobes) != lobes or lobes < 1:
        raise GeometryError("lobes must be a positive integer")
    if M < 16:
        raise GeometryError("need at least 16 samples, got %d" % M)
    shape = CurveShape(float(mean_radius), float(lobe_amplitude), int(lobes))
    return _sample_curve(shape, center, rotation, int(M), 0.0, label)


def make_circle(radius, center=(0.0, 0.0), M=64, label=""):
    return make_trefoil(radius, 0.0, 1, center, 0.0, M, label)


def homothety(curve, ratio):
    """Scale ``curve`` about its center by ``ratio``; M is preserved."""
    if not ratio > 0:
        raise GeometryError("homothety ratio must be positive")
    c = np.asarray(curve.center)
    return BoundaryCurve(
        shape=curve.shape.scaled(ratio),
        center=curve.center,
        rotation=curve.rotation,
        samples=c + ratio * (curve.samples - c),
        arc_lengths=ratio * curve.arc_lengths,
        length=ratio * curve.length,
        label=curve.label,
    )


def _segment_distance(points, curve):
    """Distance from each point to the closed sampled polygon."""
    a = curve.samples
    b = np.roll(a, -1, axis=0)
    ab = b - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    out = np.empty(len(points))
    for start in range(0, len(points), 2048):
        p = points[start:start + 2048, None, :]
        ap = p - a[None]
        t = np.clip(np.einsum("nij,ij->ni", ap, ab) / ab2, 0.0, 1.0)
        d = ap - t[..., None] * ab[None]
        out[start:start + 2048] = np.sqrt(np.min(np.einsum("nij,nij->ni", d, d), axis=1))
    return out


def _winding_inside(points, curve):
    a = curve.samples
    out = np.zeros(len(points), dtype=bool)
    lo, hi = a.min(axis=0), a.max(axis=0)
    boxed = np.flatnonzero(np.all((points >= lo) & (points <= hi), axis=1))
    if len(boxed) < len(points):
        out[boxed] = _winding_inside(points[boxed], curve)
        return out
    b = np.roll(a, -1, axis=0)
    for start in range(0, len(points), 2048):
        p = points[start:start + 2048]
        px, py = p[:, 0:1], p[:, 1:2]
        ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
        cross = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
        up = (ay <= py) & (by > py) & (cross > 0)
        down = (ay > py) & (by <= py) & (cross < 0)
        winding = up.sum(axis=1) - down.sum(axis=1)
        out[start:start + 2048] = winding != 0
    return out


def classify(curve, points, band=None):
    """Vectorised :func:`contains`: array of :class:`Location` values."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    band = curve.spacing if band is None else band
    inside = _winding_inside(pts, curve)
    near = _segment_distance(pts, curve) < band
    out = np.where(inside, Location.INSIDE, Location.OUTSIDE).astype(object)
    out[near] = Location.NEAR_BOUNDARY
    return out


def contains(curve, x):
    """Locate point ``x`` relative to the sampled curve.

    Points within one sample spacing of the polygon are reported as
    ``Location.NEAR_BOUNDARY``.
    """
    return classify(curve, np.asarray(x, dtype=float)[None, :])[0]


def inside_mask(curve, points, margin=0.0):
    """True where points are inside the polygon and at least ``margin`` from it."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mask = _winding_inside(pts, curve)
    if margin > 0 and np.any(mask):
        idx = np.flatnonzero(mask)
        mask[idx] = _segment_distance(pts[idx], curve) >= margin
    return mask


def distance_to_curve(curve, points):
    return _segment_distance(np.atleast_2d(np.asarray(points, dtype=float)), curve)


@dataclass(frozen=True)
class Scatterer:
    """Circular dielectric rod; ``permittivity`` is the relative permittivity."""

    position: tuple
    radius: float
    permittivity: float = 12.0

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("rod radius must be positive")
        if isinstance(self.permittivity, complex) or not self.permittivity >= 1:
            raise GeometryError("permittivity must be real and >= 1")


def rod_arrays(scatterers):
    """Positions (N, 2), radii (N,) and permittivities (N,) as arrays."""
    if not scatterers:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
    pos = np.array([s.position for s in scatterers], dtype=float)
    rad = np.array([s.radius for s in scatterers], dtype=float)
    eps = np.array([s.permittivity for s in scatterers], dtype=float)
    return pos, rad, eps


def check_no_overlap(scatterers):
    pos, rad, _ = rod_arrays(scatterers)
    if len(pos) < 2:
        return
    pairs = scipy.spatial.cKDTree(pos).query_pairs(2.0 * float(rad.max()), output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        bad = np.hypot(*(pos[i] - pos[j]).T) <= rad[i] + rad[j]
        if np.any(bad):
            first = np.lexsort((j[bad], i[bad]))[0]
            raise GeometryError("rods %d and %d overlap" % (i[bad][first], j[bad][first]))


@dataclass(frozen=True, eq=False)
class Cluster:
    """Rods enclosed by a curve that will carry their monopole layer."""

    scatterers: tuple
    enclosure: BoundaryCurve

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))

    def validate(self):
        check_no_overlap(self.scatterers)
        pos, rad, _ = rod_arrays(self.scatterers)
        if len(pos) == 0:
            return
        inside = _winding_inside(pos, self.enclosure)
        dist = _segment_distance(pos, self.enclosure)
        bad = ~inside | (dist < 2.0 * rad)
        if np.any(bad):
            raise GeometryError(
                "%d rod(s) are not strictly inside the enclosure %r"
                % (int(bad.sum()), self.enclosure.label)
            )


def fill_with_rods(curve, lattice_pitch, rod_radius, permittivity=12.0, hole_fraction=0.0, seed=0):
    """Square-lattice rods strictly inside ``curve`` with random holes.

    Lattice nodes are ``center + pitch * (i, j)``; a node becomes a rod when
    it lies inside the curve at distance at least ``pitch / 2`` from it.
    Then ``round(hole_fraction * count)`` rods, picked with
    ``numpy.random.default_rng(seed)``, are removed. Rods are ordered by
    lattice row, then column.
    """
    if not lattice_pitch > 2.0 * rod_radius:
        raise GeometryError("lattice pitch must exceed the rod diameter")
    if not 0.0 <= hole_fraction < 1.0:
        raise GeometryError("hole_fraction must lie in [0, 1)")
    cx, cy = curve.center
    extent = np.max(np.abs(curve.samples - np.asarray(curve.center)))
    n = int(math.ceil(extent / lattice_pitch)) + 1
    idx = np.arange(-n, n + 1)
    jj, ii = np.meshgrid(idx, idx, indexing="ij")
    nodes = np.stack([cx + lattice_pitch * ii.ravel(), cy + lattice_pitch * jj.ravel()], axis=1)
    nodes = nodes[inside_mask(curve, nodes, margin=0.5 * lattice_pitch)]
    count = len(nodes)
    n_remove = int(round(hole_fraction * count))
    if n_remove:
        rng = np.random.default_rng(seed)
        removed = rng.choice(count, size=n_remove, replace=False)
        keep = np.ones(count, dtype=bool)
        keep[removed] = False
        nodes = nodes[keep]
    if len(nodes) == 0:
        raise GeometryError("no rods left inside the curve (degenerate scenario)")
    log.debug("filled %s with %d rods (%d holes)", curve.label or "curve", len(nodes), n_remove)
    return [Scatterer((float(x), float(y)), float(rod_radius), float(permittivity)) for x, y in nodes]
