"""Discrete single-layer (monopole) representation of a scattered field.

A field radiated from inside a closed curve is written as
``sum_p sigma_p H0(k |x - y_p|)`` with monopoles ``y_p`` picked among the
chord midpoints of the curve samples. The weights come from a least-squares
fit to the field at M > P collocation points; the monopole count is chosen
by watching the decay of the DFT of the fitted weights.

Collocation points are the curve samples scaled about the curve center by
``1 + 2 pi * offset / P``, i.e. pushed out by about ``offset`` monopole
spacings. Collocating on the monopole curve itself puts every sample half a
spacing away from a logarithmic singularity and caps the fit accuracy near
1e-2; one to two spacings of clearance restores spectral accuracy.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import special_fns as sf
from .errors import DomainError, GeometryError
from .foldy_lax import hankel_matrix
from .geometry import Location, classify, homothety, inside_mask

log = logging.getLogger(__name__)

DEFAULT_TAIL_THRESHOLD = 1e-2
DEFAULT_RESIDUAL_CAP = 1e-2
DEFAULT_M_RATIO = 10
RESONANCE_CONDITION = 1e12
COLLOCATION_OFFSET = 1.5
DEFAULT_P_GRID = (4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20, 23, 26, 30, 34, 39, 45, 52, 60,
                  69, 80, 92, 106, 122, 140, 160, 184, 212, 244, 280)


class InteriorResonanceWarning(UserWarning):
    """The collocation matrix is nearly rank deficient."""


class NearBoundaryWarning(UserWarning):
    """A layer was evaluated within one sample spacing of its curve."""


@dataclass(frozen=True, eq=False)
class MonopoleLayer:
    curve: object
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    k: float
    indices: tuple = ()

    @property
    def P(self):
        return len(self.weights)

    def scaled(self, factor):
        return MonopoleLayer(self.curve, self.points, self.weights * factor, self.k, self.indices)


@dataclass
class FitReport:
    residual_norm: float
    relative_residual: float
    condition_estimate: float
    dft_tail_ratio: float
    chosen_P: int
    M: int = 0
    converged: bool = True

    def as_dict(self):
        return dict(self.__dict__)


def boundary_values(solution, curve, check=True):
    """Scattered field of a rod solution at every sample of ``curve``."""
    if check and solution.N:
        if not np.all(inside_mask(curve, solution.positions)):
            raise GeometryError("curve %r does not enclose every rod" % curve.label)
    if solution.N == 0:
        return np.zeros(curve.M, dtype=complex)
    return hankel_matrix(solution.k, curve.samples, solution.positions) @ solution.amplitudes


def solution_field(solution):
    """Callable returning the rods' scattered field at an (n, 2) point array."""
    def field(points):
        if solution.N == 0:
            return np.zeros(len(points), dtype=complex)
        return hankel_matrix(solution.k, points, solution.positions) @ solution.amplitudes
    return field


def collocation_curve(curve, P, offset=COLLOCATION_OFFSET):
    """Curve samples pushed outward by about ``offset`` monopole spacings."""
    return homothety(curve, 1.0 + 2.0 * np.pi * offset / P)


def stride_indices(M, P):
    """``floor(i * M / P + 1/2)`` for i = 0..P-1."""
    if not 1 <= P <= M:
        raise DomainError("need 1 <= P <= M, got P=%d, M=%d" % (P, M))
    return tuple(int(i * M // P + (1 if 2 * (i * M % P) >= P else 0)) for i in range(P))


def select_monopole_points(curve, P):
    """P chord midpoints chosen by uniform index striding."""
    idx = stride_indices(curve.M, P)
    return curve.midpoints()[list(idx)]


def dft_tail_ratio(weights):
    """Largest |DFT| among the top third of frequencies over the largest overall."""
    w = np.asarray(weights, dtype=complex)
    spec = np.abs(sf.dft(w))
    peak = spec.max()
    if peak == 0:
        return 0.0
    P = len(w)
    freq = np.minimum(np.arange(P), P - np.arange(P))
    tail = freq > P / 3.0
    if not np.any(tail):
        return 0.0
    return float(spec[tail].max() / peak)


class LayerFitter:
    """Factorised least-squares problem for fixed monopoles and collocation points.

    Refitting for a new right-hand side costs one ``Q^H u`` product and a
    triangular solve.
    """

    def __init__(self, curve, monopole_points, k, collocation, indices=()):
        self.curve = curve
        self.points = np.asarray(monopole_points, dtype=float)
        self.k = k
        self.collocation = collocation
        self.indices = tuple(indices)
        M, P = collocation.M, len(self.points)
        if not M > P:
            raise DomainError("fit needs an overdetermined system (M=%d, P=%d)" % (M, P))
        self.matrix = hankel_matrix(k, collocation.samples, self.points)
        self._col = np.linalg.norm(self.matrix, axis=0)
        self._q, self._r = scipy.linalg.qr(self.matrix / self._col, mode="economic")
        sv = np.linalg.svd(self._r, compute_uv=False)
        self.condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        if self.condition > RESONANCE_CONDITION:
            warnings.warn(
                "collocation matrix condition %.2e: k may be close to an interior "
                "Dirichlet eigenvalue of the curve" % self.condition,
                InteriorResonanceWarning,
            )

    @property
    def M(self):
        return self.collocation.M

    @property
    def P(self):
        return len(self.points)

    def weights(self, values):
        z = scipy.linalg.solve_triangular(self._r, self._q.conj().T @ values, check_finite=False)
        return z / self._col

    def fit(self, values):
        u = np.asarray(values, dtype=complex)
        if len(u) != self.M:
            raise DomainError("expected %d boundary values, got %d" % (self.M, len(u)))
        sigma = self.weights(u)
        res = float(np.linalg.norm(self.matrix @ sigma - u))
        norm_u = float(np.linalg.norm(u))
        report = FitReport(
            residual_norm=res,
            relative_residual=res / norm_u if norm_u > 0 else 0.0,
            condition_estimate=self.condition,
            dft_tail_ratio=dft_tail_ratio(sigma),
            chosen_P=self.P,
            M=self.M,
        )
        return MonopoleLayer(self.curve, self.points, sigma, self.k, self.indices), report


def make_fitter(curve, P, k, offset=COLLOCATION_OFFSET):
    """:class:`LayerFitter` with strided midpoints of ``curve`` as monopoles."""
    idx = stride_indices(curve.M, P)
    return LayerFitter(curve, curve.midpoints()[list(idx)], k, collocation_curve(curve, P, offset), idx)


def fit_density(curve, monopole_points, values, k, collocation=None, indices=()):
    """Least-squares monopole weights reproducing ``values`` at the collocation points.

    ``values`` are field samples at ``collocation.samples`` (by default
    :func:`collocation_curve` of ``curve`` for this P). Columns of the
    M x P matrix ``H0(k |c_m - y_p|)`` are equilibrated to unit norm and
    the problem is solved through a QR factorisation; the condition
    estimate comes from the singular values of the triangular factor.
    """
    pts = np.asarray(monopole_points, dtype=float)
    if collocation is None:
        collocation = collocation_curve(curve, len(pts))
    return LayerFitter(curve, pts, k, collocation, indices).fit(values)


def fit_with_count(curve, field, k, P, offset=COLLOCATION_OFFSET):
    """Fit P monopoles on ``curve`` (M = curve.M) to ``field(points)``."""
    fitter = make_fitter(curve, P, k, offset)
    return fitter.fit(field(fitter.collocation.samples))


def _qualifies(report, tail_threshold, residual_cap):
    return report.dft_tail_ratio <= tail_threshold and report.relative_residual <= residual_cap


def select_monopole_count(curve, field, k, tail_threshold=DEFAULT_TAIL_THRESHOLD, P_grid=DEFAULT_P_GRID,
                          residual_cap=DEFAULT_RESIDUAL_CAP, m_ratio=None, offset=COLLOCATION_OFFSET):
    """Smallest P in ``P_grid`` whose fit passes the DFT-tail and residual tests.

    ``field(points)`` gives the field to represent. With ``m_ratio=None``
    every candidate uses ``curve.M`` samples and the grid is cut below M;
    otherwise the curve is resampled at ``M = m_ratio * P`` per candidate.
    Returns ``(P, report, layer)``. When no candidate qualifies the last
    one is returned with ``report.converged = False``.
    """
    if m_ratio is None:
        grid = [p for p in P_grid if p < curve.M]
    else:
        grid = list(P_grid)
    if not grid:
        raise DomainError("no candidate P below M=%d" % curve.M)
    for P in grid:
        sampled = curve if m_ratio is None else curve.resample(max(int(round(m_ratio * P)), P + 1))
        layer, report = fit_with_count(sampled, field, k, P, offset)
        if _qualifies(report, tail_threshold, residual_cap):
            return P, report, layer
    report.converged = False
    log.warning("no P in the grid met the DFT-tail/residual thresholds; using P=%d", grid[-1])
    return grid[-1], report, layer


def evaluate_layer(layer, x, flag=False):
    """``sum_p sigma_p H0(k |x - y_p|)`` at (2,) or (n, 2) points.

    With ``flag=True`` also returns a boolean array marking points inside
    the layer's curve or within one monopole spacing of it, where the
    point-monopole sum is numerically degraded.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if layer.P == 0:
        vals = np.zeros(len(pts), dtype=complex)
    else:
        vals = hankel_matrix(layer.k, pts, layer.points) @ layer.weights
    if flag:
        loc = classify(layer.curve, pts, band=monopole_spacing(layer))
        degraded = loc != Location.OUTSIDE
        if np.any(degraded):
            warnings.warn("%d point(s) inside or near the layer curve" % int(degraded.sum()), NearBoundaryWarning)
        return (vals[0], bool(degraded[0])) if single else (vals, degraded)
    return vals[0] if single else vals


def monopole_spacing(layer):
    return layer.curve.length / max(layer.P, 1)


def far_field_amplitude(layer, direction):
    """``F(d) = sum_p sigma_p exp(-i k d . y_p)``.

    For ``|x| -> inf`` in direction d the layer field behaves like
    ``sqrt(2 / (pi k |x|)) exp(i (k |x| - pi/4)) F(d)``.
    """
    d = np.asarray(direction, dtype=float)
    if d.shape != (2,) or abs(np.hypot(*d) - 1.0) > 1e-12:
        raise DomainError("direction must be a 2D unit vector")
    return complex(np.sum(layer.weights * np.exp(-1j * layer.k * (layer.points @ d))))


def far_field_asymptotic(layer, x):
    """Leading large-distance approximation of :func:`evaluate_layer` at x."""
    x = np.asarray(x, dtype=float)
    r = float(np.hypot(*x))
    kr = layer.k * r
    return np.sqrt(2.0 / (np.pi * kr)) * np.exp(1j * (kr - np.pi / 4)) * far_field_amplitude(layer, x / r)


def layer_rows(layer):
    return [(float(p[0]), float(p[1]), float(s.real), float(s.imag)) for p, s in zip(layer.points, layer.weights)]
