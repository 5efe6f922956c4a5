"""Foldy-Lax multiple scattering by small dielectric rods, one monopole per rod.

Each rod q radiates ``s_q H0(k |x - x_q|)`` with ``s_q = t_q * u_loc(x_q)``,
where the local field is the incident wave plus the waves of all other
rods. The amplitudes solve ``(diag(1/t) - h) s = u_inc`` with
``h_ij = H0(k |x_i - x_j|)`` off the diagonal.
"""

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import special_fns as sf
from .errors import DomainError, GeometryError, SingularSystemError
from .geometry import rod_arrays

log = logging.getLogger(__name__)

T_MIN = 1e-300
_CHUNK = 4_000_000


@dataclass(frozen=True)
class IncidentField:
    """Plane wave ``amplitude * exp(i k d . x)``."""

    direction: tuple = (0.0, -1.0)
    amplitude: complex = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or abs(math.hypot(*d) - 1.0) > 1e-12:
            raise DomainError("incident direction must be a 2D unit vector")

    def __call__(self, x, k):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(1j * k * (x @ np.asarray(self.direction, dtype=float)))

    def scaled(self, factor):
        return IncidentField(self.direction, self.amplitude * factor)


@dataclass
class SolverConfig:
    """Linear-solve controls. ``mode`` is ``auto``, ``dense`` or ``iterative``."""

    rtol: float = 1e-10
    n_direct: int = 2000
    mode: str = "auto"
    restart: int = 60
    maxiter: int = 2000


@dataclass(frozen=True, eq=False)
class ClusterSolution:
    amplitudes: np.ndarray
    k: float
    scatterers: tuple
    residual: float = 0.0
    method: str = "dense"
    positions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.positions is None:
            object.__setattr__(self, "positions", rod_arrays(self.scatterers)[0])
        if len(self.amplitudes) != len(self.scatterers):
            raise ValueError("one amplitude per scatterer is required")

    @property
    def N(self):
        return len(self.amplitudes)


@functools.lru_cache(maxsize=4096)
def t_coeff(k, r, permittivity):
    """Monopole scattering coefficient of a dielectric rod.

    ``t = -(J1(kr) J0(kvr) - v J0(kr) J1(kvr)) / (H1(kr) J0(kvr) - v H0(kr) J1(kvr))``
    with ``v = sqrt(permittivity)``.
    """
    if isinstance(permittivity, complex):
        raise DomainError("complex permittivity is not supported")
    if not (k > 0 and r > 0):
        raise DomainError("t_coeff needs k*r > 0")
    if not permittivity >= 1:
        raise DomainError("permittivity must be >= 1")
    nu = math.sqrt(permittivity)
    j0, j1, y0, y1 = sf.bessel_jy(k * r)
    j0n = sf.bessel_j(0, k * nu * r)
    j1n = sf.bessel_j(1, k * nu * r)
    numerator = j1 * j0n - nu * j0 * j1n
    denominator = complex(j1, y1) * j0n - nu * complex(j0, y0) * j1n
    scale = abs(j1 * j0n) + abs(nu * j0 * j1n) + abs(y1 * j0n) + abs(nu * y0 * j1n)
    if abs(denominator) < 1e-14 * scale:
        raise SingularSystemError("vanishing t_coeff denominator at kr=%g, eps=%g" % (k * r, permittivity))
    return -numerator / denominator


def pair_distances(a, b):
    """Matrix of distances between point sets a (n, 2) and b (m, 2)."""
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


def hankel_matrix(k, targets, sources):
    """``H0(k |t_i - s_j|)`` for all pairs; no coincident points allowed."""
    targets = np.asarray(targets, dtype=float)
    sources = np.asarray(sources, dtype=float)
    out = np.empty((len(targets), len(sources)), dtype=complex)
    rows = max(1, _CHUNK // max(1, len(sources)))
    for start in range(0, len(targets), rows):
        r = pair_distances(targets[start:start + rows], sources)
        if np.any(r == 0.0):
            raise DomainError("field evaluated at a source point")
        out[start:start + rows] = sf.hankel1_0(k * r)
    return out


def assemble_interaction(scatterers, k):
    """Symmetric N x N matrix ``h_ij = H0(k |x_i - x_j|)``, zero diagonal."""
    pos = scatterers if isinstance(scatterers, np.ndarray) else rod_arrays(scatterers)[0]
    n = len(pos)
    h = np.zeros((n, n), dtype=complex)
    if n < 2:
        return h
    iu, ju = np.triu_indices(n, 1)
    for start in range(0, len(iu), _CHUNK):
        i, j = iu[start:start + _CHUNK], ju[start:start + _CHUNK]
        r = np.hypot(pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1])
        if np.any(r == 0.0):
            raise GeometryError("coincident rod centers")
        vals = sf.hankel1_0(k * r)
        h[i, j] = vals
        h[j, i] = vals
    return h


class LocalOperator:
    """Factorised ``diag(1/t) - h`` for one rod set, reusable across right-hand sides.

    Rods with ``|t| < 1e-300`` (vacuum rods) are left out of the system and
    keep a zero amplitude.
    """

    def __init__(self, scatterers, k, config=None):
        self.config = config or SolverConfig()
        self.k = k
        self.scatterers = tuple(scatterers)
        pos, rad, eps = rod_arrays(self.scatterers)
        self.positions = pos
        t = np.array([t_coeff(k, r, e) if e != 1.0 else 0.0 for r, e in zip(rad, eps)], dtype=complex)
        self.active = np.abs(t) >= T_MIN
        n_drop = int((~self.active).sum())
        if n_drop:
            warnings.warn("%d rod(s) with vanishing t_coeff removed from the system" % n_drop)
        self.t = t
        act_pos = pos[self.active]
        self.n = len(act_pos)
        mode = self.config.mode
        if mode == "auto":
            mode = "dense" if self.n <= self.config.n_direct else "iterative"
        if mode not in ("dense", "iterative"):
            raise ValueError("unknown solver mode %r" % mode)
        self.method = mode
        self.kernel_evaluations = self.n * (self.n - 1) // 2
        self.matrix = assemble_interaction(act_pos, k)
        self.matrix *= -1.0
        self.matrix[np.diag_indices(self.n)] = 1.0 / t[self.active]
        self._lu = None
        if self.method == "dense" and self.n:
            self._lu = scipy.linalg.lu_factor(self.matrix, check_finite=False)

    def _iterative(self, rhs):
        a = self.matrix
        inv_diag = 1.0 / np.diag(a)
        precond = scipy.sparse.linalg.LinearOperator(a.shape, matvec=lambda v: inv_diag * v, dtype=complex)
        x, info = scipy.sparse.linalg.gmres(
            a, rhs, M=precond, rtol=0.1 * self.config.rtol, atol=0.0,
            restart=self.config.restart, maxiter=self.config.maxiter,
        )
        if info != 0:
            res = np.linalg.norm(a @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise SingularSystemError("GMRES did not converge (info=%d)" % info, residual=res)
        return x

    def solve(self, driving):
        """Amplitudes for driving-field values at every rod (full length N)."""
        driving = np.asarray(driving, dtype=complex)
        amplitudes = np.zeros(len(self.scatterers), dtype=complex)
        rhs = driving[self.active]
        if self.n == 0:
            return amplitudes, 0.0
        if self.method == "dense":
            s = scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        else:
            s = self._iterative(rhs)
        norm_rhs = np.linalg.norm(rhs)
        residual = 0.0 if norm_rhs == 0 else np.linalg.norm(self.matrix @ s - rhs) / norm_rhs
        if not np.all(np.isfinite(s)) or residual > self.config.rtol:
            raise SingularSystemError(
                "multiple-scattering system residual %.3e exceeds rtol %.1e" % (residual, self.config.rtol),
                residual=residual,
            )
        amplitudes[self.active] = s
        return amplitudes, float(residual)


def solve_direct(scatterers, incident, k, solver_cfg=None):
    """Solve the full multiple-scattering system for a plane wave."""
    op = LocalOperator(scatterers, k, solver_cfg)
    driving = incident(op.positions, k) if len(op.positions) else np.zeros(0, complex)
    amplitudes, residual = op.solve(driving)
    return ClusterSolution(amplitudes, k, op.scatterers, residual, op.method, op.positions)


def solve_with_driving(operator, driving):
    """Amplitudes for arbitrary driving values using a prepared operator."""
    amplitudes, residual = operator.solve(driving)
    return ClusterSolution(amplitudes, operator.k, operator.scatterers, residual, operator.method, operator.positions)


def scattered_field_direct(solution, x):
    """``sum_q s_q H0(k |x - x_q|)`` at one point (2,) or many (n, 2)."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if solution.N == 0:
        out = np.zeros(len(pts), dtype=complex)
    else:
        out = np.empty(len(pts), dtype=complex)
        rows = max(1, _CHUNK // solution.N)
        for start in range(0, len(pts), rows):
            h = hankel_matrix(solution.k, pts[start:start + rows], solution.positions)
            out[start:start + rows] = h @ solution.amplitudes
    return out[0] if single else out


def total_field(solution, incident, x):
    pts = np.asarray(x, dtype=float)
    return incident(pts, solution.k) + scattered_field_direct(solution, pts)


def far_field(solution, direction):
    """``sum_q s_q exp(-i k d . x_q)``: angular factor of the scattered wave."""
    d = np.asarray(direction, dtype=float)
    return complex(np.sum(solution.amplitudes * np.exp(-1j * solution.k * (solution.positions @ d))))


def amplitudes_rows(solution):
    return [(i, float(s.real), float(s.imag)) for i, s in enumerate(solution.amplitudes)]
