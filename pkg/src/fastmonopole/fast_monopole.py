"""Fast Monopole Method: clusters of rods coupled through monopole layers.

Each cluster is solved on its own against a local driving field made of the
incident wave plus the monopole layers of all other clusters, evaluated at
its rod centers. Its scattered field is then refitted as a layer on its
enclosure, and the sweep repeats until the layer weights stop changing.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg

from .errors import DivergenceError, GeometryError
from .foldy_lax import LocalOperator, SolverConfig, hankel_matrix, solve_with_driving
from .geometry import Location, classify, distance_to_curve, inside_mask, rod_arrays
from .monopole_layer import (
    COLLOCATION_OFFSET,
    DEFAULT_M_RATIO,
    DEFAULT_P_GRID,
    DEFAULT_RESIDUAL_CAP,
    DEFAULT_TAIL_THRESHOLD,
    evaluate_layer,
    make_fitter,
    monopole_spacing,
    select_monopole_count,
    solution_field,
)

log = logging.getLogger(__name__)

SCHEMES = ("gauss-seidel", "jacobi", "krylov")


@dataclass
class CouplingConfig:
    tolerance: float = 1e-8
    max_iterations: int = 50
    scheme: str = "gauss-seidel"
    divergence_window: int = 3
    cache_coupling: bool = True


@dataclass
class FitConfig:
    """Monopole-layer controls; ``P``/``M`` entries of ``None`` mean automatic."""

    P: list = None
    M: list = None
    tail_threshold: float = DEFAULT_TAIL_THRESHOLD
    residual_cap: float = DEFAULT_RESIDUAL_CAP
    p_grid: tuple = DEFAULT_P_GRID
    m_ratio: float = DEFAULT_M_RATIO
    offset: float = COLLOCATION_OFFSET


@dataclass
class MultiClusterScenario:
    clusters: list
    incident: object
    k: float
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def N(self):
        return sum(len(c.scatterers) for c in self.clusters)

    def all_scatterers(self):
        return [s for c in self.clusters for s in c.scatterers]

    def cluster_P(self, j):
        return None if self.fit.P is None else self.fit.P[j]

    def cluster_M(self, j):
        return None if self.fit.M is None else self.fit.M[j]

    def validate(self):
        if not self.clusters:
            raise GeometryError("scenario has no clusters (degenerate scenario)")
        for c in self.clusters:
            c.validate()
        for j, cj in enumerate(self.clusters):
            for l, cl in enumerate(self.clusters):
                if l == j:
                    continue
                if np.any(inside_mask(cl.enclosure, cj.enclosure.samples)):
                    raise GeometryError("enclosures %d and %d intersect" % (j, l))
                pos = rod_arrays(cj.scatterers)[0]
                if len(pos) and np.any(inside_mask(cl.enclosure, pos)):
                    raise GeometryError("rod of cluster %d lies inside enclosure %d" % (j, l))


@dataclass
class Counters:
    """Kernel (Hankel) evaluation tallies.

    ``coupling`` counts layer-kernel evaluations at foreign rod centers;
    ``coupling_applications`` counts the multiply-adds spent applying them.
    """

    local_assembly: int = 0
    boundary: int = 0
    fit: int = 0
    coupling: int = 0
    coupling_applications: int = 0
    selection: int = 0

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(eq=False)
class CoupledSolution:
    solutions: list
    layers: list
    iterations: int
    history: list
    converged: bool
    reports: list
    counters: Counters
    timings: dict
    scenario: MultiClusterScenario = field(repr=False, default=None)


def local_incident_values(scenario, j, layers):
    """Incident wave plus all foreign layers at the rod centers of cluster j."""
    cluster = scenario.clusters[j]
    pos = rod_arrays(cluster.scatterers)[0]
    values = scenario.incident(pos, scenario.k) if len(pos) else np.zeros(0, complex)
    for l, layer in enumerate(layers):
        if l == j or layer is None:
            continue
        if len(pos) and np.any(inside_mask(layer.curve, pos)):
            raise GeometryError("rod of cluster %d lies inside enclosure %d" % (j, l))
        if layer.P and len(pos):
            values = values + evaluate_layer(layer, pos)
    return values


def local_solve(cluster, driving, k, P, M, solver_cfg=None, offset=COLLOCATION_OFFSET):
    """Solve one cluster for given driving values and fit its layer.

    Returns ``(ClusterSolution, MonopoleLayer, FitReport)``.
    """
    op = LocalOperator(cluster.scatterers, k, solver_cfg)
    solution = solve_with_driving(op, driving)
    fitter = make_fitter(cluster.enclosure.resample(M), P, k, offset)
    layer, report = fitter.fit(solution_field(solution)(fitter.collocation.samples))
    return solution, layer, report


class _ClusterState:
    """Everything about one cluster that stays fixed across sweeps."""

    def __init__(self, cluster, operator, fitter, incident_values):
        self.cluster = cluster
        self.operator = operator
        self.fitter = fitter
        self.incident_values = incident_values
        pos = operator.positions
        self.boundary = hankel_matrix(operator.k, fitter.collocation.samples, pos) if len(pos) else None
        self.weights = np.zeros(fitter.P, dtype=complex)
        self.solution = None
        self.report = None

    def update(self, driving):
        self.solution = solve_with_driving(self.operator, driving)
        if self.boundary is None:
            values = np.zeros(self.fitter.M, dtype=complex)
        else:
            values = self.boundary @ self.solution.amplitudes
        return self.fitter.weights(values), values


def _choose_size(scenario, j, operator, incident_values, counters):
    P = scenario.cluster_P(j)
    M = scenario.cluster_M(j)
    cfg = scenario.fit
    enclosure = scenario.clusters[j].enclosure
    if P is None:
        isolated = solve_with_driving(operator, incident_values)
        base = solution_field(isolated)

        def fld(points):
            counters.selection += len(points) * isolated.N
            return base(points)

        if M is None:
            P, report, _ = select_monopole_count(
                enclosure, fld, scenario.k, cfg.tail_threshold, cfg.p_grid, cfg.residual_cap,
                m_ratio=cfg.m_ratio, offset=cfg.offset,
            )
            M = report.M
        else:
            P, report, _ = select_monopole_count(
                enclosure.resample(M), fld, scenario.k, cfg.tail_threshold, cfg.p_grid, cfg.residual_cap,
                offset=cfg.offset,
            )
        if not report.converged:
            log.warning("cluster %d: automatic P did not meet the thresholds", j)
    elif M is None:
        M = max(int(round(cfg.m_ratio * P)), P + 1)
    return P, M


def _prepare(scenario, counters, timings):
    k = scenario.k
    states = []
    t0 = time.perf_counter()
    for j, cluster in enumerate(scenario.clusters):
        op = LocalOperator(cluster.scatterers, k, scenario.solver)
        counters.local_assembly += op.kernel_evaluations
        inc = scenario.incident(op.positions, k) if len(op.positions) else np.zeros(0, complex)
        P, M = _choose_size(scenario, j, op, inc, counters)
        fitter = make_fitter(cluster.enclosure.resample(M), P, k, scenario.fit.offset)
        counters.fit += M * P
        state = _ClusterState(cluster, op, fitter, inc)
        counters.boundary += M * len(op.positions)
        states.append(state)
    timings["assembly"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    coupling = _Coupling(states, k, counters, scenario.coupling.cache_coupling)
    timings["coupling_setup"] = time.perf_counter() - t0
    return states, coupling


class _Coupling:
    """Foreign-layer kernels ``H0(k |x_q - y_p|)``, cached or rebuilt per use."""

    def __init__(self, states, k, counters, cache):
        self.states = states
        self.k = k
        self.counters = counters
        self.cache = cache
        self.pairs = [(j, l) for j, sj in enumerate(states) for l in range(len(states))
                      if l != j and len(sj.operator.positions)]
        self.matrices = {}
        if cache:
            for j, l in self.pairs:
                self.matrices[j, l] = self._build(j, l)

    def _build(self, j, l):
        h = hankel_matrix(self.k, self.states[j].operator.positions, self.states[l].fitter.points)
        self.counters.coupling += h.size
        return h

    def matrix(self, j, l):
        return self.matrices[j, l] if self.cache else self._build(j, l)

    def size(self):
        return sum(len(self.states[j].operator.positions) * self.states[l].fitter.P for j, l in self.pairs)


def _driving(j, states, coupling, weights):
    d = states[j].incident_values.copy()
    for jj, l in coupling.pairs:
        if jj == j:
            d = d + coupling.matrix(j, l) @ weights[l]
    return d


def _relative_change(new, old):
    norm = np.linalg.norm(new)
    if norm == 0:
        return 0.0 if np.linalg.norm(old) == 0 else 1.0
    return float(np.linalg.norm(new - old) / norm)


def _fixed_point(scenario, states, coupling, counters):
    cfg = scenario.coupling
    n = len(states)
    weights = [s.weights for s in states]
    history = []
    steps = []
    converged = False
    iterations = 0
    per_sweep = coupling.size()
    for it in range(1, cfg.max_iterations + 1):
        iterations = it
        previous = list(weights)
        source = weights if cfg.scheme == "gauss-seidel" else previous
        changes = []
        step = 0.0
        for j, st in enumerate(states):
            drive = _driving(j, states, coupling, source)
            new, values = st.update(drive)
            changes.append(_relative_change(new, weights[j]))
            step = max(step, float(np.linalg.norm(new - weights[j])))
            weights[j] = new
        counters.coupling_applications += per_sweep
        delta = max(changes)
        history.append(delta)
        steps.append(step)
        if n == 1 or delta <= cfg.tolerance:
            converged = True
            break
        # relative changes saturate under geometric growth, so watch the absolute step
        w = cfg.divergence_window
        if len(steps) > w and all(steps[-i] > steps[-i - 1] for i in range(1, w + 1)):
            raise DivergenceError(
                "coupling iteration diverged: change grew for %d sweeps" % w, history
            )
    return weights, history, iterations, converged


def _krylov(scenario, states, coupling, counters):
    cfg = scenario.coupling
    sizes = [s.fitter.P for s in states]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    per_sweep = coupling.size()
    history = []

    def split(vec):
        return [vec[offsets[i]:offsets[i + 1]] for i in range(len(states))]

    def jacobi_map(vec, with_incident):
        ws = split(vec)
        out = []
        for j, st in enumerate(states):
            d = _driving(j, states, coupling, ws)
            if not with_incident:
                d = d - st.incident_values
            out.append(st.update(d)[0])
        counters.coupling_applications += per_sweep
        return np.concatenate(out)

    zero = np.zeros(offsets[-1], dtype=complex)
    rhs = jacobi_map(zero, True)
    op = scipy.sparse.linalg.LinearOperator(
        (len(zero), len(zero)), matvec=lambda v: v - jacobi_map(v, False), dtype=complex
    )
    x, info = scipy.sparse.linalg.gmres(
        op, rhs, rtol=cfg.tolerance, atol=0.0, restart=min(len(zero), 50), maxiter=cfg.max_iterations,
        callback=lambda r: history.append(float(r)), callback_type="pr_norm",
    )
    weights = split(x)
    for j, st in enumerate(states):
        st.update(_driving(j, states, coupling, weights))
    return weights, history, len(history) + 1, info == 0


def solve_coupled(scenario):
    """Iterate local solves and layer fits to self-consistency.

    Non-convergence within ``max_iterations`` is reported through
    ``CoupledSolution.converged``; a change that grows over
    ``divergence_window`` consecutive sweeps raises :class:`DivergenceError`.
    """
    scenario.validate()
    if scenario.coupling.scheme not in SCHEMES:
        raise ValueError("unknown coupling scheme %r" % scenario.coupling.scheme)
    counters = Counters()
    timings = {}
    states, coupling = _prepare(scenario, counters, timings)
    t0 = time.perf_counter()
    if scenario.coupling.scheme == "krylov" and len(states) > 1:
        weights, history, iterations, converged = _krylov(scenario, states, coupling, counters)
    else:
        weights, history, iterations, converged = _fixed_point(scenario, states, coupling, counters)
    timings["coupling"] = time.perf_counter() - t0
    if not converged:
        log.warning("coupling did not converge in %d iterations (last change %.2e)",
                    iterations, history[-1] if history else float("nan"))
    layers, reports, solutions = [], [], []
    for st, w in zip(states, weights):
        values = (st.boundary @ st.solution.amplitudes) if st.boundary is not None else np.zeros(st.fitter.M, complex)
        layer, report = st.fitter.fit(values)
        layers.append(layer)
        reports.append(report)
        solutions.append(st.solution)
    return CoupledSolution(solutions, layers, iterations, history, converged, reports, counters, timings, scenario)


def global_scattered_field(solution, x):
    """Sum of all cluster fields at (2,) or (n, 2) points.

    Outside an enclosure (and beyond one monopole spacing from it) a
    cluster contributes through its layer; inside or near, through the
    direct sum over its rods.
    """
    return combined_field(solution.solutions, solution.layers, x)


def combined_field(solutions, layers, x):
    """:func:`global_scattered_field` for explicit per-cluster solutions and layers."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.zeros(len(pts), dtype=complex)
    for sol, layer in zip(solutions, layers):
        near = classify(layer.curve, pts, band=monopole_spacing(layer)) != Location.OUTSIDE
        far = ~near
        if np.any(far) and layer.P:
            out[far] += evaluate_layer(layer, pts[far])
        if np.any(near) and sol.N:
            out[near] += solution_field(sol)(pts[near])
    return out[0] if single else out


def operation_count_report(scenario, solution):
    """Kernel-evaluation tallies against the N^2 of a direct solve, plus timings."""
    n = scenario.N
    c = solution.counters
    return {
        "N": n,
        "direct_kernel_evaluations": n * n,
        "coupling_kernel_evaluations": c.coupling,
        "coupling_applications": c.coupling_applications,
        "local_assembly_kernel_evaluations": c.local_assembly,
        "boundary_kernel_evaluations": c.boundary,
        "fit_kernel_evaluations": c.fit,
        "selection_kernel_evaluations": c.selection,
        "iterations": solution.iterations,
        "P": [layer.P for layer in solution.layers],
        "M": [r.M for r in solution.reports],
        "timings": dict(solution.timings),
    }


def layer_gaps(scenario):
    """Smallest distance from each cluster's rods to any foreign enclosure."""
    gaps = []
    for j, cj in enumerate(scenario.clusters):
        pos = rod_arrays(cj.scatterers)[0]
        best = np.inf
        for l, cl in enumerate(scenario.clusters):
            if l != j and len(pos):
                best = min(best, float(distance_to_curve(cl.enclosure, pos).min()))
        gaps.append(best)
    return gaps
