import math
import time
import warnings

import numpy as np
import pytest

from fastmonopole import special_fns as sf
from fastmonopole.errors import DomainError, GeometryError
from fastmonopole.foldy_lax import IncidentField, scattered_field_direct, solve_direct
from fastmonopole.geometry import Scatterer, fill_with_rods, homothety, make_circle, make_trefoil
from fastmonopole.monopole_layer import (
    InteriorResonanceWarning,
    MonopoleLayer,
    NearBoundaryWarning,
    boundary_values,
    collocation_curve,
    dft_tail_ratio,
    evaluate_layer,
    far_field_amplitude,
    far_field_asymptotic,
    fit_density,
    fit_with_count,
    make_fitter,
    select_monopole_count,
    select_monopole_points,
    solution_field,
    stride_indices,
)

K = 2 * math.pi


def point_source(k, src):
    src = np.asarray(src, dtype=float)

    def field(points):
        return sf.hankel1_0(k * np.hypot(*(np.atleast_2d(points) - src).T))
    return field


def rod_cluster(n_side=5, seed=0):
    curve = make_circle(1.0, M=128)
    rods = fill_with_rods(curve, 1.6 / n_side, 0.03, 12.0, 0.2, seed)
    return rods, homothety(curve, 1.2)


def test_boundary_values():
    c = make_circle(1.0, M=64)
    zero = solve_direct([Scatterer((0, 0), 0.05)], IncidentField((0, -1), 0.0), K)
    assert not np.any(boundary_values(zero, c))
    centred = solve_direct([Scatterer((0, 0), 0.05)], IncidentField(), K)
    v = boundary_values(centred, c)
    np.testing.assert_allclose(v, v[0], rtol=1e-13)
    rods, enc = rod_cluster()
    sol = solve_direct(rods[:20], IncidentField(), K)
    np.testing.assert_allclose(boundary_values(sol, enc), scattered_field_direct(sol, enc.samples), rtol=1e-14)


def test_boundary_values_require_enclosure():
    sol = solve_direct([Scatterer((2.0, 0), 0.05)], IncidentField(), K)
    with pytest.raises(GeometryError):
        boundary_values(sol, make_circle(1.0, M=64))


def test_stride_rule():
    assert stride_indices(66, 7) == (0, 9, 19, 28, 38, 47, 57)
    assert stride_indices(10, 10) == tuple(range(10))
    assert stride_indices(10, 1) == (0,)
    c = make_circle(1.0, M=16)
    np.testing.assert_array_equal(select_monopole_points(c, 16), c.midpoints())
    with pytest.raises(DomainError):
        stride_indices(5, 6)


def test_zero_values_fit_to_zero():
    c = make_circle(1.0, M=80)
    fitter = make_fitter(c, 8, K)
    layer, report = fitter.fit(np.zeros(80))
    assert not np.any(layer.weights)
    assert report.residual_norm == 0


def test_single_monopole_is_recovered():
    c = make_circle(1.0, M=80)
    fitter = make_fitter(c, 8, K)
    values = point_source(K, fitter.points[3])(fitter.collocation.samples)
    layer, report = fitter.fit(values)
    expected = np.zeros(8)
    expected[3] = 1
    np.testing.assert_allclose(layer.weights, expected, atol=1e-9)
    assert report.relative_residual < 1e-10


def test_point_source_oracle():
    start = time.perf_counter()
    c = make_circle(1.0, M=128)
    src = point_source(1.0, (0.3, -0.2))
    layer, report = fit_with_count(c, src, 1.0, 32)
    test = make_circle(2.0, M=360).samples
    err = np.max(np.abs(evaluate_layer(layer, test) - src(test))) / np.max(np.abs(src(test)))
    assert err < 1e-6
    assert time.perf_counter() - start < 1.0
    assert report.M == 128 and report.chosen_P == 32


def test_fit_density_default_collocation_matches_fitter():
    c = make_circle(1.0, M=96)
    pts = select_monopole_points(c, 12)
    col = collocation_curve(c, 12)
    src = point_source(K, (0.2, 0.1))
    a, _ = fit_density(c, pts, src(col.samples), K)
    b, _ = make_fitter(c, 12, K).fit(src(col.samples))
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-12)


def test_overdetermined_required():
    c = make_circle(1.0, M=16)
    with pytest.raises(DomainError):
        fit_density(c, select_monopole_points(c, 16), np.zeros(16), K, collocation=c)


def test_ill_conditioning_warning():
    # two monopoles 1e-13 apart give numerically dependent columns
    c = make_circle(1.0, M=64)
    pts = select_monopole_points(c, 8)
    pts[1] = pts[0] + 1e-13
    with pytest.warns(InteriorResonanceWarning):
        _, report = fit_density(c, pts, np.ones(64), K)
    assert report.condition_estimate > 1e12


def test_generalization_to_interleaved_points():
    rods, enc = rod_cluster(seed=1)
    sol = solve_direct(rods, IncidentField(), K)
    field = solution_field(sol)
    for P in (12, 20, 30):
        fitter = make_fitter(enc.resample(10 * P), P, K)
        layer, report = fitter.fit(field(fitter.collocation.samples))
        mid = fitter.collocation.resample(fitter.M, offset=0.5)
        scale = np.max(np.abs(field(mid.samples)))
        err = np.max(np.abs(evaluate_layer(layer, mid.samples) - field(mid.samples))) / scale
        assert err <= 5 * report.relative_residual


def test_residual_monotone_for_nested_monopoles():
    rods, enc = rod_cluster(seed=2)
    sol = solve_direct(rods, IncidentField(), K)
    curve = enc.resample(128)
    col = homothety(curve, 1.15)
    values = solution_field(sol)(col.samples)
    residuals = []
    for P in (4, 8, 16, 32, 64):
        _, report = fit_density(curve, select_monopole_points(curve, P), values, K, collocation=col)
        residuals.append(report.relative_residual)
    assert all(b <= a + 1e-12 for a, b in zip(residuals, residuals[1:]))


def test_tail_decays_for_smooth_fields():
    c = make_circle(1.0, M=1024)
    src = point_source(K, (0.25, 0.1))
    tails = [fit_with_count(c.resample(10 * P), src, K, P)[1].dft_tail_ratio for P in (8, 16, 32)]
    for a, b in zip(tails, tails[1:]):
        assert b <= 1.1 * a


def test_dft_tail_ratio():
    assert dft_tail_ratio(np.ones(12)) == pytest.approx(0.0, abs=1e-14)
    assert dft_tail_ratio(np.zeros(5)) == 0.0
    alt = np.array([(-1) ** p for p in range(12)], dtype=float)
    assert dft_tail_ratio(alt) == pytest.approx(1.0)


def test_select_smallest_for_centred_source():
    # a centred source at low frequency is the equal-weight layer up to tiny aliasing
    c = make_circle(0.5, M=64)
    P, report, layer = select_monopole_count(c, point_source(1.0, (0.0, 0.0)), 1.0, m_ratio=10)
    assert P == 4 and report.converged


def test_select_flags_failure():
    c = make_circle(1.0, M=64)
    P, report, _ = select_monopole_count(c, point_source(K, (0.9, 0.0)), K, tail_threshold=1e-14,
                                         P_grid=(4, 6, 8), m_ratio=10)
    assert P == 8 and not report.converged


def test_select_then_homothety_within_tolerance():
    rods, enc = rod_cluster(seed=3)
    rods = rods[:20]
    sol = solve_direct(rods, IncidentField(), K)
    field = solution_field(sol)
    P, report, layer = select_monopole_count(enc, field, K, m_ratio=10)
    assert report.converged
    test = homothety(enc, 1.3).samples
    err = np.max(np.abs(evaluate_layer(layer, test) - field(test))) / np.max(np.abs(field(test)))
    assert err < 0.015


def test_evaluate_layer_definitions():
    c = make_circle(1.0, M=32)
    pts = select_monopole_points(c, 4)
    zero = MonopoleLayer(c, pts, np.zeros(4, complex), K)
    assert evaluate_layer(zero, np.array([3.0, 0.0])) == 0
    unit = MonopoleLayer(c, pts, np.array([0, 1, 0, 0], complex), K)
    x = np.array([2.0, 1.0])
    assert evaluate_layer(unit, x) == pytest.approx(sf.hankel1(0, K * np.hypot(*(x - pts[1]))), rel=1e-14)
    with pytest.raises(DomainError):
        evaluate_layer(unit, pts[2])


def test_near_boundary_flag():
    c = make_circle(1.0, M=64)
    layer = MonopoleLayer(c, select_monopole_points(c, 8), np.ones(8, complex), K)
    x = np.array([[3.0, 0.0], [1.05, 0.0], [0.0, 0.0]])
    with pytest.warns(NearBoundaryWarning):
        _, flags = evaluate_layer(layer, x, flag=True)
    assert flags.tolist() == [False, True, True]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, flag = evaluate_layer(layer, x[0], flag=True)
    assert flag is False


def test_far_field_simple_cases():
    c = make_circle(1.0, M=32)
    zero = MonopoleLayer(c, np.zeros((1, 2)), np.zeros(1, complex), K)
    assert far_field_amplitude(zero, (1.0, 0.0)) == 0
    origin = MonopoleLayer(c, np.zeros((1, 2)), np.array([0.3 - 0.4j]), K)
    for a in np.linspace(0, 2 * np.pi, 7):
        assert far_field_amplitude(origin, (math.cos(a), math.sin(a))) == pytest.approx(0.3 - 0.4j)
    with pytest.raises(DomainError):
        far_field_amplitude(origin, (1.0, 1.0))


def test_far_field_against_large_radius():
    rng = np.random.default_rng(11)
    for _ in range(5):
        c = make_trefoil(1.0, 0.3, 3, M=64)
        P = int(rng.integers(4, 20))
        layer = MonopoleLayer(c, select_monopole_points(c, P), rng.normal(size=P) + 1j * rng.normal(size=P), K)
        a = rng.uniform(0, 2 * np.pi)
        x = 1e4 * np.array([math.cos(a), math.sin(a)])
        exact = evaluate_layer(layer, x)
        assert abs(far_field_asymptotic(layer, x) - exact) <= 1e-3 * abs(exact)


def test_flux_consistency():
    rods, enc = rod_cluster(seed=4)
    sol = solve_direct(rods, IncidentField(), K)
    layer, _ = fit_with_count(enc.resample(300), solution_field(sol), K, 30)
    R = 500.0
    n = 720
    ang = 2 * np.pi * np.arange(n) / n
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    near = np.sum(np.abs(evaluate_layer(layer, R * dirs)) ** 2) * R * 2 * np.pi / n
    far = np.array([far_field_amplitude(layer, d) for d in dirs])
    from_far = (2 / (np.pi * K)) * np.sum(np.abs(far) ** 2) * 2 * np.pi / n
    assert near == pytest.approx(from_far, rel=1e-2)
