"""Command line front end.

Usage::

    fastmonopole {direct,fit,fmm,compare,validate} --scenario FILE [--out DIR]
                 [--workers N] [--seed S] [--bench]

Exit codes: 0 success, 2 configuration error, 3 numerical failure. On
failure a JSON object ``{"error", "message", "exit_code"}`` is written to
standard error.
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import io
from . import scenario as scn
from .errors import ConfigError, ConvergenceError, ScatteringError
from .fast_monopole import combined_field, operation_count_report, solve_coupled
from .foldy_lax import LocalOperator, hankel_matrix, solve_with_driving
from .geometry import homothety, inside_mask
from .monopole_layer import fit_with_count, layer_rows, select_monopole_count
from .special_fns import dft

log = logging.getLogger("fastmonopole")

MODES = ("direct", "fit", "fmm", "compare", "validate")


class NumericalFailure(ScatteringError):
    """Raised after outputs are written when a run did not converge."""


# ---------------------------------------------------------------- evaluation

def parallel_map(func, points, workers=1, chunk=2048):
    """``func(points)`` evaluated chunk by chunk, optionally on a thread pool."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return np.zeros(0, dtype=complex)
    pieces = [points[i:i + chunk] for i in range(0, len(points), chunk)]
    if workers and workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(func, pieces))
    else:
        parts = [func(p) for p in pieces]
    return np.concatenate(parts)


def rod_field(positions, amplitudes, k):
    """Direct rod sum; NaN at points that coincide with a rod center."""
    def field(points):
        out = np.zeros(len(points), dtype=complex)
        if len(positions) == 0:
            return out
        d = np.hypot(points[:, None, 0] - positions[None, :, 0], points[:, None, 1] - positions[None, :, 1])
        hit = np.any(d == 0.0, axis=1)
        ok = ~hit
        if np.any(ok):
            out[ok] = hankel_matrix(k, points[ok], positions) @ amplitudes
        out[hit] = np.nan
        return out
    return field


def masked(func, positions):
    """Wrap a field callable so that points on a rod center give NaN."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)

    def field(points):
        out = np.full(len(points), np.nan, dtype=complex)
        if len(positions):
            hit = np.zeros(len(points), dtype=bool)
            for start in range(0, len(positions), 512):
                block = positions[start:start + 512]
                hit |= np.any((points[:, None, 0] == block[None, :, 0]) & (points[:, None, 1] == block[None, :, 1]),
                              axis=1)
        else:
            hit = np.zeros(len(points), dtype=bool)
        if np.any(~hit):
            out[~hit] = func(points[~hit])
        return out
    return field


def observation_circle(built):
    out = built.output
    radius = out["observation_radius"]
    if radius is None:
        extent = max(float(np.max(np.hypot(*c.enclosure.samples.T))) for c in built.scenario.clusters)
        radius = 1.5 * extent
    n = out["observation_points"]
    angles = 2.0 * np.pi * np.arange(n) / n
    return radius, angles, radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def field_grid(built):
    out = built.output
    if out["extent"] is not None:
        if len(out["extent"]) != 4:
            raise ConfigError("output.extent must be [x1_min, x1_max, x2_min, x2_max]")
        x0, x1, y0, y1 = out["extent"]
    else:
        pad = built.wavelength if out["padding"] is None else out["padding"]
        pts = np.concatenate([c.enclosure.samples for c in built.scenario.clusters])
        (x0, y0), (x1, y1) = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    step = built.wavelength / out["points_per_wavelength"]
    xs = np.arange(x0, x1 + 0.5 * step, step)
    ys = np.arange(y0, y1 + 0.5 * step, step)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def inside_flags(built, points):
    flags = np.zeros(len(points), dtype=bool)
    for c in built.scenario.clusters:
        flags |= inside_mask(c.enclosure, points)
    return flags


def relative_errors(approx, reference):
    diff = np.abs(approx - reference)
    scale = float(np.max(np.abs(reference)))
    l2 = float(np.linalg.norm(reference))
    if scale == 0:
        return {"max_rel": float(diff.max()), "mean_rel": float(diff.mean()),
                "l2_rel": float(np.linalg.norm(approx - reference))}
    return {
        "max_rel": float(diff.max() / scale),
        "mean_rel": float(diff.mean() / scale),
        "l2_rel": float(np.linalg.norm(approx - reference) / l2),
    }


# ---------------------------------------------------------------- writers

def write_field_map(path, points, total, flags):
    mod = np.abs(total)
    finite = np.isfinite(mod)
    peak = float(mod[finite].max()) if np.any(finite) else 0.0
    norm = mod / peak if peak > 0 else mod
    rows = zip(points[:, 0], points[:, 1], total.real, total.imag, norm, flags)
    io.write_csv(path, ["x1", "x2", "re_u", "im_u", "abs_u_normalized", "inside_flag"], rows)
    return peak


def write_amplitudes(path, amplitudes):
    io.write_csv(path, ["index", "re", "im"], ((i, s.real, s.imag) for i, s in enumerate(amplitudes)))


def write_layer(path, layer, label):
    io.write_csv(path, ["y1", "y2", "re_sigma", "im_sigma"], layer_rows(layer),
                 comment="k=%s curve=%s P=%d" % (format(layer.k, ".17g"), label, layer.P))


def write_spectrum(path, weights):
    spec = np.abs(dft(weights))
    P = len(spec)
    peak = spec.max() if spec.max() > 0 else 1.0
    freq = np.minimum(np.arange(P), P - np.arange(P))
    io.write_csv(path, ["index", "frequency", "abs_dft", "abs_dft_normalized"],
                 zip(range(P), freq, spec, spec / peak))


# ---------------------------------------------------------------- modes

def _direct_solve(built, workers):
    sc = built.scenario
    timings = {}
    t0 = time.perf_counter()
    op = LocalOperator(sc.all_scatterers(), sc.k, sc.solver)
    timings["assembly"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    driving = sc.incident(op.positions, sc.k)
    solution = solve_with_driving(op, driving)
    timings["solve"] = time.perf_counter() - t0
    return solution, timings


def _split_solution(built, solution):
    """Per-cluster views (positions, amplitudes) of an all-rods solution."""
    parts = []
    start = 0
    for c in built.scenario.clusters:
        n = len(c.scatterers)
        parts.append((solution.positions[start:start + n], solution.amplitudes[start:start + n]))
        start += n
    return parts


def _circle_trace(built, name, out_dir, fields, workers):
    radius, angles, pts = observation_circle(built)
    inc = built.scenario.incident(pts, built.scenario.k)
    cols = ["angle", "x1", "x2"]
    data = [angles, pts[:, 0], pts[:, 1]]
    values = {}
    for tag, func in fields.items():
        us = parallel_map(func, pts, workers)
        values[tag] = us
        cols += ["re_us_" + tag, "im_us_" + tag, "re_u_" + tag, "im_u_" + tag]
        data += [us.real, us.imag, (us + inc).real, (us + inc).imag]
    io.write_csv(os.path.join(out_dir, name), cols, zip(*data))
    return radius, pts, inc, values


def run_direct(built, out_dir, workers=1, bench=False):
    if bench:
        _direct_solve(built, workers)
    solution, timings = _direct_solve(built, workers)
    sc = built.scenario
    t0 = time.perf_counter()
    write_amplitudes(os.path.join(out_dir, "amplitudes.csv"), solution.amplitudes)
    field = rod_field(solution.positions, solution.amplitudes, sc.k)
    radius, _, _, values = _circle_trace(built, "circle_direct.csv", out_dir, {"direct": field}, workers)
    report = {"observation_radius": radius, "circle_max_abs_us": float(np.max(np.abs(values["direct"])))}
    if built.output["field_map"]:
        grid = field_grid(built)
        total = sc.incident(grid, sc.k) + parallel_map(field, grid, workers)
        report["field_map_peak"] = write_field_map(os.path.join(out_dir, "field_direct.csv"), grid, total,
                                                   inside_flags(built, grid))
    timings["evaluation"] = time.perf_counter() - t0
    report.update(N=sc.N, timings=timings, solver_residual=solution.residual, solver_method=solution.method)
    return report


def _fit_cluster(built, j, positions, amplitudes):
    sc = built.scenario
    cfg = sc.fit
    enclosure = sc.clusters[j].enclosure
    base = rod_field(positions, amplitudes, sc.k)
    P, M = sc.cluster_P(j), sc.cluster_M(j)
    if P is None:
        curve = enclosure if M is None else enclosure.resample(M)
        P, report, layer = select_monopole_count(
            curve, base, sc.k, cfg.tail_threshold, cfg.p_grid, cfg.residual_cap,
            m_ratio=cfg.m_ratio if M is None else None, offset=cfg.offset,
        )
    else:
        if M is None:
            M = max(int(round(cfg.m_ratio * P)), P + 1)
        layer, report = fit_with_count(enclosure.resample(M), base, sc.k, P, cfg.offset)
    return layer, report


def run_fit(built, out_dir, workers=1, bench=False):
    solution, timings = _direct_solve(built, workers)
    sc = built.scenario
    parts = _split_solution(built, solution)
    t0 = time.perf_counter()
    layers, reports, views = [], [], []
    for j, (pos, amp) in enumerate(parts):
        layer, report = _fit_cluster(built, j, pos, amp)
        layers.append(layer)
        reports.append(report)
        views.append(_RodView(pos, amp, sc.k))
    timings["fit"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    write_amplitudes(os.path.join(out_dir, "amplitudes.csv"), solution.amplitudes)
    for label, layer in zip(built.labels, layers):
        write_layer(os.path.join(out_dir, "layer_%s.csv" % label), layer, label)
        write_spectrum(os.path.join(out_dir, "dft_%s.csv" % label), layer.weights)

    reconstructed = masked(lambda points: combined_field(views, layers, points), solution.positions)

    direct = rod_field(solution.positions, solution.amplitudes, sc.k)
    # homothety trace: total fields on the scaled enclosures
    ratio = built.output["homothety"]
    rows, rec_all, dir_all = [], [], []
    for j, c in enumerate(sc.clusters):
        curve = homothety(c.enclosure, ratio)
        pts = curve.samples
        inc = sc.incident(pts, sc.k)
        u_dir = inc + parallel_map(direct, pts, workers)
        u_rec = inc + parallel_map(reconstructed, pts, workers)
        rec_all.append(u_rec)
        dir_all.append(u_dir)
        rows += zip([j] * len(pts), curve.arc_lengths, pts[:, 0], pts[:, 1], u_dir.real, u_dir.imag,
                    u_rec.real, u_rec.imag)
    io.write_csv(os.path.join(out_dir, "trace_homothety.csv"),
                 ["cluster", "arc_length", "x1", "x2", "re_u_direct", "im_u_direct", "re_u_layer", "im_u_layer"],
                 rows)
    homothety_error = relative_errors(np.concatenate(rec_all), np.concatenate(dir_all))
    radius, _, inc, values = _circle_trace(built, "circle_fit.csv", out_dir,
                                           {"direct": direct, "layer": reconstructed}, workers)
    report = {
        "N": sc.N,
        "observation_radius": radius,
        "homothety_ratio": ratio,
        "homothety_error": homothety_error,
        "circle_error": relative_errors(values["layer"], values["direct"]),
        "P": [layer.P for layer in layers],
        "M": [r.M for r in reports],
        "fit_reports": [r.as_dict() for r in reports],
    }
    if built.output["field_map"]:
        grid = field_grid(built)
        total = sc.incident(grid, sc.k) + parallel_map(reconstructed, grid, workers)
        report["field_map_peak"] = write_field_map(os.path.join(out_dir, "field_fit.csv"), grid, total,
                                                   inside_flags(built, grid))
    timings["evaluation"] = time.perf_counter() - t0
    report["timings"] = timings
    return report


class _RodView:
    """Minimal stand-in for a ClusterSolution slice, as used by combined_field."""

    def __init__(self, positions, amplitudes, k):
        self.positions = positions
        self.amplitudes = amplitudes
        self.k = k
        self.N = len(amplitudes)


def _fmm_solve(built):
    t0 = time.perf_counter()
    solution = solve_coupled(built.scenario)
    return solution, time.perf_counter() - t0


def _fmm_outputs(built, solution, out_dir, workers, suffix):
    sc = built.scenario
    amplitudes = np.concatenate([s.amplitudes for s in solution.solutions]) if solution.solutions else []
    write_amplitudes(os.path.join(out_dir, "amplitudes_%s.csv" % suffix), amplitudes)
    for label, layer in zip(built.labels, solution.layers):
        write_layer(os.path.join(out_dir, "layer_%s.csv" % label), layer, label)
        write_spectrum(os.path.join(out_dir, "dft_%s.csv" % label), layer.weights)

    positions = np.concatenate([s.positions for s in solution.solutions])
    field = masked(lambda points: combined_field(solution.solutions, solution.layers, points), positions)
    report = {}
    if built.output["field_map"]:
        grid = field_grid(built)
        total = sc.incident(grid, sc.k) + parallel_map(field, grid, workers)
        report["field_map_peak"] = write_field_map(os.path.join(out_dir, "field_fmm.csv"), grid, total,
                                                   inside_flags(built, grid))
    return field, report


def _fmm_report(built, solution, total_time):
    counts = operation_count_report(built.scenario, solution)
    timings = dict(counts.pop("timings"))
    timings["total"] = total_time
    return {
        "N": built.scenario.N,
        "P": counts.pop("P"),
        "M": counts.pop("M"),
        "iterations": solution.iterations,
        "converged": solution.converged,
        "history": list(solution.history),
        "counters": counts,
        "fit_reports": [r.as_dict() for r in solution.reports],
        "timings": timings,
    }


def run_fmm(built, out_dir, workers=1, bench=False):
    if bench:
        _fmm_solve(built)
    solution, total = _fmm_solve(built)
    report = _fmm_report(built, solution, total)
    t0 = time.perf_counter()
    field, extra = _fmm_outputs(built, solution, out_dir, workers, "fmm")
    radius, _, _, values = _circle_trace(built, "circle_fmm.csv", out_dir, {"fmm": field}, workers)
    report.update(extra)
    report["observation_radius"] = radius
    report["circle_max_abs_us"] = float(np.max(np.abs(values["fmm"])))
    report["timings"]["evaluation"] = time.perf_counter() - t0
    return report


def run_compare(built, out_dir, workers=1, bench=False):
    sc = built.scenario
    if bench:
        _direct_solve(built, workers)
        _fmm_solve(built)
    direct_solution, direct_timings = _direct_solve(built, workers)
    direct_timings["total"] = direct_timings["assembly"] + direct_timings["solve"]
    fmm_solution, fmm_total = _fmm_solve(built)
    fmm = _fmm_report(built, fmm_solution, fmm_total)
    t0 = time.perf_counter()
    write_amplitudes(os.path.join(out_dir, "amplitudes_direct.csv"), direct_solution.amplitudes)
    field, extra = _fmm_outputs(built, fmm_solution, out_dir, workers, "fmm")
    direct = rod_field(direct_solution.positions, direct_solution.amplitudes, sc.k)
    radius, _, inc, values = _circle_trace(built, "circle_compare.csv", out_dir,
                                           {"direct": direct, "fmm": field}, workers)
    evaluation = time.perf_counter() - t0
    fmm.update(extra)
    return {
        "N": sc.N,
        "observation_radius": radius,
        "error_scattered": relative_errors(values["fmm"], values["direct"]),
        "error_total": relative_errors(values["fmm"] + inc, values["direct"] + inc),
        "timing_ratio": direct_timings["total"] / fmm_total if fmm_total > 0 else float("inf"),
        "direct": {"timings": direct_timings, "solver_residual": direct_solution.residual,
                   "solver_method": direct_solution.method},
        "fmm": fmm,
        "P": fmm["P"],
        "M": fmm["M"],
        "iterations": fmm["iterations"],
        "timings": {"direct": direct_timings["total"], "fmm": fmm_total, "evaluation": evaluation},
    }


def run_validate(built, out_dir=None, workers=1, bench=False):
    sc = built.scenario
    return {
        "N": sc.N,
        "clusters": [
            {"label": label, "rods": len(c.scatterers), "enclosure_length": c.enclosure.length,
             "P": sc.cluster_P(j), "M": sc.cluster_M(j)}
            for j, (label, c) in enumerate(zip(built.labels, sc.clusters))
        ],
    }


RUNNERS = {"direct": run_direct, "fit": run_fit, "fmm": run_fmm, "compare": run_compare, "validate": run_validate}


def run(mode, scenario_path, out_dir=None, workers=1, seed=None, bench=False):
    """Run one mode over every wavelength of a scenario; returns the report dict."""
    if mode not in RUNNERS:
        raise ConfigError("unknown mode %r" % mode)
    normalized = scn.load(scenario_path)
    if seed is not None:
        normalized = scn.with_seed(normalized, seed)
    report = {
        "tool": "fastmonopole",
        "tool_version": __version__,
        "mode": mode,
        "scenario": normalized["name"],
        "scenario_hash": scn.scenario_hash(normalized),
        "runs": [],
    }
    wavelengths = normalized["wavelength"]
    if out_dir is not None:
        io.ensure_dir(out_dir)
    failures = []
    for wl in wavelengths:
        built = scn.build(normalized, wl)
        run_dir = None
        if out_dir is not None and mode != "validate":
            run_dir = out_dir if len(wavelengths) == 1 else io.ensure_dir(os.path.join(out_dir, "lambda_%g" % wl))
        elif mode != "validate":
            raise ConfigError("--out is required for mode %r" % mode)
        entry = {"wavelength": wl, "k": built.scenario.k}
        entry.update(RUNNERS[mode](built, run_dir, workers, bench))
        if run_dir is not None:
            entry["directory"] = os.path.relpath(run_dir, out_dir)
        report["runs"].append(entry)
        fmm = entry.get("fmm", entry) if mode in ("fmm", "compare") else None
        if fmm is not None and not fmm.get("converged", True):
            failures.append(wl)
    if out_dir is not None:
        io.write_json(os.path.join(out_dir, "report.json"), report)
    if failures:
        raise NumericalFailure("coupling iteration did not converge at wavelength(s) %s"
                               % ", ".join("%g" % w for w in failures))
    return report


def _parser():
    p = argparse.ArgumentParser(prog="fastmonopole", description="Multiple scattering by clusters of rods.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--scenario", required=True, help="scenario YAML file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="threads for field evaluation")
    p.add_argument("--seed", type=int, help="override lattice hole seeds (cluster j uses seed + j)")
    p.add_argument("--bench", action="store_true", help="exclude one warm-up solve from timings")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    history = getattr(exc, "history", None)
    if history:
        payload["history"] = [float(h) for h in history]
    residual = getattr(exc, "residual", None)
    if residual is not None:
        payload["residual"] = float(residual)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        return _fail(ConfigError("--workers must be >= 1"), 2)
    try:
        report = run(args.mode, args.scenario, args.out, args.workers, args.seed, args.bench)
    except ConvergenceError as exc:
        return _fail(exc, 3)
    except ScatteringError as exc:
        return _fail(exc, exc.exit_code)
    if args.mode == "validate":
        sys.stdout.write(json.dumps(io._jsonable(report), indent=2, sort_keys=True) + "\n")
    else:
        for entry in report["runs"]:
            summary = {k: entry[k] for k in ("wavelength", "N", "P", "iterations", "timing_ratio") if k in entry}
            for key in ("error_scattered", "homothety_error"):
                if key in entry:
                    summary[key] = entry[key]["max_rel"]
            sys.stdout.write(json.dumps(io._jsonable(summary)) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
