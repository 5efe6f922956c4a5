"""Scenario files: parsing, validation, hashing and construction.

A scenario is a YAML mapping. Lengths are absolute and the wavenumber is
``2 pi / wavelength``; ``wavelength`` may be a list, in which case every
command runs once per entry. Unknown keys are rejected at every level.

Example::

    wavelength: 1.0
    incident: {direction: [0, -1], amplitude: 1}
    clusters:
      - domain: {mean_radius: 2.0, lobe_amplitude: 0.6, lobes: 3}
        enclosure_ratio: 1.2
        lattice: {pitch: 0.15, radius: 0.05, hole_fraction: 0.1, seed: 1}
    output: {observation_radius: 8.0}
"""

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError, GeometryError
from .fast_monopole import CouplingConfig, FitConfig, MultiClusterScenario
from .foldy_lax import IncidentField, SolverConfig
from .geometry import Cluster, Scatterer, fill_with_rods, homothety, make_trefoil
from .monopole_layer import COLLOCATION_OFFSET, DEFAULT_M_RATIO, DEFAULT_P_GRID, DEFAULT_RESIDUAL_CAP, \
    DEFAULT_TAIL_THRESHOLD
from .special_fns import wavenumber

_AUTO = "auto"

# key -> (type, default); a default of ``...`` marks a required key
_DOMAIN = {
    "mean_radius": (float, ...),
    "lobe_amplitude": (float, 0.0),
    "lobes": (int, 3),
    "center": ("point", (0.0, 0.0)),
    "rotation": (float, 0.0),
    "M": (int, 256),
}
_LATTICE = {
    "pitch": (float, ...),
    "radius": (float, ...),
    "permittivity": (float, 12.0),
    "hole_fraction": (float, 0.0),
    "seed": (int, 0),
}
_ROD = {
    "position": ("point", ...),
    "radius": (float, ...),
    "permittivity": (float, 12.0),
}
_INCIDENT = {
    "direction": ("point", (0.0, -1.0)),
    "amplitude": ("complex", (1.0, 0.0)),
}
_SOLVER = {
    "rtol": (float, 1e-10),
    "n_direct": (int, 2000),
    "mode": (str, "auto"),
    "restart": (int, 60),
    "maxiter": (int, 2000),
}
_COUPLING = {
    "tolerance": (float, 1e-8),
    "max_iterations": (int, 50),
    "scheme": (str, "gauss-seidel"),
    "divergence_window": (int, 3),
    "cache_coupling": (bool, True),
}
_FIT = {
    "tail_threshold": (float, DEFAULT_TAIL_THRESHOLD),
    "residual_cap": (float, DEFAULT_RESIDUAL_CAP),
    "m_ratio": (float, float(DEFAULT_M_RATIO)),
    "offset": (float, COLLOCATION_OFFSET),
    "p_grid": ("intlist", list(DEFAULT_P_GRID)),
}
_OUTPUT = {
    "observation_radius": (float, None),
    "observation_points": (int, 360),
    "homothety": (float, 1.3),
    "points_per_wavelength": (float, 4.0),
    "padding": (float, None),
    "extent": ("floatlist", None),
    "field_map": (bool, True),
}
_CLUSTER_KEYS = {"domain", "enclosure_ratio", "lattice", "rods", "P", "M", "label"}
_TOP_KEYS = {"name", "description", "wavelength", "incident", "clusters", "solver", "coupling", "fit", "output"}


def _coerce(kind, value, where):
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "point":
            pt = [float(v) for v in value]
            if len(pt) != 2:
                raise ValueError
            return pt
        if kind == "complex":
            if isinstance(value, (list, tuple)):
                re, im = value
                return [float(re), float(im)]
            return [float(value), 0.0]
        if kind == "intlist":
            return [_coerce(int, v, where) for v in value]
        if kind == "floatlist":
            return [_coerce(float, v, where) for v in value]
    except (TypeError, ValueError):
        pass
    raise ConfigError("%s: invalid value %r" % (where, value))


def _section(raw, schema, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("%s must be a mapping" % where)
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError("%s: unknown key(s) %s" % (where, ", ".join(unknown)))
    out = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            out[key] = None if raw[key] is None and default is None else _coerce(kind, raw[key], "%s.%s" % (where, key))
        elif default is ...:
            raise ConfigError("%s: missing required key %r" % (where, key))
        else:
            out[key] = copy.deepcopy(list(default) if isinstance(default, tuple) else default)
    return out


def _size(value, where):
    if value is None or value == _AUTO:
        return _AUTO
    return _coerce(int, value, where)


def _cluster(raw, j):
    where = "clusters[%d]" % j
    if not isinstance(raw, dict):
        raise ConfigError("%s must be a mapping" % where)
    unknown = sorted(set(raw) - _CLUSTER_KEYS)
    if unknown:
        raise ConfigError("%s: unknown key(s) %s" % (where, ", ".join(unknown)))
    if ("lattice" in raw) == ("rods" in raw):
        raise ConfigError("%s: give exactly one of 'lattice' or 'rods'" % where)
    out = {
        "label": _coerce(str, raw.get("label", "cluster%d" % j), where + ".label"),
        "domain": _section(raw.get("domain"), _DOMAIN, where + ".domain"),
        "enclosure_ratio": _coerce(float, raw.get("enclosure_ratio", 1.2), where + ".enclosure_ratio"),
        "P": _size(raw.get("P"), where + ".P"),
        "M": _size(raw.get("M"), where + ".M"),
    }
    if "lattice" in raw:
        out["lattice"] = _section(raw["lattice"], _LATTICE, where + ".lattice")
    else:
        if not isinstance(raw["rods"], list):
            raise ConfigError("%s.rods must be a list" % where)
        out["rods"] = [_section(r, _ROD, "%s.rods[%d]" % (where, i)) for i, r in enumerate(raw["rods"])]
    return out


def normalize(raw):
    """Check a parsed scenario mapping and fill in every default."""
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError("unknown top-level key(s) %s" % ", ".join(unknown))
    if "wavelength" not in raw:
        raise ConfigError("missing required key 'wavelength'")
    wl = raw["wavelength"]
    wavelengths = [_coerce(float, w, "wavelength") for w in (wl if isinstance(wl, list) else [wl])]
    if not wavelengths or any(w <= 0 for w in wavelengths):
        raise ConfigError("wavelength must be positive")
    clusters = raw.get("clusters")
    if not clusters:
        raise ConfigError("scenario has no clusters (degenerate scenario)")
    if not isinstance(clusters, list):
        raise ConfigError("clusters must be a list")
    out = {
        "name": _coerce(str, raw.get("name", "scenario"), "name"),
        "wavelength": wavelengths,
        "incident": _section(raw.get("incident"), _INCIDENT, "incident"),
        "clusters": [_cluster(c, j) for j, c in enumerate(clusters)],
        "solver": _section(raw.get("solver"), _SOLVER, "solver"),
        "coupling": _section(raw.get("coupling"), _COUPLING, "coupling"),
        "fit": _section(raw.get("fit"), _FIT, "fit"),
        "output": _section(raw.get("output"), _OUTPUT, "output"),
    }
    if "description" in raw:
        out["description"] = _coerce(str, raw["description"], "description")
    return out


def scenario_hash(normalized):
    """SHA-256 of the canonical JSON form of a normalized scenario.

    ``name`` and ``description`` do not take part in the hash.
    """
    data = {k: v for k, v in normalized.items() if k not in ("name", "description")}
    text = json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def load(path):
    """Read and normalize a scenario file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("cannot read scenario %s: %s" % (path, exc)) from exc
    except yaml.YAMLError as exc:
        raise ConfigError("cannot parse scenario %s: %s" % (path, exc)) from exc
    return normalize(raw)


def with_seed(normalized, seed):
    """Copy of the scenario with lattice seeds ``seed + cluster index``."""
    out = copy.deepcopy(normalized)
    for j, c in enumerate(out["clusters"]):
        if "lattice" in c:
            c["lattice"]["seed"] = int(seed) + j
    return out


@dataclass
class Built:
    """A scenario ready to run at one wavelength."""

    scenario: MultiClusterScenario
    wavelength: float
    domains: list
    labels: list
    output: dict


def _domain_curve(spec, label):
    return make_trefoil(spec["mean_radius"], spec["lobe_amplitude"], spec["lobes"], tuple(spec["center"]),
                        spec["rotation"], spec["M"], label)


def build(normalized, wavelength=None):
    """Construct the :class:`MultiClusterScenario` for one wavelength."""
    if wavelength is None:
        wavelength = normalized["wavelength"][0]
    k = wavenumber(wavelength)
    inc = normalized["incident"]
    direction = np.asarray(inc["direction"], dtype=float)
    norm = float(np.hypot(*direction))
    if norm == 0:
        raise ConfigError("incident.direction must be non-zero")
    incident = IncidentField(tuple(direction / norm), complex(*inc["amplitude"]))
    clusters, domains, labels, Ps, Ms = [], [], [], [], []
    for c in normalized["clusters"]:
        domain = _domain_curve(c["domain"], c["label"])
        enclosure = homothety(domain, c["enclosure_ratio"])
        if "lattice" in c:
            lat = c["lattice"]
            rods = fill_with_rods(domain, lat["pitch"], lat["radius"], lat["permittivity"], lat["hole_fraction"],
                                  lat["seed"])
        else:
            rods = [Scatterer(tuple(r["position"]), r["radius"], r["permittivity"]) for r in c["rods"]]
        clusters.append(Cluster(rods, enclosure))
        domains.append(domain)
        labels.append(c["label"])
        Ps.append(None if c["P"] == _AUTO else c["P"])
        Ms.append(None if c["M"] == _AUTO else c["M"])
    f = normalized["fit"]
    fit = FitConfig(
        P=None if all(p is None for p in Ps) else Ps,
        M=None if all(m is None for m in Ms) else Ms,
        tail_threshold=f["tail_threshold"],
        residual_cap=f["residual_cap"],
        p_grid=tuple(f["p_grid"]),
        m_ratio=f["m_ratio"],
        offset=f["offset"],
    )
    scenario = MultiClusterScenario(
        clusters=clusters,
        incident=incident,
        k=k,
        coupling=CouplingConfig(**normalized["coupling"]),
        fit=fit,
        solver=SolverConfig(**normalized["solver"]),
    )
    try:
        scenario.validate()
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc
    return Built(scenario, wavelength, domains, labels, dict(normalized["output"]))
