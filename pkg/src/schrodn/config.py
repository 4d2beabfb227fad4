"""Experiment configuration: YAML schema, validation, overrides and presets.

A config is a YAML mapping (schema version 1).  Every key has a default, so
an empty file is valid; see :data:`DEFAULTS`.  Validation errors raise
:class:`~schrodn.errors.ConfigError` naming the dotted path of the field.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from . import calculus as tc
from .errors import ConfigError
from .geometry import metric_from_preset

SCHEMA_VERSION = 1
OUTPUT_ENV = "SCHRODN_OUTPUT_DIR"

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "seed": 0,
    "workers": 1,
    "output_dir": "schrodn-out",
    "metric": {"preset": "euclidean", "params": {}, "ext_radius": 1.1},
    "grid": {"n_r": 24, "n_theta": 64, "T": 4.5, "dt": None},
    "basis": {"K": 16, "M": 24},
    "fields": {
        "X1": {"preset": "zero", "params": {}},
        "X2": {"preset": "zero", "params": {}},
        "A1": {"preset": "zero", "params": {}},
        "q1": {"preset": "zero", "params": {}},
        "A2": {"preset": "zero", "params": {}},
        "q2": {"preset": "zero", "params": {}},
    },
    "forward": {"mode": 1, "temporal": 3},
    "probe": {"lam": [8, 16, 32, 64], "rho": [0.5, 0.7, 0.9], "n_sources": 8,
              "n_directions": 8, "phase_step": 0.05, "n_r": 33, "n_theta": 256},
    "inversion": {"tau": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6], "cg_tol": 1e-8,
                  "n_r": 16, "n_theta": 32, "n_boundary": 48, "n_direction": 48,
                  "step": 5e-3},
    "stability": {"epsilons": [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
                  "direction": {"preset": "swirl", "params": {}}},
    "carleman": {"gamma": 1.0, "h": [0.1, 0.05, 0.025, 0.0125, 0.00625],
                 "n_r": 1600, "n_theta": 1024},
}


# -- field presets -------------------------------------------------------------------


def _bump(p, radius=0.8):
    r2 = np.sum(p ** 2, -1) / radius ** 2
    inside = r2 < 1
    return np.where(inside, np.exp(1.0 - 1.0 / np.where(inside, 1.0 - r2, 1.0)), 0.0)


def _wall(p):
    return (1.0 - np.sum(p ** 2, -1)) ** 2


def _vec_zero(p, **_):
    return np.zeros(p.shape)


def _vec_constant(p, value=(0.3, 0.1)):
    return np.broadcast_to(np.asarray(value, float), p.shape).copy()


def _vec_swirl(p, amplitude=1.0):
    """Divergence-free rotation times ``(1 - |x|^2)^2`` (vanishes on the boundary)."""
    w = _wall(p)
    return amplitude * np.stack([-p[..., 1] * w, p[..., 0] * w + w], -1)


def _vec_rotation_bump(p, amplitude=0.3, radius=0.7):
    b = _bump(p, radius)
    return amplitude * np.stack([-p[..., 1] * b, p[..., 0] * b], -1)


def _vec_gradient_bump(p, amplitude=0.3):
    """``grad chi`` with ``chi = amplitude (1 - |x|^2)^2 x^1``."""
    x, y = p[..., 0], p[..., 1]
    b = 1 - x * x - y * y
    return amplitude * np.stack([b * b - 4 * x * x * b, -4 * x * y * b], -1)


def _vec_solenoidal_bump(p, amplitude=0.3, radius=0.7):
    """Skew gradient of a bump: divergence-free and compactly supported (Euclidean)."""
    r2 = np.sum(p ** 2, -1) / radius ** 2
    inside = r2 < 1
    b = _bump(p, radius)
    db = np.where(inside, -b / np.where(inside, (1 - r2) ** 2, 1.0), 0.0) * 2 / radius ** 2
    gx, gy = db * p[..., 0], db * p[..., 1]
    shift = 1 + 0.5 * p[..., 0]
    # curl of b * shift: (d_y (b s), -d_x (b s))
    return amplitude * np.stack([gy * shift, -(gx * shift + 0.5 * b)], -1)


def _sc_zero(p, **_):
    return np.zeros(p.shape[:-1])


def _sc_constant(p, value=1.0):
    return np.full(p.shape[:-1], float(value))


def _sc_bump(p, amplitude=1.0, radius=0.7, center=(0.0, 0.0)):
    return amplitude * _bump(p - np.asarray(center, float), radius)


def _sc_radial(p, amplitude=1.0):
    return amplitude * _wall(p)


VECTOR_PRESETS = {
    "zero": _vec_zero, "constant": _vec_constant, "swirl": _vec_swirl,
    "rotation_bump": _vec_rotation_bump, "gradient_bump": _vec_gradient_bump,
    "solenoidal_bump": _vec_solenoidal_bump,
}
SCALAR_PRESETS = {"zero": _sc_zero, "constant": _sc_constant, "bump": _sc_bump,
                  "radial": _sc_radial}


def field_function(spec, kind, path):
    """Callable ``points -> values`` for a preset spec ``{preset, params}``."""
    table = SCALAR_PRESETS if kind == "scalar" else VECTOR_PRESETS
    if not isinstance(spec, dict):
        raise ConfigError(path, "must be a mapping with keys preset and params")
    name = spec.get("preset")
    if name not in table:
        raise ConfigError(f"{path}.preset", f"unknown {kind} preset {name!r}; "
                          f"choose from {sorted(table)}")
    params = spec.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError(f"{path}.params", "must be a mapping")
    fn = table[name]
    try:
        fn(np.zeros((1, 2)), **params)
    except TypeError as exc:
        raise ConfigError(f"{path}.params", f"invalid parameters for {name!r}: {exc}") from exc
    return lambda p: fn(np.asarray(p, float), **params)


# -- loading and validation ----------------------------------------------------------


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(p, "unknown key")
        if isinstance(base[k], dict) and k not in ("params",):
            if not isinstance(v, dict):
                raise ConfigError(p, "must be a mapping")
            if "params" in base[k] or k == "fields":
                out[k] = _merge_loose(base[k], v, p)
            else:
                out[k] = _merge(base[k], v, p)
        else:
            out[k] = v
    return out


def _merge_loose(base, over, path):
    # field specs: only preset/params (params free-form)
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}"
        if k not in base:
            raise ConfigError(p, "unknown key")
        if isinstance(base[k], dict) and "preset" in base[k]:
            if not isinstance(v, dict):
                raise ConfigError(p, "must be a mapping")
            bad = set(v) - {"preset", "params"}
            if bad:
                raise ConfigError(f"{p}.{sorted(bad)[0]}", "unknown key")
            out[k] = {"preset": v.get("preset", base[k]["preset"]),
                      "params": v.get("params", {}) or {}}
        else:
            out[k] = v
    return out


def _set_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for i, k in enumerate(keys[:-1]):
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(".".join(keys[:i + 1]), "unknown key in override")
        node = node[k]
    if not isinstance(node, dict) or (keys[-1] not in node and keys[-2:-1] != ["params"]):
        raise ConfigError(dotted, "unknown key in override")
    node[keys[-1]] = value


def apply_overrides(raw, overrides):
    """Apply ``key.path=value`` strings (values parsed as YAML) to a raw mapping."""
    cfg = _merge(DEFAULTS, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must have the form key=value")
        key, _, val = item.partition("=")
        _set_path(cfg, key.strip(), yaml.safe_load(val))
    return cfg


def _pos_int(cfg, path):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v <= 0:
        raise ConfigError(path, f"must be a positive integer (got {v!r})")
    return int(v)


def _pos_float(cfg, path, allow_none=False):
    v = _get(cfg, path)
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(path, f"must be a positive number (got {v!r})")
    return float(v)


def _pos_list(cfg, path):
    v = _get(cfg, path)
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "must be a nonempty list")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0:
            raise ConfigError(f"{path}[{i}]", f"must be a positive number (got {x!r})")
    return [float(x) for x in v]


def _get(cfg, path):
    node = cfg
    for k in path.split("."):
        node = node[k]
    return node


@dataclass
class ExperimentConfig:
    """Validated configuration; ``data`` is the merged mapping."""

    data: dict

    @property
    def fingerprint(self):
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def __getitem__(self, key):
        return self.data[key]

    def metric(self):
        m = self.data["metric"]
        return metric_from_preset(m["preset"], m["params"], ext_radius=m["ext_radius"])

    def grid(self, n_r=None, n_theta=None):
        g = self.data["grid"]
        return tc.PolarGrid(n_r or g["n_r"], n_theta or g["n_theta"], self.metric())

    def probe_grid(self):
        p = self.data["probe"]
        return self.grid(p["n_r"], p["n_theta"])

    def inversion_grid(self):
        p = self.data["inversion"]
        return self.grid(p["n_r"], p["n_theta"])

    def field(self, name, grid):
        kind = "scalar" if name.startswith("q") else "vector"
        fn = field_function(self.data["fields"][name], kind, f"fields.{name}")
        if kind == "scalar":
            return tc.ScalarField.from_function(grid, fn)
        if name.startswith("A"):
            return tc.CovectorField.from_function(grid, fn)
        return tc.VectorField.from_function(grid, fn)

    def direction(self, grid):
        fn = field_function(self.data["stability"]["direction"], "vector",
                            "stability.direction")
        return tc.VectorField.from_function(grid, fn)

    def basis(self):
        from .schrodinger import SpaceTimeBasis
        return SpaceTimeBasis(self.data["basis"]["K"], self.data["basis"]["M"],
                              self.data["grid"]["T"])


def validate(cfg):
    """Check a merged mapping and return an :class:`ExperimentConfig`."""
    if cfg.get("version") != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {cfg.get('version')!r}")
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    _pos_int(cfg, "workers")
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        raise ConfigError("output_dir", "must be a nonempty string")
    for p in ("grid.n_r", "grid.n_theta", "basis.K", "basis.M", "probe.n_sources",
              "probe.n_directions", "probe.n_r", "probe.n_theta", "inversion.n_r",
              "inversion.n_theta", "inversion.n_boundary", "inversion.n_direction",
              "carleman.n_r", "carleman.n_theta", "forward.temporal"):
        _pos_int(cfg, p)
    for p in ("grid.n_r", "probe.n_r", "inversion.n_r"):
        if _get(cfg, p) < 6:
            raise ConfigError(p, "must be at least 6")
    for p in ("grid.n_theta", "probe.n_theta", "inversion.n_theta"):
        if _get(cfg, p) % 2 or _get(cfg, p) < 8:
            raise ConfigError(p, "must be even and at least 8")
    T = _pos_float(cfg, "grid.T")
    _pos_float(cfg, "grid.dt", allow_none=True)
    for p in ("probe.phase_step", "inversion.cg_tol", "inversion.step", "carleman.gamma",
              "metric.ext_radius"):
        _pos_float(cfg, p)
    for p in ("probe.lam", "probe.rho", "inversion.tau", "stability.epsilons", "carleman.h"):
        _pos_list(cfg, p)
    for i, r in enumerate(cfg["probe"]["rho"]):
        if r >= 1:
            raise ConfigError(f"probe.rho[{i}]", "must lie in (0, 1)")
    if cfg["basis"]["K"] > cfg["grid"]["n_theta"] // 2 - 1:
        raise ConfigError("basis.K", f"exceeds the angular resolution n_theta/2 - 1 = "
                          f"{cfg['grid']['n_theta'] // 2 - 1}")
    if isinstance(cfg["forward"]["mode"], bool) or not isinstance(cfg["forward"]["mode"], int):
        raise ConfigError("forward.mode", "must be an integer")
    if abs(cfg["forward"]["mode"]) > cfg["basis"]["K"]:
        raise ConfigError("forward.mode", "exceeds basis.K")
    if cfg["forward"]["temporal"] > cfg["basis"]["M"]:
        raise ConfigError("forward.temporal", "exceeds basis.M")
    if cfg["metric"]["ext_radius"] <= 1.0:
        raise ConfigError("metric.ext_radius", "must exceed the disk radius 1")
    try:
        metric = metric_from_preset(cfg["metric"]["preset"], cfg["metric"]["params"],
                                    ext_radius=cfg["metric"]["ext_radius"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("metric.preset", str(exc)) from exc
    T0 = 1.0 + metric.diameter_bound(metric.ext_radius)
    if T <= T0:
        raise ConfigError("grid.T", f"must exceed T0 = 1 + diam(M1) = {T0:.4g}")
    for name, spec in cfg["fields"].items():
        field_function(spec, "scalar" if name.startswith("q") else "vector", f"fields.{name}")
    dfn = field_function(cfg["stability"]["direction"], "vector", "stability.direction")
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    edge = np.stack([np.cos(th), np.sin(th)], -1)
    if np.max(np.abs(dfn(edge))) > 1e-12:
        raise ConfigError("stability.direction", "must vanish on the boundary "
                          "(the stability runs require X1 = X2 there)")
    # Nyquist guard for the probe sweep
    pg = tc.PolarGrid(cfg["probe"]["n_r"], cfg["probe"]["n_theta"], metric)
    ok = [lam for lam in cfg["probe"]["lam"] if lam * pg.h <= 0.25]
    if not ok:
        raise ConfigError("probe.lam", f"no lam satisfies lam * h <= 0.25 on the probe grid "
                          f"(h = {pg.h:.4g}, lam <= {0.25 / pg.h:.3g})")
    return ExperimentConfig(cfg)


def load_config(path=None, overrides=()):
    """Read YAML from ``path`` (``None`` means defaults), apply overrides, validate."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
    cfg = apply_overrides(raw, overrides)
    return validate(cfg)


def dump_defaults():
    """Default config as YAML text."""
    return yaml.safe_dump(DEFAULTS, sort_keys=False)
