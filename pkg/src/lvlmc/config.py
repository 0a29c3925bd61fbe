"""INI run configuration.

Sections and keys (defaults in brackets)::

    [data]
    samples          sample table path (required for transform/run)
    variables        comma list of variable columns [all non-coordinate columns]
    compositional    apply alr against Rest = total - sum(parts) [false]
    total            closure constant of compositional data [100]
    test_samples     held-out table for validate [none]
    link_radius      max test-sample to node distance for validate [2.5]

    [neighborhood]
    l                samples per local neighborhood [800]
    interp_neighbors field sites per interpolation target [16]
    clip_negative_weights  zero negative kriging weights [false]

    [variogram]
    lag_width        [extent / 40]
    n_lags           [20]
    nugget           fixed nugget for the fit [fitted]
    sill, range      give both to skip fitting and use this model [none]

    [grid]
    origin           x, y, z [0, 0, 0]
    counts           nx, ny, nz [75, 90, 25]
    spacing          dx, dy, dz [2, 2, 2]

    [simulation]
    n_real           [100]
    seed             master seed [0]
    node_cap         dense simulation cap on locations [20000]
    conditional      condition on the sample factors [true]
    engine           cholesky | turning-bands [cholesky]

    [output]
    dir              output directory [out]
    write_intermediate  per-realization factor and score tables [true]

Relative paths are resolved against the directory of the config file.
Unknown sections or keys are errors.
"""

import configparser
import os

from .exceptions import ConfigError

__all__ = ["DEFAULTS", "load_config", "default_config", "echo"]


def _list(s):
    return [t.strip() for t in s.split(",") if t.strip()]


def _floats3(s):
    v = [float(t) for t in _list(s)]
    if len(v) != 3:
        raise ValueError("expected three comma-separated numbers")
    return tuple(v)


def _ints3(s):
    v = _floats3(s)
    if any(x != int(x) for x in v):
        raise ValueError("expected three integers")
    return tuple(int(x) for x in v)


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


DEFAULTS = {
    "data": {
        "samples": (str, None),
        "variables": (_list, None),
        "compositional": (_bool, False),
        "total": (float, 100.0),
        "test_samples": (str, None),
        "link_radius": (float, 2.5),
    },
    "neighborhood": {
        "l": (int, 800),
        "interp_neighbors": (int, 16),
        "clip_negative_weights": (_bool, False),
    },
    "variogram": {
        "lag_width": (float, None),
        "n_lags": (int, 20),
        "nugget": (float, None),
        "sill": (float, None),
        "range": (float, None),
    },
    "grid": {
        "origin": (_floats3, (0.0, 0.0, 0.0)),
        "counts": (_ints3, (75, 90, 25)),
        "spacing": (_floats3, (2.0, 2.0, 2.0)),
    },
    "simulation": {
        "n_real": (int, 100),
        "seed": (int, 0),
        "node_cap": (int, 20000),
        "conditional": (_bool, True),
        "engine": (str, "cholesky"),
    },
    "output": {
        "dir": (str, "out"),
        "write_intermediate": (_bool, True),
    },
}

_PATHS = {("data", "samples"), ("data", "test_samples"), ("output", "dir")}


def default_config():
    return {s: {k: v[1] for k, v in keys.items()} for s, keys in DEFAULTS.items()}


def load_config(path=None, text=None):
    """Parse and validate a configuration; missing keys take their defaults."""
    cfg = default_config()
    if path is None and text is None:
        return cfg
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            cp.read_string(text)
            base = os.getcwd()
        else:
            with open(path) as fh:
                cp.read_file(fh)
            base = os.path.dirname(os.path.abspath(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            conv = DEFAULTS[section][key][0]
            try:
                val = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
            if (section, key) in _PATHS and not os.path.isabs(val):
                val = os.path.normpath(os.path.join(base, val))
            cfg[section][key] = val
    _check(cfg)
    return cfg


def _check(cfg):
    nb, sim, vg = cfg["neighborhood"], cfg["simulation"], cfg["variogram"]
    if nb["l"] < 2:
        raise ConfigError("[neighborhood] l must be at least 2")
    if nb["interp_neighbors"] < 1:
        raise ConfigError("[neighborhood] interp_neighbors must be at least 1")
    if sim["n_real"] < 1:
        raise ConfigError("[simulation] n_real must be at least 1")
    if sim["engine"] not in ("cholesky", "turning-bands"):
        raise ConfigError(f"[simulation] engine {sim['engine']!r} is not known")
    if (vg["sill"] is None) != (vg["range"] is None):
        raise ConfigError("[variogram] give both sill and range, or neither")
    if any(c < 1 for c in cfg["grid"]["counts"]) or any(s <= 0 for s in cfg["grid"]["spacing"]):
        raise ConfigError("[grid] counts and spacing must be positive")


def echo(cfg, base=None):
    """JSON-ready copy of a config; paths relative to ``base`` when given."""
    out = {}
    for s, keys in cfg.items():
        out[s] = {}
        for k, v in keys.items():
            if (s, k) in _PATHS and v is not None and base is not None:
                v = os.path.relpath(v, base)
            out[s][k] = list(v) if isinstance(v, tuple) else v
    return out
