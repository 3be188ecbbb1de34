"""YAML run configuration: defaults, strict validation, resolution."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .cta import ObfuscationPlan
from .protocol import ROUTES


class ConfigError(ValueError):
    """Validation failure; ``key`` is the dotted path of the first bad entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


_PLAN = {
    "L": 10,
    "sigma": 4.0,
    "k_core": 2,
    "k_nn": 5,
    "trust_intervals": [[0.0, 0.5, 2], [0.5, 1.0, 10]],
    "angle_range": [0.0, 6.283185307179586],
    "rng_seed": None,
    "align": "procrustes",
}

DEFAULTS = {
    "seed": 0,
    "output_dir": "out",
    "dataset": {
        "path": None,
        "items": None,
        "sentinel": 99.0,
        "delimiter": ",",
        "rating_range": [-10.0, 10.0],
        "synthetic": None,
    },
    "plan": copy.deepcopy(_PLAN),
    "obfuscate": {"trust": 1.0, "d": None},
    "simulate": {
        "target": 0,
        "participants": None,
        "requested": None,
        "theta": 0.0,
        "group_size": 10,
        "target_key_bits": 512,
        "mediator_key_bits": 1026,
        "weight_scale": 10**8,
        "fp_scale": 10**6,
        "route": "corrected",
        "cutoff": 0.0,
        "fold_width": 10,
        "trust_states": 5,
        "min_shared": 2,
        "plan": {
            "L": 10, "sigma": 6.0, "k_core": 2, "k_nn": 4,
            "trust_intervals": [[0.0, 0.3, 1], [0.3, 0.6, 2], [0.6, 1.0, 10]],
            "angle_range": [0.0, 0.0], "rng_seed": None, "align": "procrustes",
        },
    },
    "experiment": {
        "fig3": {"key_bits": [256, 512, 1024, 2048], "record_count": 20, "repeats": 3},
        "fig4": {"records": [1000, 2000, 4000, 8000], "key_bits": 256},
        "fig56": {"d_sweep": [2, 4, 8, 16, 32, 64, 100], "theta": 0.35, "trust_states": 5,
                  "train_fraction": 0.8, "holdout": 5},
        "fig7": {"fractions": [0.2, 0.4, 0.6, 0.8, 1.0], "n_targets": 10, "superpeers": 3,
                 "theta": 0.0, "target_key_bits": 128, "mediator_key_bits": 258,
                 "train_fraction": 0.8, "holdout": 5},
    },
}

_SYNTHETIC = {"n_users": 500, "n_items": 100, "mode": "clustered", "n_groups": 6,
              "density": 0.6, "noise": 1.5, "seed": None}


def _merge(base: dict, over: dict, prefix: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(path, "expected a mapping")
            out[key] = _merge(base[key], value, path + ".")
        elif key == "synthetic" and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(path, "expected a mapping")
            out[key] = _merge(_SYNTHETIC, value, path + ".")
        else:
            out[key] = value
    return out


def _int(cfg, path, lo=None):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return v


def _num(cfg, path, lo=None, hi=None):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(path, f"must lie in [{lo}, {hi}]")
    return float(v)


def _get(cfg, path):
    node = cfg
    for part in path.split("."):
        node = node[part]
    return node


def _plan(cfg, prefix: str) -> None:
    p = _get(cfg, prefix)
    if p["rng_seed"] is None:
        p["rng_seed"] = cfg["seed"]
    try:
        build_plan(p)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from None


def build_plan(p: dict) -> ObfuscationPlan:
    return ObfuscationPlan(
        L=p["L"], sigma=float(p["sigma"]), k_core=p["k_core"], k_nn=p["k_nn"],
        trust_intervals=tuple((float(a), float(b), int(d)) for a, b, d in p["trust_intervals"]),
        angle_range=tuple(float(x) for x in p["angle_range"]),
        rng_seed=p["rng_seed"], align=p["align"])


def resolve(raw: dict | None, seed: int | None = None, output_dir: str | None = None) -> dict:
    """Defaults merged with ``raw``, validated, seeds filled in."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    cfg = _merge(DEFAULTS, raw, "")
    if seed is not None:
        cfg["seed"] = seed
    if output_dir is not None:
        cfg["output_dir"] = output_dir
    _int(cfg, "seed", 0)
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        raise ConfigError("output_dir", "expected a non-empty path")

    ds = cfg["dataset"]
    if ds["path"] is None and ds["synthetic"] is None:
        raise ConfigError("dataset.path", "required (or give dataset.synthetic)")
    if ds["path"] is not None and not Path(ds["path"]).is_file():
        raise ConfigError("dataset.path", f"file not found: {ds['path']}")
    if ds["items"] is not None and not Path(ds["items"]).is_file():
        raise ConfigError("dataset.items", f"file not found: {ds['items']}")
    rr = ds["rating_range"]
    if not (isinstance(rr, list) and len(rr) == 2 and rr[1] > rr[0]):
        raise ConfigError("dataset.rating_range", "expected [lo, hi] with hi > lo")
    _num(cfg, "dataset.sentinel")
    if ds["synthetic"] is not None:
        syn = ds["synthetic"]
        if syn["seed"] is None:
            syn["seed"] = cfg["seed"]
        _int(cfg, "dataset.synthetic.n_users", 2)
        _int(cfg, "dataset.synthetic.n_items", 1)
        _num(cfg, "dataset.synthetic.density", 0.0, 1.0)
        if syn["mode"] not in ("clustered", "uniform"):
            raise ConfigError("dataset.synthetic.mode", "expected clustered or uniform")

    _plan(cfg, "plan")
    _num(cfg, "obfuscate.trust", 0.0, 1.0)
    if cfg["obfuscate"]["d"] is not None:
        _int(cfg, "obfuscate.d", 1)

    sim = "simulate."
    _int(cfg, sim + "target", 0)
    _num(cfg, sim + "theta", 0.0, 1.0)
    _int(cfg, sim + "group_size", 1)
    tb = _int(cfg, sim + "target_key_bits", 128)
    mb = _int(cfg, sim + "mediator_key_bits", 128)
    if mb < 2 * tb + 2:
        raise ConfigError(sim + "mediator_key_bits", f"must be >= 2 x target_key_bits + 2 = {2 * tb + 2}")
    _int(cfg, sim + "weight_scale", 1)
    _int(cfg, sim + "fp_scale", 1)
    _int(cfg, sim + "fold_width", 1)
    _int(cfg, sim + "trust_states", 2)
    _int(cfg, sim + "min_shared", 1)
    _num(cfg, sim + "cutoff")
    if cfg["simulate"]["route"] not in ROUTES:
        raise ConfigError(sim + "route", f"expected one of {list(ROUTES)}")
    parts = cfg["simulate"]["participants"]
    if parts is not None and not (isinstance(parts, int) and not isinstance(parts, bool) and parts >= 1) \
            and not (isinstance(parts, list) and all(isinstance(x, int) for x in parts)):
        raise ConfigError(sim + "participants", "expected a count, a list of row indices, or null")
    _plan(cfg, sim + "plan")

    ex = "experiment."
    for key in ("fig3.key_bits", "fig4.records", "fig56.d_sweep"):
        v = _get(cfg, ex + key)
        if not (isinstance(v, list) and v and all(isinstance(x, int) and x > 0 for x in v)):
            raise ConfigError(ex + key, "expected a non-empty list of positive integers")
    fr = cfg["experiment"]["fig7"]["fractions"]
    if not (isinstance(fr, list) and fr and all(isinstance(x, (int, float)) and 0 <= x <= 1 for x in fr)):
        raise ConfigError(ex + "fig7.fractions", "expected fractions in [0, 1]")
    _int(cfg, ex + "fig3.record_count", 1)
    _int(cfg, ex + "fig3.repeats", 1)
    _int(cfg, ex + "fig4.key_bits", 128)
    _num(cfg, ex + "fig56.theta", 0.0, 1.0)
    _num(cfg, ex + "fig7.theta", 0.0, 1.0)
    _int(cfg, ex + "fig7.n_targets", 1)
    _int(cfg, ex + "fig7.superpeers", 1)
    for fig in ("fig56", "fig7"):
        _num(cfg, f"{ex}{fig}.train_fraction", 0.0, 1.0)
        _int(cfg, f"{ex}{fig}.holdout", 0)
    return cfg


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<config>", f"cannot read {path}: {exc.strerror}") from None
    return load_text(text)


def load_text(text: str) -> dict:
    try:
        return yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("<config>", f"invalid YAML: {exc}") from None


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)
