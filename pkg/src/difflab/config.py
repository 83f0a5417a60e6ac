"""Experiment config files: TOML with a fixed, typed schema.

Every run names one ``experiment`` and may carry the sections below.  Keys
outside the schema are rejected with their dotted path so typos never pass
silently.
"""

from __future__ import annotations

import sys
from typing import Any, Dict

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib

EXPERIMENTS = ("oracle", "fpsolve", "sweep", "sample", "train", "metrics")

NUM = (int, float)
LIST = list

# section -> key -> accepted python types
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "": {"experiment": (str,), "seed": (int,)},
    "schedule": {"beta0": NUM, "beta1": NUM, "T": NUM, "h_mode": (str,), "h_value": NUM},
    "model": {"family": (str,), "sigma0": NUM, "weights": (LIST,), "means": (LIST,), "vars": (LIST,)},
    "pert": {"epsilon": NUM, "mask": (str, int), "mask_c": NUM, "mode": (str,), "linear_coef": NUM, "pulse_s": NUM, "pulse_a": NUM},
    "sampler": {"scheme": (str,), "steps": (int,), "batch": (int,), "seed": (int,), "alpha": NUM, "init": (str,), "chunk": (int,)},
    "oracle": {"sigma0": NUM, "hsq": NUM, "case": (int,), "mask_c": NUM, "epsilon": NUM, "eps_grid": (LIST,), "T": NUM},
    "fpsolve": {"sigma0": NUM, "hsq": NUM, "case": (int,), "mask_c": NUM, "grid_n": (int,), "grid_R": NUM, "dt": NUM, "T": NUM, "richardson": (bool,)},
    "sweep": {
        "sigma0": (LIST, float, int),
        "case": (int,),
        "mask_c": NUM,
        "hsq": (LIST,),
        "sources": (LIST,),
        "eps_grid": (LIST,),
        "T": NUM,
        "grid_n": (int,),
        "richardson": (bool,),
        "mc_steps": (int,),
        "mc_batch": (int,),
        "mc_eps": (LIST,),
        "svg": (bool,),
        "fit_min": NUM,
    },
    "train": {"dataset": (str,), "weight": (str,), "steps": (int,), "batch": (int,), "lr": NUM, "decay_every": (int,), "decay": NUM, "t_min_frac": NUM, "optimizer": (str,), "init_seed": (int,), "rel_points": (int,), "rel_eval": (int,)},
    "metrics": {"p": (str,), "q": (str,), "bins": (int,), "n_proj": (int,)},
}


def _check(cfg: dict, section: str, schema: Dict[str, tuple]):
    for key, val in cfg.items():
        path = f"{section}.{key}" if section else key
        if isinstance(val, dict) and not section and key in SCHEMA:
            continue
        if key not in schema:
            raise ConfigError(f"{path}: unknown key")
        types = schema[key]
        # bool is an int subclass; only accept it where declared
        if isinstance(val, bool) and bool not in types:
            raise ConfigError(f"{path}: expected {'/'.join(t.__name__ for t in types)}, got bool")
        if not isinstance(val, types):
            raise ConfigError(f"{path}: expected {'/'.join(t.__name__ for t in types)}, got {type(val).__name__}")


def validate(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Check ``cfg`` against the schema; returns it unchanged."""
    if not cfg:
        raise ConfigError("empty config: an 'experiment' key is required")
    _check(cfg, "", SCHEMA[""])
    exp = cfg.get("experiment")
    if exp is None:
        raise ConfigError("experiment: missing")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    for name, val in cfg.items():
        if name in SCHEMA and name:
            if not isinstance(val, dict):
                raise ConfigError(f"{name}: expected a table")
            _check(val, name, SCHEMA[name])
    return cfg


def loads(text: str) -> Dict[str, Any]:
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return validate(cfg)


def load(path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name, {}))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps(cfg: Dict[str, Any]) -> str:
    """TOML text for a validated config (top-level keys, then sections)."""
    lines = [f"{k} = {_toml_value(v)}" for k, v in cfg.items() if not isinstance(v, dict)]
    for name, sec in cfg.items():
        if isinstance(sec, dict):
            lines.append("")
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_toml_value(v)}" for k, v in sec.items())
    return "\n".join(lines) + "\n"
