"""Run configuration: typed keys, layered resolution and validation.

Keys are flat dotted names (``sampler.T``).  In an INI file the part before
the dot is the section; undotted keys such as ``seed`` live in ``[run]``.
Resolution order: experiment defaults < file < ``--set`` overrides < explicit
flags.  Unknown keys, unparsable values and out-of-range values raise
:class:`ConfigError` naming the key.
"""
import configparser
import math
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ContractError


class ConfigError(ContractError):
    pass


@dataclass(frozen=True)
class Param:
    kind: type | tuple              # float, int, str, bool or a tuple of allowed strings
    default: Any
    check: Callable | None = None   # value -> bool
    rule: str = ""                  # human-readable form of ``check``
    allow_auto: bool = False


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


def _at_least(n):
    return lambda v: v >= n


POS = dict(check=_pos, rule="> 0")

COMMON = {
    "seed": Param(int, 0, _nonneg, ">= 0"),
}

SAMPLER = {
    "sampler.T": Param(float, 0.5, **POS),
    "sampler.dt": Param(float, 1e-3, **POS),
}

DMAPS = {
    "dmaps.alpha": Param(float, 1.0, _unit, "in [0, 1]"),
    "dmaps.epsilon": Param(float, "auto", _pos, "> 0 or auto", allow_auto=True),
    "dmaps.eps_method": Param(("median", "knn"), "median"),
    "dmaps.eps_k": Param(int, 10, _at_least(1), ">= 1"),
    "dmaps.k": Param(int, 5, _at_least(1), ">= 1"),
}

# outer loops pick the kernel scale themselves; only the rule is configurable
OUTER_KERNEL = {
    "dmaps.eps_method": Param(("median", "knn"), "median"),
    "dmaps.eps_k": Param(int, 10, _at_least(1), ">= 1"),
}

GH = {
    "gh.delta": Param(float, 1e-3, lambda v: 0 < v < 1, "in (0, 1)"),
    "gh.epsilon": Param(float, "auto", _pos, "> 0 or auto", allow_auto=True),
}

CYL = {
    "cyl.k1": Param(float, 1e4, **POS),
    "cyl.k2": Param(float, 20.0, **POS),
    "cyl.R": Param(float, 5.0 / math.pi, **POS),
}


def _merge(*parts, **overrides):
    out = {}
    for p in parts:
        out.update(p)
    for k, v in overrides.items():
        key = k.replace("__", ".")
        base = out[key]
        out[key] = Param(base.kind, v, base.check, base.rule, base.allow_auto)
    return out


SCHEMAS = {
    "fig1-density": _merge(COMMON, SAMPLER, {
        "fig1.x0": Param(float, 1.0),
        "fig1.n_real": Param(int, 10_000, _at_least(2), ">= 2"),
        "fig1.n_steps": Param(int, 100, _at_least(1), ">= 1"),
        "fig1.n_dump": Param(int, 20, _nonneg, ">= 0"),
    }),
    "swissroll": _merge(COMMON, DMAPS, {
        "swissroll.m": Param(int, 2000, _at_least(10), ">= 10"),
    }, dmaps__eps_method="knn"),
    "ridge": _merge(COMMON, SAMPLER, OUTER_KERNEL, GH, {
        "sampler.n_accept": Param(int, 1000, _at_least(10), ">= 10"),
        "outer.n_coarse_iters": Param(int, 6, _at_least(1), ">= 1"),
        "outer.step_factor": Param(float, 1.0, **POS),
        "outer.min_correlation": Param(float, 0.2, _unit, "in [0, 1]"),
        "ridge.theta0": Param(float, math.pi / 2),
        "ridge.r0": Param(float, math.sqrt(4.32), **POS),
        "baseline.budget": Param(int, 300_000, _at_least(0), ">= 0"),
    }, sampler__T=0.02, sampler__dt=0.005),
    "cylinder": _merge(COMMON, SAMPLER, OUTER_KERNEL, GH, CYL, {
        "outer.n_coarse_iters": Param(int, 15, _at_least(1), ">= 1"),
        "outer.grid_rows": Param(int, 8, _at_least(2), ">= 2"),
        "outer.grid_cols": Param(int, 10, _at_least(2), ">= 2"),
        "outer.grid_extent_theta": Param(float, 0.6, **POS),
        "outer.grid_extent_z": Param(float, 0.6, **POS),
        "outer.n_traj": Param(int, 25, _at_least(2), ">= 2"),
        "outer.burst_duration": Param(float, 0.01, **POS),
        "outer.t_ode": Param(float, 1.0, **POS),
        "outer.ode_steps": Param(int, 50, _at_least(1), ">= 1"),
        "outer.degree": Param(int, 1, lambda v: v in (1, 2), "1 or 2"),
        "outer.tol": Param(float, 1e-3, **POS),
        "outer.gh_train": Param(int, 600, _at_least(10), ">= 10"),
        "cylinder.theta0": Param(float, math.pi / 4),
        "cylinder.z0": Param(float, 0.0),
    }, sampler__T=0.1, sampler__dt=2e-5),
    "grid-linear2d": _merge(COMMON, SAMPLER, {
        "recovery.rows": Param(int, 8, _at_least(3), ">= 3"),
        "recovery.cols": Param(int, 10, _at_least(3), ">= 3"),
        "recovery.n_traj": Param(int, 150, _at_least(2), ">= 2"),
        "recovery.Dt": Param(float, 0.01, **POS),
        "recovery.n_cov": Param(int, 100, _at_least(3), ">= 3"),
        "recovery.cov_dt": Param(float, 1e-5, **POS),
        "recovery.eps_scale": Param(float, 0.4, **POS),
        "recovery.sphere_span": Param(float, 2.4, lambda v: 0 < v < math.pi, "in (0, pi)"),
        "recovery.sphere_lat": Param(float, 0.5),
        "recovery.degree": Param(int, 2, lambda v: v in (1, 2), "1 or 2"),
        "recovery.mask_fraction": Param(float, 0.05, _unit, "in [0, 1]"),
    }, sampler__T=0.2),
    "chaos": _merge(COMMON, {
        "chaos.transform": Param(("none", "semicircle"), "none"),
        "chaos.n_starts": Param(int, 20, _at_least(3), ">= 3"),
        "chaos.n_traj": Param(int, 500, _at_least(2), ">= 2"),
        "chaos.n_cov": Param(int, 100, _at_least(5), ">= 5"),
        "chaos.dt_cov": Param(float, 1e-4, **POS),
        "chaos.eps_k": Param(int, 10, _at_least(1), ">= 1"),
        "chaos.eps_scale": Param(float, "auto", _pos, "> 0 or auto", allow_auto=True),
        "chaos.y_start": Param(("shared", "stationary"), "shared"),
        "chaos.smoothing": Param(float, "bandwidth", _pos, "> 0, bandwidth or gcv",
                                 allow_auto=True),
        "chaos.central": Param(float, 0.8, lambda v: 0 < v <= 1, "in (0, 1]"),
        "chaos.A": Param(float, 1.0, **POS),
        "chaos.dt_sim": Param(float, 1e-3, **POS),
        "chaos.Dt_burst": Param(float, "auto", _pos, "> 0 or auto", allow_auto=True),
    }),
    "baseline": _merge(COMMON, SAMPLER, CYL, {
        "objective": Param(("quad1d", "linear2d", "bayes_ridge", "cylinder_well"), "bayes_ridge"),
        "baseline.budget": Param(int, 100_000, _at_least(0), ">= 0"),
        "baseline.x0": Param(str, "auto"),
    }, sampler__T=0.02, sampler__dt=0.005),
}

SCHEMAS["chaos-additive"] = SCHEMAS["chaos-multiplicative"] = SCHEMAS.pop("chaos")

# words accepted in place of a number for keys with allow_auto
_WORDS = {"chaos.smoothing": ("bandwidth", "gcv")}


def _parse(key: str, p: Param, raw):
    if isinstance(raw, str):
        text = raw.strip()
        words = _WORDS.get(key, ("auto",))
        if p.allow_auto and text.lower() in words:
            return text.lower()
        if isinstance(p.kind, tuple):
            if text not in p.kind:
                raise ConfigError(f"{key}: {text!r} is not one of {', '.join(p.kind)}")
            return text
        try:
            if p.kind is bool:
                if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(text)
                return text.lower() in ("true", "1", "yes")
            if p.kind is int:
                return int(text)
            if p.kind is float:
                return float(text)
            return text
        except ValueError:
            raise ConfigError(f"{key}: cannot read {text!r} as {p.kind.__name__}") from None
    if isinstance(p.kind, tuple):
        raise ConfigError(f"{key}: expected one of {', '.join(p.kind)}, got {raw!r}")
    if p.kind is int and not (isinstance(raw, int) and not isinstance(raw, bool)):
        raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    if p.kind is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
        return float(raw)
    return raw


def _validate(key: str, p: Param, value):
    if isinstance(value, str) and p.allow_auto and value in _WORDS.get(key, ("auto",)):
        return
    if p.kind is float and not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite, got {value!r}")
    if p.check is not None and not p.check(value):
        raise ConfigError(f"{key}: {value!r} out of range (must be {p.rule})")


def read_ini(path) -> dict:
    """Flat ``{key: raw string}`` from an INI file; ``[run]`` holds undotted keys."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    out = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out[k if sec == "run" else f"{sec}.{k}"] = v
    return out


def parse_set(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(experiment: str, file_values: dict | None = None, overrides: dict | None = None,
            flags: dict | None = None) -> dict:
    """Materialize every key of ``experiment``'s schema."""
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    schema = SCHEMAS[experiment]
    cfg = {k: p.default for k, p in schema.items()}
    for layer in (file_values, overrides, flags):
        for k, raw in (layer or {}).items():
            if k not in schema:
                raise ConfigError(f"{k}: unknown key for experiment {experiment!r}")
            cfg[k] = _parse(k, schema[k], raw)
    for k, v in cfg.items():
        _validate(k, schema[k], v)
    return cfg


def parse_config(experiment: str, path=None, sets=None, flags=None) -> dict:
    """Defaults < ``path`` (INI) < ``sets`` (``key=value`` strings) < ``flags``."""
    return resolve(experiment, read_ini(path) if path else None, parse_set(sets), flags)
