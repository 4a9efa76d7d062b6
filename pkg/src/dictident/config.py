"""Key-value experiment configuration.

A config file holds one ``key = value`` pair per line; blank lines and lines
starting with ``#`` are ignored. Recognised keys::

    dictionary.kind      orthonormal | onb_pair | spherical | file
    dictionary.m         signal dimension
    dictionary.p         number of atoms (spherical only)
    dictionary.basis     dct | hadamard (onb_pair only, default dct)
    dictionary.path      .npy or text file (file only)
    dictionary.seed      seed of the spherical draw (default 0)
    model.k, model.dist, model.alpha_min, model.alpha_max, model.profile,
    model.noise, model.sigma, model.noise_bound      (see model_from_config)
    lambda | lambda_bar  penalty, absolute or relative to E|alpha|
    radii                comma separated radii
    n                    number of inlier signals
    n_dirs               sphere directions per radius (default 20)
    repeats              independent signal batches (default 1)
    seed                 base seed (overridden by --seed)
    x                    confidence parameter (default 3)
    outliers.count       number of outlier columns, or auto (default 0)
    outliers.style       sphere | atom | adversarial (default sphere)
    outliers.ratios      multiples of the naive threshold to sweep (default 0.5, 1, 2)
    outliers.threshold   limit | finite (default limit)
    localmin.r_init      initial radius (default 0.05)
    localmin.max_iter    iteration cap (default 500)
    localmin.tol         step-size stopping tolerance (default 1e-8)
    samplen.n_grid       comma separated signal counts
    solver.max_sweeps    coordinate descent cap (default 100000)
    failure_fraction     tolerated fraction of non-converged cells (default 0)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dictionary import load_dictionary, onb_pair, orthonormal, spherical
from .errors import ConfigError, InvalidDictionaryError
from .model import CoefficientModel, model_from_config

KNOWN_PREFIXES = ("dictionary.", "model.", "outliers.", "localmin.", "samplen.", "solver.")
KNOWN_KEYS = {"lambda", "lambda_bar", "radii", "n", "n_dirs", "repeats", "seed", "x", "failure_fraction"}


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key not in KNOWN_KEYS and not key.startswith(KNOWN_PREFIXES):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _list(text, cast=float):
    try:
        vals = tuple(cast(v) for v in str(text).replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not vals:
        raise ConfigError("empty list")
    return vals


def _count(text):
    return -1 if str(text).strip().lower() == "auto" else int(text)


@dataclass(frozen=True)
class ExperimentConfig:
    D0: np.ndarray = field(repr=False)
    model: CoefficientModel
    lam: float
    radii: tuple
    n: int
    n_dirs: int = 20
    repeats: int = 1
    seed: int = 0
    x: float = 3.0
    outlier_count: int = 0  # -1: sized automatically from the energy
    outlier_style: str = "sphere"
    outlier_ratios: tuple = (0.5, 1.0, 2.0)
    outlier_threshold: str = "limit"
    r_init: float = 0.05
    max_iter: int = 500
    step_tol: float = 1e-8
    n_grid: tuple = ()
    max_sweeps: int = 100000
    failure_fraction: float = 0.0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def lam_bar(self) -> float:
        return self.model.lam_bar(self.lam)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def build_dictionary(cfg: dict) -> np.ndarray:
    kind = cfg.get("dictionary.kind", "orthonormal").strip().lower()
    try:
        if kind == "file":
            return load_dictionary(cfg["dictionary.path"])
        m = int(cfg["dictionary.m"])
        if kind == "orthonormal":
            return orthonormal(m)
        if kind == "onb_pair":
            return onb_pair(m, cfg.get("dictionary.basis", "dct").strip().lower())
        if kind == "spherical":
            return spherical(m, int(cfg["dictionary.p"]), int(cfg.get("dictionary.seed", 0)))
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc.args[0]}") from None
    except (InvalidDictionaryError, ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown dictionary.kind {kind!r}")


def config_from_mapping(cfg: dict, seed: Optional[int] = None) -> ExperimentConfig:
    """Validate a parsed mapping and build an :class:`ExperimentConfig`."""
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = str(seed)
    D0 = build_dictionary(cfg)
    model = model_from_config(cfg, D0.shape[1])
    try:
        if "lambda" in cfg:
            lam = float(cfg["lambda"])
        elif "lambda_bar" in cfg:
            lam = model.lam_from_bar(float(cfg["lambda_bar"]))
        else:
            raise ConfigError("one of 'lambda' or 'lambda_bar' is required")
        conf = ExperimentConfig(
            D0=D0,
            model=model,
            lam=lam,
            radii=_list(cfg.get("radii", "0.05")),
            n=int(cfg.get("n", 1000)),
            n_dirs=int(cfg.get("n_dirs", 20)),
            repeats=int(cfg.get("repeats", 1)),
            seed=int(cfg.get("seed", 0)),
            x=float(cfg.get("x", 3.0)),
            outlier_count=_count(cfg.get("outliers.count", "0")),
            outlier_style=cfg.get("outliers.style", "sphere").strip().lower(),
            outlier_ratios=_list(cfg.get("outliers.ratios", "0.5, 1, 2")),
            outlier_threshold=cfg.get("outliers.threshold", "limit").strip().lower(),
            r_init=float(cfg.get("localmin.r_init", 0.05)),
            max_iter=int(cfg.get("localmin.max_iter", 500)),
            step_tol=float(cfg.get("localmin.tol", 1e-8)),
            n_grid=_list(cfg["samplen.n_grid"], int) if "samplen.n_grid" in cfg else (),
            max_sweeps=int(cfg.get("solver.max_sweeps", 100000)),
            failure_fraction=float(cfg.get("failure_fraction", 0.0)),
            raw=cfg,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if conf.lam <= 0:
        raise ConfigError("the penalty must be positive")
    if min(conf.n, conf.n_dirs, conf.repeats, conf.max_iter, conf.max_sweeps) < 1 or conf.outlier_count < -1:
        raise ConfigError("counts must be positive")
    if min(conf.radii) < 0:
        raise ConfigError("radii must be nonnegative")
    if conf.outlier_style not in ("sphere", "atom", "adversarial"):
        raise ConfigError(f"unknown outliers.style {conf.outlier_style!r}")
    if conf.outlier_threshold not in ("limit", "finite"):
        raise ConfigError(f"unknown outliers.threshold {conf.outlier_threshold!r}")
    if not 0 <= conf.seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    return conf


def load_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return config_from_mapping(parse_kv(text), seed)
