"""Experiment configuration: an INI file read with :mod:`configparser`.

Only ``WIOC_SEED`` (replaces the seed list with one seed) and ``WIOC_OUT``
(replaces the output directory) are read from the environment.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

from ..envs import KINDS, TRAIN_PROPORTIONS, EnvSpec
from ..errors import ConfigError
from ..w_ioc import DISTANCES, TransportOptions

METHODS = ("kl", "w", "maxent", "bc", "policy_direct", "joint")
FAMILIES = ("quadratic", "linear_features", "mlp")


@dataclass
class EnvConfig:
    kind: str = "gaussian_walk"
    K: int = 2
    n: int = 256
    horizon: float = 50.0
    mu0: float = 1.0
    alpha: float = 0.5
    beta: float = 1.0
    n_users: int = 20
    n_items: int = 30
    n_baseline: int = 200
    n_events: int = 40
    popularity: float = 1.0
    theta_scale: float = 1.0
    cost: str = "quadratic"

    def spec(self, seed: int) -> EnvSpec:
        return EnvSpec(self.kind, self.K, self.n, seed, self.horizon, self.mu0, self.alpha, self.beta)


@dataclass
class TruthConfig:
    family: str = "quadratic"
    theta: Tuple[float, ...] = (3.0, -1.0)
    demo_mode: str = "w"
    n_demos: int = 0  # kl mode only; 0 means one per baseline trajectory
    feature_map: str = "identity"


@dataclass
class ModelConfig:
    family: str = "quadratic"
    theta0: Optional[Tuple[float, ...]] = None
    feature_map: str = "identity"
    hidden: Tuple[int, ...] = (16, 16)


@dataclass
class FitConfig:
    iterations: int = 2000
    n_critic: int = 5
    lr_critic: float = 5e-5
    lr_theta: float = 1e-3
    batch_size: int = 128
    refresh_every: int = 10
    clip_bound: float = 0.01
    epochs: int = 200
    lr_kl: float = 1e-3
    bc_steps: int = 2000
    lr_bc: float = 1e-3
    lr_generator: float = 1e-3
    noise_dim: int = 2


@dataclass
class ExperimentConfig:
    method: str = "w"
    gamma: float = 1.0
    lam: float = 0.0
    p: Tuple[float, ...] = (0.8,)
    seeds: Tuple[int, ...] = (0,)
    out: str = "runs/default"
    workers: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    transport: TransportOptions = field(default_factory=TransportOptions)

    @property
    def task(self) -> str:
        return "recommender" if self.env.kind == "recommender" else "recovery"

    def echo(self) -> dict:
        """Resolved settings for the report; the output directory is left out so reports can be compared."""
        d = asdict(self)
        d.pop("out")
        d["transport"].pop("workers")
        d.pop("workers")
        return d

    def with_method(self, method: str) -> "ExperimentConfig":
        cfg = replace(self, method=method)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative")
        if not self.p or any(p not in TRAIN_PROPORTIONS for p in self.p):
            raise ConfigError(f"every p must be one of {TRAIN_PROPORTIONS}, got {self.p}")
        if self.env.kind not in KINDS:
            raise ConfigError(f"env kind must be one of {KINDS}")
        if self.truth.family not in FAMILIES or self.model.family not in FAMILIES:
            raise ConfigError(f"cost family must be one of {FAMILIES}")
        if self.truth.demo_mode not in ("w", "kl"):
            raise ConfigError("truth demo_mode must be 'w' or 'kl'")
        if self.env.kind == "recommender" and self.env.cost not in ("quadratic", "linear"):
            raise ConfigError("recommender cost must be 'quadratic' or 'linear'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.env.kind != "recommender":
            self.env.spec(0)  # range checks for the sampler parameters


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


_SECTIONS = {
    "experiment": {"method": str, "gamma": float, "lambda": float, "p": _floats, "seeds": _ints,
                   "out": str, "workers": int},
    "env": {"kind": str, "K": int, "n": int, "horizon": float, "mu0": float, "alpha": float,
            "beta": float, "n_users": int, "n_items": int, "n_baseline": int, "n_events": int,
            "popularity": float, "theta_scale": float, "cost": str},
    "truth": {"family": str, "theta": _floats, "demo_mode": str, "n_demos": int, "feature_map": str},
    "model": {"family": str, "theta0": _floats, "feature_map": str, "hidden": _ints},
    "fit": {k: type(v) for k, v in asdict(FitConfig()).items()},
    "transport": {"distance": str, "eps": float, "tol": float, "max_iter": int, "block": int},
}


def _parse_section(parser, name):
    if not parser.has_section(name):
        return {}
    known = _SECTIONS[name]
    out = {}
    for key, raw in parser.items(name):
        match = [k for k in known if k.lower() == key]
        if not match:
            raise ConfigError(f"[{name}] unknown key {key!r}; allowed: {sorted(known)}")
        conv = known[match[0]]
        try:
            out[match[0]] = conv(raw.strip())
        except ValueError:
            raise ConfigError(f"[{name}] {key} = {raw!r} is not a valid {getattr(conv, '__name__', conv)}") from None
    return out


def parse_config(text: str, environ=None) -> ExperimentConfig:
    """Build a validated config from INI text; missing keys take their defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    extra = set(parser.sections()) - set(_SECTIONS)
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    exp = _parse_section(parser, "experiment")
    if "lambda" in exp:
        exp["lam"] = exp.pop("lambda")
    tr = _parse_section(parser, "transport")
    workers = exp.get("workers", 1)
    try:
        transport = TransportOptions(workers=workers, **tr)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[transport] {exc}") from None
    if transport.distance not in DISTANCES:
        raise ConfigError(f"[transport] distance must be one of {DISTANCES}")
    cfg = ExperimentConfig(
        env=EnvConfig(**_parse_section(parser, "env")),
        truth=TruthConfig(**_parse_section(parser, "truth")),
        model=ModelConfig(**_parse_section(parser, "model")),
        fit=FitConfig(**_parse_section(parser, "fit")),
        transport=transport,
        **exp,
    )
    environ = os.environ if environ is None else environ
    if environ.get("WIOC_SEED"):
        try:
            cfg.seeds = (int(environ["WIOC_SEED"]),)
        except ValueError:
            raise ConfigError(f"WIOC_SEED={environ['WIOC_SEED']!r} is not an integer") from None
    if environ.get("WIOC_OUT"):
        cfg.out = environ["WIOC_OUT"]
    cfg.validate()
    return cfg


def load_config(path, environ=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, environ)
