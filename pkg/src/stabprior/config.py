"""Experiment configuration read from INI-style files.

Sections and keys (all optional except ``[experiment] schema_version``)::

    [experiment]  schema_version, name
    [data]        kind (digits|mnist|moons|csv), path, test_path, n_train, n_test,
                  noise, normalise
    [model]       width, depth (hidden layers), init_var, estimator (rt|lrt),
                  likelihood (categorical|gaussian), sigma_obs, predict_from (qtilde|q)
    [prior]       strategy (fixed|eb|stabilising|combined), prior_mu, prior_var,
                  fan_in_scaled, lambda
    [optim]       optimizer (adam|sgd), lr, beta1, beta2, eps
    [run]         epochs, batch_size, seeds, probe_every, eval_samples, out
    [grid]        depths, variances, strategies
    [probe]       controlled, probe_samples
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable configuration; the message names the offending field."""


@dataclass(frozen=True)
class DataConfig:
    kind: str = "digits"
    path: str = ""
    test_path: str = ""
    n_train: int = 1297
    n_test: int = 500
    noise: float = 0.1
    normalise: bool = True


@dataclass(frozen=True)
class ModelConfig:
    width: int = 128
    depth: int = 2
    init_var: float = 1.0
    estimator: str = "lrt"
    likelihood: str = "categorical"
    sigma_obs: float = 0.1
    predict_from: str = "qtilde"


@dataclass(frozen=True)
class PriorConfig:
    strategy: str = "stabilising"
    prior_mu: float = 0.0
    prior_var: float = 1.0
    fan_in_scaled: bool = True
    lam: float = 0.5


@dataclass(frozen=True)
class OptimConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 5
    batch_size: int = 128
    seeds: tuple = (0,)
    probe_every: int = 50
    eval_samples: int = 1
    out: str = "runs"


@dataclass(frozen=True)
class GridConfig:
    depths: tuple = (2, 5, 10, 20, 35, 50)
    variances: tuple = (1e-3, 1e-2, 1e-1, 0.5, 1.0, 2.0, 4.0)
    strategies: tuple = ("fixed", "stabilising")


@dataclass(frozen=True)
class ProbeConfig:
    controlled: bool = False
    probe_samples: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    run: RunConfig = field(default_factory=RunConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        validate(self)

    @property
    def prior_var(self) -> float:
        return self.prior.prior_var

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, section: str | None = None, **changes) -> "ExperimentConfig":
        if section is None:
            return replace(self, **changes)
        return replace(self, **{section: replace(getattr(self, section), **changes)})


_CHOICES = {
    ("data", "kind"): ("digits", "mnist", "moons", "csv"),
    ("model", "estimator"): ("rt", "lrt"),
    ("model", "likelihood"): ("categorical", "gaussian"),
    ("model", "predict_from"): ("qtilde", "q"),
    ("prior", "strategy"): ("fixed", "eb", "stabilising", "combined"),
    ("optim", "optimizer"): ("adam", "sgd"),
}


def _fail(section, key, msg):
    raise ConfigError(f"[{section}] {key}: {msg}")


def validate(cfg: ExperimentConfig) -> None:
    for (section, key), allowed in _CHOICES.items():
        v = getattr(getattr(cfg, section), key)
        if v not in allowed:
            _fail(section, key, f"{v!r} is not one of {', '.join(allowed)}")
    m, r, o, p, g = cfg.model, cfg.run, cfg.optim, cfg.prior, cfg.grid
    checks = [
        ("model", "depth", m.depth >= 1, "must be at least 1"),
        ("model", "width", m.width >= 1, "must be at least 1"),
        ("model", "init_var", m.init_var > 0.0, "must be positive"),
        ("model", "sigma_obs", m.sigma_obs > 0.0, "must be positive"),
        ("prior", "prior_var", p.prior_var > 0.0, "must be positive"),
        ("prior", "lambda", 0.0 <= p.lam <= 1.0, "must lie in [0, 1]"),
        ("optim", "lr", o.lr >= 0.0, "must be non-negative"),
        ("optim", "beta1", 0.0 <= o.beta1 < 1.0, "must lie in [0, 1)"),
        ("optim", "beta2", 0.0 <= o.beta2 < 1.0, "must lie in [0, 1)"),
        ("optim", "eps", o.eps > 0.0, "must be positive"),
        ("run", "epochs", r.epochs >= 0, "must be non-negative"),
        ("run", "batch_size", r.batch_size >= 1, "must be at least 1"),
        ("run", "seeds", len(r.seeds) > 0, "must list at least one seed"),
        ("run", "probe_every", r.probe_every >= 0, "must be non-negative"),
        ("run", "eval_samples", r.eval_samples >= 1, "must be at least 1"),
        ("grid", "depths", len(g.depths) > 0 and all(d >= 1 for d in g.depths), "must be a nonempty list of depths >= 1"),
        ("grid", "variances", len(g.variances) > 0 and all(v > 0 for v in g.variances), "must be a nonempty list of positive variances"),
        ("grid", "strategies", len(g.strategies) > 0 and all(s in _CHOICES["prior", "strategy"] for s in g.strategies), "unknown or empty strategy list"),
        ("data", "n_train", cfg.data.n_train >= 1, "must be at least 1"),
        ("data", "n_test", cfg.data.n_test >= 1, "must be at least 1"),
        ("probe", "probe_samples", cfg.probe.probe_samples >= 1, "must be at least 1"),
    ]
    for section, key, ok, msg in checks:
        if not ok:
            _fail(section, key, msg)
    if cfg.data.kind == "moons" and cfg.data.n_train % 2:
        _fail("data", "n_train", "two moons needs an even count")
    if cfg.data.kind in ("mnist", "csv") and not cfg.data.path:
        _fail("data", "path", f"required for kind {cfg.data.kind}")


def _list(text: str, conv):
    return tuple(conv(x.strip()) for x in text.replace(",", " ").split())


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            conv = str if default and isinstance(default[0], str) else (int if key in ("seeds", "depths") else float)
            return _list(raw, conv)
        return raw.strip()
    except ValueError:
        _fail(section, key, f"cannot parse {raw!r}")


_SECTIONS = {
    "data": DataConfig, "model": ModelConfig, "prior": PriorConfig, "optim": OptimConfig,
    "run": RunConfig, "grid": GridConfig, "probe": ProbeConfig,
}
_ALIASES = {("prior", "lambda"): "lam"}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not cp.has_option("experiment", "schema_version"):
        raise ConfigError(f"{source}: [experiment] schema_version: missing")
    try:
        version = int(cp.get("experiment", "schema_version"))
    except ValueError:
        raise ConfigError(f"{source}: [experiment] schema_version: not an integer") from None
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{source}: [experiment] schema_version: expected {SCHEMA_VERSION}, found {version}")
    for section in cp.sections():
        if section != "experiment" and section not in _SECTIONS:
            raise ConfigError(f"{source}: [{section}]: unknown section")
    for key in cp["experiment"]:
        if key not in ("schema_version", "name"):
            raise ConfigError(f"{source}: [experiment] {key}: unknown key")
    parts = {}
    for section, cls in _SECTIONS.items():
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs = {}
        if cp.has_section(section):
            for key, raw in cp[section].items():
                attr = _ALIASES.get((section, key), key)
                if attr not in known:
                    raise ConfigError(f"{source}: [{section}] {key}: unknown key")
                try:
                    kwargs[attr] = _convert(section, key, raw, getattr(defaults, attr))
                except ConfigError as exc:
                    raise ConfigError(f"{source}: {exc}") from None
        parts[section] = cls(**kwargs)
    try:
        return ExperimentConfig(name=cp.get("experiment", "name", fallback="experiment"), **parts)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parsing it back yields an equal config."""
    lines = ["[experiment]", f"schema_version = {SCHEMA_VERSION}", f"name = {cfg.name}", ""]
    inverse = {v: k for (s, k), v in _ALIASES.items()}
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(getattr(cfg, section)):
            v = getattr(getattr(cfg, section), f.name)
            lines.append(f"{inverse.get(f.name, f.name)} = {_render(v)}")
        lines.append("")
    return "\n".join(lines)
