"""Run configuration: a flat UTF-8 key=value file with bracketed section headers.

Example::

    [frontend]
    num_channels = 20
    linear_mel_boundary_hz = 250

    [loss]
    energy_weight = 1.0
    C0 = style 1e5
    C6 = content 0.2

    [synthesis]
    stage1_iters = 500

    [run]
    seed = 3

Every key is validated when the file is parsed; unknown sections or keys are
errors.  A ``[loss]`` section replaces the default voice-conversion weights
entirely.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .frontend import DEFAULT, FrontendConfig
from .losses import CONTENT, STYLE, LossSpec, LossTerm
from .synth import INITS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisSettings:
    stage1_iters: int = 1000
    stage2_iters: int = 1000
    griffin_lim_iters: int = 100
    history: int = 10
    init: str = "noise"

    def __post_init__(self):
        for name in ("stage1_iters", "stage2_iters", "griffin_lim_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"synthesis.{name} must be >= 0")
        if self.history < 1:
            raise ConfigError("synthesis.history must be >= 1")
        if self.init not in INITS:
            raise ConfigError(f"synthesis.init must be one of {INITS}, got {self.init!r}")


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendConfig = DEFAULT
    weights: str | None = None
    loss: LossSpec | None = None  # None: defaults for the task
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    seed: int = 0
    precision: str = "high"
    output: str | None = None
    trace: str | None = None

    def __post_init__(self):
        if self.precision not in ("high", "single"):
            raise ConfigError(f"run.precision must be 'high' or 'single', got {self.precision!r}")
        if self.seed < 0:
            raise ConfigError("run.seed must be >= 0")


_RUN_KEYS = {"seed": int, "precision": str, "output": str, "trace": str}


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            return {"true": True, "false": False}[raw.lower()]
        return kind(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _typed_section(parser, section: str, cls, allowed=None) -> dict:
    types = {f.name: f.type for f in fields(cls)} if allowed is None else allowed
    kinds = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    for key, raw in parser.items(section):
        if key not in types:
            raise ConfigError(f"unknown key {section}.{key}")
        kind = types[key]
        if isinstance(kind, str):
            kind = kinds.get(kind.split(" ")[0], str)
        out[key] = _convert(section, key, raw, kind)
    return out


def _parse_loss(parser) -> LossSpec:
    terms = []
    energy = 0.0
    for key, raw in parser.items("loss"):
        if key == "energy_weight":
            energy = _convert("loss", key, raw, float)
            continue
        parts = raw.split()
        if len(parts) != 2 or parts[0] not in (STYLE, CONTENT):
            raise ConfigError(f"loss.{key}: expected '<style|content> <weight>', got {raw!r}")
        terms.append(LossTerm(key, parts[0], _convert("loss", key, parts[1], float)))
    try:
        return LossSpec(tuple(terms), energy)
    except ValueError as e:
        raise ConfigError(f"loss: {e}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str  # layer names are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    known = {"frontend", "network", "loss", "synthesis", "run"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    cfg = RunConfig()
    try:
        if parser.has_section("frontend"):
            cfg = replace(cfg, frontend=replace(DEFAULT, **_typed_section(parser, "frontend", FrontendConfig)))
        if parser.has_section("network"):
            cfg = replace(cfg, **_typed_section(parser, "network", None, {"weights": str}))
        if parser.has_section("loss"):
            cfg = replace(cfg, loss=_parse_loss(parser))
        if parser.has_section("synthesis"):
            cfg = replace(cfg, synthesis=SynthesisSettings(**_typed_section(parser, "synthesis", SynthesisSettings)))
        if parser.has_section("run"):
            cfg = replace(cfg, **_typed_section(parser, "run", None, _RUN_KEYS))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config`; keys equal to their defaults are still written."""
    lines = ["[frontend]"]
    lines += [f"{k} = {v}" for k, v in cfg.frontend.to_dict().items()]
    if cfg.weights is not None:
        lines += ["", "[network]", f"weights = {cfg.weights}"]
    if cfg.loss is not None:
        lines += ["", "[loss]", f"energy_weight = {cfg.loss.energy_weight!r}"]
        lines += [f"{t.layer} = {t.role} {t.weight!r}" for t in cfg.loss.terms]
    lines += ["", "[synthesis]"]
    lines += [f"{f.name} = {getattr(cfg.synthesis, f.name)}" for f in fields(SynthesisSettings)]
    lines += ["", "[run]", f"seed = {cfg.seed}", f"precision = {cfg.precision}"]
    lines += [f"{k} = {getattr(cfg, k)}" for k in ("output", "trace") if getattr(cfg, k) is not None]
    return "\n".join(lines) + "\n"
