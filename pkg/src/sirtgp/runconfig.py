"""INI run configuration: typed sections, strict key checking and a resolved echo."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import InvalidInputError
from .grid import METHODS, GridSettings, default_workers
from .kernel import DEFAULT_ALPHA
from .rtgp import RtgpConfig
from .sim import SimConfig


@dataclass(frozen=True)
class KernelSettings:
    alpha: float = DEFAULT_ALPHA
    variance_threshold: float = 0.99
    rho: float | None = None  # None means estimate from the calibration session


@dataclass(frozen=True)
class SimulateSettings:
    replicate: int = 0


@dataclass(frozen=True)
class EvaluateSettings:
    support_rule: str = "median-model"
    pair_threshold: float = 75.0


@dataclass(frozen=True)
class GridSection:
    alphas: tuple = (2.5,)
    tau2s: tuple = (9.0,)
    sigma2s: tuple = (20.0,)
    layout: str = "sweep"
    replicates: int = 1
    methods: tuple = tuple(METHODS)
    workers: int = 0  # 0 means the environment default
    seed: int = 0


SECTIONS = {
    "sim": SimConfig,
    "sampler": RtgpConfig,
    "kernel": KernelSettings,
    "simulate": SimulateSettings,
    "evaluate": EvaluateSettings,
    "grid": GridSection,
}

# keys every config for a given command has to spell out
REQUIRED = {
    "simulate": {"sim": ("alpha", "tau2", "sigma2", "seed")},
    "grid": {"grid": ("replicates", "methods")},
}

# cell grids larger than this are marked as long-running in the manifest
LONG_RUNNING_CHAINS = 100


def _parse_matrix(text: str) -> tuple:
    rows = [r for r in text.replace("\n", ";").split(";") if r.strip()]
    return tuple(tuple(float(v) for v in r.split(",")) for r in rows)


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(", ".join(repr(float(v)) for v in row) for row in value)
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return str(value)


def _parse_value(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or (default is None and name == "rho"):
            if default is None and raw.lower() in ("auto", ""):
                return None
            return float(raw)
        if isinstance(default, tuple) and default and isinstance(default[0], tuple):
            return _parse_matrix(raw)
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                return tuple(float(v) for v in items)
            return tuple(items)
        return raw
    except ValueError as exc:
        raise InvalidInputError(f"bad value for {name!r}: {raw!r}") from exc


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        else:
            out[f.name] = f.default_factory()
    return out


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)  # name -> dataclass instance

    def get(self, name: str):
        return self.sections[name]

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser, command: str | None = None) -> "RunConfig":
        unknown_sections = [s for s in parser.sections() if s not in SECTIONS]
        if unknown_sections:
            raise InvalidInputError(f"unknown config sections: {unknown_sections}")
        for section, keys in REQUIRED.get(command, {}).items():
            for key in keys:
                if not parser.has_option(section, key):
                    raise InvalidInputError(f"missing required key {section}.{key}")
        sections = {}
        for name, klass in SECTIONS.items():
            defaults = _defaults(klass)
            values = {}
            if parser.has_section(name):
                for key, raw in parser.items(name):
                    if key not in defaults:
                        raise InvalidInputError(f"unknown key {name}.{key}")
                    values[key] = _parse_value(raw, defaults[key], key)
            try:
                sections[name] = klass(**values)
            except TypeError as exc:
                raise InvalidInputError(f"section [{name}]: {exc}") from exc
        cfg = cls(sections)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, command: str | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str  # keep key case (Sigma1, K, T)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise InvalidInputError(f"unreadable config: {exc}") from exc
        return cls.from_parser(parser, command)

    @classmethod
    def load(cls, path, command: str | None = None) -> "RunConfig":
        if path is None:
            return cls.from_text("", command)
        return cls.from_text(Path(path).read_text(), command)

    def validate(self) -> None:
        self.sections["sim"].validate()
        ev = self.sections["evaluate"]
        if ev.support_rule not in ("median-model", "mean-beta"):
            raise InvalidInputError(f"unknown support rule {ev.support_rule!r}")
        g = self.sections["grid"]
        bad = [m for m in g.methods if m not in METHODS]
        if bad:
            raise InvalidInputError(f"unknown methods {bad}")
        if g.layout not in ("sweep", "factorial"):
            raise InvalidInputError(f"unknown grid layout {g.layout!r}")
        if g.replicates < 1:
            raise InvalidInputError("grid needs at least one replicate")
        k = self.sections["kernel"]
        if not 0 < k.variance_threshold <= 1:
            raise InvalidInputError("kernel variance_threshold must be in (0, 1]")

    def with_seed(self, seed: int | None) -> "RunConfig":
        """Override every seed with the command-line value."""
        if seed is None:
            return self
        s = dict(self.sections)
        s["sim"] = dataclasses.replace(s["sim"], seed=seed)
        s["sampler"] = dataclasses.replace(s["sampler"], seed=seed)
        s["grid"] = dataclasses.replace(s["grid"], seed=seed)
        return RunConfig(s)

    def to_text(self) -> str:
        """Fully resolved INI text; loading it reproduces this configuration."""
        lines = []
        for name, obj in self.sections.items():
            lines.append(f"[{name}]")
            for f in fields(obj):
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def grid_settings(self) -> GridSettings:
        k = self.sections["kernel"]
        return GridSettings(
            rtgp=self.sections["sampler"],
            variance_threshold=k.variance_threshold,
            kernel_alpha=k.alpha,
            support_rule=self.sections["evaluate"].support_rule,
            seed=self.sections["grid"].seed,
        )

    def workers(self) -> int:
        w = self.sections["grid"].workers
        return w if w > 0 else default_workers()
