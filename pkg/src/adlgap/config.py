"""Flat key = value experiment configuration with a typed schema.

Example::

    # tilted quartic, two temperatures
    potential = tilted_quartic
    h = 0.2, 0.1
    pipelines = wkb, spectra
    Nx = 129

Lists are comma separated. Unknown keys, bad types and violated invariants raise
ConfigError naming the offending field (``h[1]``, ``pipelines`` ...). Every
default is filled in and echoed by `ExperimentConfig.to_text`.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .potential import PRESETS, preset, quartic

PIPELINES = ("wkb", "spectra", "hypo", "sde", "quasimode")


@dataclass
class ExperimentConfig:
    potential: str = "tilted_quartic"      # preset name, or "quartic" with a, b, c, e
    a: float | None = None
    b: float | None = None
    c: float | None = None
    e: float | None = None
    box_lo: float | None = None
    box_hi: float | None = None
    gamma: list = field(default_factory=lambda: [1.0])
    nu: list = field(default_factory=lambda: [1.0])
    h: list = field(default_factory=lambda: [0.2, 0.1])   # dimensionless, descending
    pipelines: list = field(default_factory=lambda: ["wkb", "spectra"])
    Nx: int = 129
    Nv: int = 16
    Ny: int = 16
    n_eigs: int = 6
    hypo_Nx: int = 49
    hypo_Nv: int = 8
    hypo_Ny: int = 8
    coercivity_trials: int = 1000
    quasimode_h: list = field(default_factory=list)       # empty: use h
    sde_dt: float = 0.01          # model time units
    sde_walkers: int = 100
    sde_transitions: int = 2000
    sde_T: float = 1e6            # horizon per walker, model time units
    sde_moment_T: float = 400.0
    sde_burn_in: float = 20.0
    seed: int = 0
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.potential == "quartic":
            for k in ("a", "b", "c", "e"):
                if getattr(self, k) is None:
                    raise ConfigError(f"{k}: required when potential = quartic")
        elif self.potential not in PRESETS:
            raise ConfigError(f"potential: unknown preset {self.potential!r}; "
                              f"known: {sorted(PRESETS)} or 'quartic'")
        if (self.box_lo is None) != (self.box_hi is None):
            raise ConfigError("box_lo: box_lo and box_hi must be given together")
        if self.box_lo is not None and not self.box_lo < self.box_hi:
            raise ConfigError("box_hi: must exceed box_lo")
        _check_hs("h", self.h)
        if self.quasimode_h:
            _check_hs("quasimode_h", self.quasimode_h)
        if len(self.gamma) != len(self.nu):
            raise ConfigError(f"nu: {len(self.nu)} values for {len(self.gamma)} gamma values")
        for name in ("gamma", "nu"):
            for i, x in enumerate(getattr(self, name)):
                if not x > 0:
                    raise ConfigError(f"{name}[{i}]: must be positive, got {x}")
        if not self.pipelines:
            raise ConfigError("pipelines: at least one pipeline must be selected")
        for i, p in enumerate(self.pipelines):
            if p not in PIPELINES:
                raise ConfigError(f"pipelines[{i}]: unknown pipeline {p!r}; known: {list(PIPELINES)}")
        if len(set(self.pipelines)) != len(self.pipelines):
            raise ConfigError("pipelines: duplicate entries")
        for k in ("Nx", "hypo_Nx"):
            if getattr(self, k) < 9 or getattr(self, k) % 2 == 0:
                raise ConfigError(f"{k}: must be odd and at least 9")
        for k in ("Nv", "Ny", "hypo_Nv", "hypo_Ny"):
            if getattr(self, k) < 4:
                raise ConfigError(f"{k}: must be at least 4")
        for k in ("n_eigs", "coercivity_trials", "sde_walkers", "sde_transitions", "workers"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k}: must be at least 1")
        for k in ("sde_dt", "sde_T", "sde_moment_T"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k}: must be positive")
        if not 0 <= self.sde_burn_in < self.sde_moment_T:
            raise ConfigError("sde_burn_in: must lie in [0, sde_moment_T)")
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")

    def make_potential(self):
        if self.potential == "quartic":
            box = (self.box_lo, self.box_hi) if self.box_lo is not None else (-3.0, 3.0)
            return quartic(self.a, self.b, self.c, self.e, box=box)
        V = preset(self.potential)
        if self.box_lo is not None:
            a, b, c, e = V.coeffs
            V = quartic(a, b, c, e, box=(self.box_lo, self.box_hi), name=self.potential)
        return V

    @property
    def params(self):
        return list(zip(self.gamma, self.nu))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if v is None:
                continue
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _check_hs(name, hs):
    if not hs:
        raise ConfigError(f"{name}: at least one value required")
    for i, x in enumerate(hs):
        if not x > 0:
            raise ConfigError(f"{name}[{i}]: must be positive, got {x}")
    for i in range(1, len(hs)):
        if not hs[i] < hs[i - 1]:
            raise ConfigError(f"{name}[{i}]: values must be strictly descending")


def _types():
    out = {}
    for f in fields(ExperimentConfig):
        t = str(f.type)
        if t.startswith("list"):
            out[f.name] = "str_list" if f.name == "pipelines" else "float_list"
        elif "float" in t:
            out[f.name] = "float"
        elif "int" in t:
            out[f.name] = "int"
        else:
            out[f.name] = "str"
    return out


TYPES = _types()


def _convert(key, raw, kind):
    raw = raw.strip()
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "float_list":
            return [float(x) for x in raw.split(",") if x.strip()]
        if kind == "str_list":
            return [x.strip() for x in raw.split(",") if x.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.replace('_', ' ')}") from None


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None
    if len(cp.sections()) != 1:
        raise ConfigError("syntax: sections are not allowed; use flat key = value lines")
    kw = {}
    for key, raw in cp["config"].items():
        if key not in TYPES:
            raise ConfigError(f"{key}: unknown key")
        kw[key] = _convert(key, raw, TYPES[key])
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**kw)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides)
