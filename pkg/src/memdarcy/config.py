"""TOML run configuration with typed sections and strict key checking."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class CellSection:
    hole: str = "disk"
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.25
    h: float = 0.05
    nu: float = 1.0
    alpha: float = 1.0
    dt: float = 1e-2
    T: float = 2.0


@dataclass
class NoiseSection:
    J: int = 8
    decay: float = 2.0
    scale: float = 1.0
    seed: int = 0
    g1_gain: float = 1.0
    g21_gain: float = 0.0
    g22_gain: float = 1.0
    enabled: bool = False


@dataclass
class MacroSection:
    n: int = 32
    dt: float = 1e-2
    T: float = 1.0
    forcing: str = "curl"  # curl | uniform | none
    amplitude: float = 1.0
    direction: tuple[float, float] = (1.0, 0.0)
    scheme: str = "semigroup"  # semigroup | trapezoid


@dataclass
class MicroSection:
    eps: tuple[float, ...] = (0.5, 0.25)
    beta: float = 2.0
    dt: float = 2e-2
    T: float = 1.0
    h_cell: float = 0.1
    fine: bool = False  # adds eps = 1/8


@dataclass
class OutputSection:
    directory: str = "out"
    snapshot_every: int = 10
    svg: bool = False


@dataclass
class RunConfig:
    cell: CellSection = field(default_factory=CellSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    macro: MacroSection = field(default_factory=MacroSection)
    micro: MicroSection = field(default_factory=MicroSection)
    output: OutputSection = field(default_factory=OutputSection)
    source: str = "<defaults>"


SECTIONS = {"cell": CellSection, "noise": NoiseSection, "macro": MacroSection, "micro": MicroSection, "output": OutputSection}


def _coerce(name: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name}: expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    return value


def _section(name: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    obj = cls()
    known = {f.name for f in fields(cls)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r} (allowed: {', '.join(sorted(known))})")
        setattr(obj, key, _coerce(f"[{name}].{key}", getattr(obj, key), value))
    return obj


def parse_config(text: str, required: tuple[str, ...] = ("cell",), source: str = "<string>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")
    missing = [s for s in required if s not in raw]
    if missing:
        raise ConfigError(f"{source}: missing required section(s) {', '.join('[' + m + ']' for m in missing)}")
    cfg = RunConfig(source=source)
    for name, cls in SECTIONS.items():
        if name in raw:
            setattr(cfg, name, _section(name, cls, raw[name]))
    validate_config(cfg)
    return cfg


def load_config(path: str | Path, required: tuple[str, ...] = ("cell",)) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    return parse_config(text, required, source=str(p))


def validate_config(cfg: RunConfig) -> None:
    c = cfg.cell
    if c.hole not in ("disk", "none"):
        raise ConfigError(f"[cell].hole must be 'disk' or 'none', got {c.hole!r}")
    for name in ("h", "nu", "dt", "T"):
        if getattr(c, name) <= 0:
            raise ConfigError(f"[cell].{name} must be positive")
    if len(c.center) != 2:
        raise ConfigError("[cell].center needs two coordinates")
    n = cfg.noise
    if n.J < 1:
        raise ConfigError("[noise].J must be at least 1")
    if not 0 <= n.seed < 2**64:
        raise ConfigError("[noise].seed must fit in 64 bits")
    m = cfg.macro
    if m.n < 2 or m.dt <= 0 or m.T <= 0:
        raise ConfigError("[macro] needs n >= 2 and positive dt, T")
    if m.forcing not in ("curl", "uniform", "none"):
        raise ConfigError(f"[macro].forcing must be curl, uniform or none, got {m.forcing!r}")
    if m.scheme not in ("semigroup", "trapezoid"):
        raise ConfigError(f"[macro].scheme must be semigroup or trapezoid, got {m.scheme!r}")
    mi = cfg.micro
    if not mi.beta > 1:
        raise ConfigError("[micro].beta must exceed 1")
    for e in mi.eps:
        k = round(1 / e) if e > 0 else 0
        if k < 1 or abs(k * e - 1) > 1e-12:
            raise ConfigError(f"[micro].eps entries must be 1/k, got {e}")
    if cfg.output.snapshot_every < 1:
        raise ConfigError("[output].snapshot_every must be positive")


def dump_config(cfg: RunConfig) -> str:
    """TOML text that parses back to ``cfg``."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, tuple):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        sec = getattr(cfg, name)
        out += [f"{f.name} = {fmt(getattr(sec, f.name))}" for f in fields(sec)]
        out.append("")
    return "\n".join(out)
