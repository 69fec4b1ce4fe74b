"""Run configuration: a flat INI schema with sections, parsed and validated up front.

Every key has a default, so an empty file is a valid configuration.  Unknown
sections or keys are rejected, and each message carries the line it refers
to.  :func:`render` writes the fully resolved configuration back out;
parsing that text again yields an equal :class:`RunConfig`.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
import hashlib
import math
import re

from .basis import SUPPORTED, Domain
from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class DomainSection:
    kind: str = "torus"
    d: int = 1
    N: int = 32


@dataclass(frozen=True)
class ModelSection:
    sigma: float = 1.0
    s: float = 1.5
    eps: float = 0.05
    xi: str = "identity"
    branch: str = "low"
    alpha: float = 0.1


@dataclass(frozen=True)
class NoiseSection:
    a0: float = 100.0
    exponent: float | None = None          # default sigma + d/2 + 1
    amplitudes: tuple[float, ...] | None = None
    circular: bool = False


@dataclass(frozen=True)
class TimeSection:
    scheme: str = "strang"
    dt: float = 0.01
    T: float = 10.0
    stride: int = 10
    burn_in: float = 0.2


@dataclass(frozen=True)
class InitialSection:
    kind: str = "zero"                     # zero | plane_wave | random
    mode: int = 1
    amplitude: float = 1.0
    decay: float = 3.0
    seed: int = 0


@dataclass(frozen=True)
class EnsembleSection:
    trajectories: int = 100
    seed: int = 0
    threads: int = 0                       # 0: FNLS_THREADS or machine parallelism
    format: str = "csv"                    # csv | fdns


@dataclass(frozen=True)
class SweepSection:
    Ns: tuple[int, ...] = (8, 16, 32, 64)
    alphas: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    factor: float = 10.0
    T_scale: float | None = 5.0            # horizon T_scale / alpha; unset: [time] T


@dataclass(frozen=True)
class InequalitiesSection:
    counting_sigmas: tuple[float, ...] = (0.5, 0.75, 1.0)
    counting_N2_max: int = 256
    counting_N1_max: int = 1024
    counting_bound: float = 4.0
    cordoba_N: int = 32
    cordoba_trials: int = 10_000
    cordoba_gammas: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    cordoba_refinement: int = 4
    radial_s: float = 1.0
    radial_Ns: tuple[int, ...] = (32, 64, 128)
    radial_trials: int = 1000
    lp_N: int = 256
    seed: int = 0


@dataclass(frozen=True)
class BasisInfoSection:
    p: float = 6.0


@dataclass(frozen=True)
class OutputSection:
    dir: str = "fnls-out"


SECTIONS = {
    "domain": DomainSection,
    "model": ModelSection,
    "noise": NoiseSection,
    "time": TimeSection,
    "initial": InitialSection,
    "ensemble": EnsembleSection,
    "sweep": SweepSection,
    "inequalities": InequalitiesSection,
    "basis_info": BasisInfoSection,
    "output": OutputSection,
}

# keys that do not influence any output value
_UNHASHED = {("output", "dir"), ("ensemble", "threads")}


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSection = field(default_factory=DomainSection)
    model: ModelSection = field(default_factory=ModelSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    time: TimeSection = field(default_factory=TimeSection)
    initial: InitialSection = field(default_factory=InitialSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    inequalities: InequalitiesSection = field(default_factory=InequalitiesSection)
    basis_info: BasisInfoSection = field(default_factory=BasisInfoSection)
    output: OutputSection = field(default_factory=OutputSection)

    def replace(self, section, **changes):
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    @property
    def config_hash(self):
        return config_hash(self)


# -- conversion -------------------------------------------------------------------------------

def _to_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _split(text):
    return [p for p in re.split(r"[,\s]+", text.strip()) if p]


_CONVERT = {
    "int": int,
    "float": float,
    "str": str.strip,
    "bool": _to_bool,
    "float | None": float,
    "tuple[int, ...]": lambda t: tuple(int(x) for x in _split(t)),
    "tuple[float, ...]": lambda t: tuple(float(x) for x in _split(t)),
    "tuple[float, ...] | None": lambda t: tuple(float(x) for x in _split(t)),
}

_NONE = ("", "none", "default")


def _convert(f, text):
    if "None" in f.type and text.strip().lower() in _NONE:
        return None
    return _CONVERT[f.type](text)


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_numbers(text):
    """(section, key) -> 1-based line number, plus section -> header line."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]*)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip()), i)
    return lines


def _where(lines, section, key=None):
    n = lines.get((section, key))
    return f"line {n}: " if n else ""


# -- parsing ----------------------------------------------------------------------------------

def parse_config(text):
    """Parse and validate config text; raises :class:`ParseError` or :class:`ValidationError`."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError(f"line {exc.lineno}: key outside of any [section]") from None
    except configparser.ParsingError as exc:
        raise ParseError([f"line {n}: cannot parse {line.strip()!r}" for n, line in exc.errors]) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None

    lines = _line_numbers(text)
    errors, built = [], {}
    for name in parser.sections():
        if name not in SECTIONS:
            errors.append(f"{_where(lines, name)}unknown section [{name}]; "
                          f"expected one of {', '.join(SECTIONS)}")
    for name, cls in SECTIONS.items():
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                where = _where(lines, name, key)
                if key not in fields:
                    errors.append(f"{where}unknown key {key!r} in [{name}]; "
                                  f"expected one of {', '.join(fields)}")
                    continue
                try:
                    values[key] = _convert(fields[key], raw)
                except ValueError:
                    errors.append(f"{where}[{name}] {key} = {raw!r} is not a valid {fields[key].type}")
        built[name] = cls(**values)
    if errors:
        raise ParseError(errors)
    cfg = RunConfig(**built)
    validate(cfg, lines)
    return cfg


def _problems(cfg, lines):
    w = lambda sec, key: _where(lines, sec, key)  # noqa: E731
    dom, mod, noi, tim, ini, ens = cfg.domain, cfg.model, cfg.noise, cfg.time, cfg.initial, cfg.ensemble
    out = []
    if dom.kind not in (d.value for d in Domain):
        out.append(f"{w('domain', 'kind')}domain kind must be torus or ball, got {dom.kind!r}")
    elif dom.d not in SUPPORTED[Domain(dom.kind)]:
        out.append(f"{w('domain', 'd')}{dom.kind} supports d in {SUPPORTED[Domain(dom.kind)]}, got d = {dom.d}")
    if dom.N < 1:
        out.append(f"{w('domain', 'N')}N must be at least 1, got {dom.N}")

    if not 0.0 < mod.sigma <= 1.0:
        out.append(f"{w('model', 'sigma')}sigma = {mod.sigma} violates σ ∈ (0,1]")
    if not 0.0 <= mod.alpha < 1.0:
        out.append(f"{w('model', 'alpha')}alpha = {mod.alpha} violates α ∈ [0,1)")
    if not mod.eps > 0.0:
        out.append(f"{w('model', 'eps')}eps = {mod.eps} violates ε > 0")
    if mod.xi not in ("identity", "log"):
        out.append(f"{w('model', 'xi')}xi must be identity or log, got {mod.xi!r}")
    if mod.branch == "low":
        if not 0.0 < mod.s <= 1.0 + mod.sigma:
            out.append(f"{w('model', 's')}s = {mod.s} violates the low-regularity dissipation "
                       f"constraint 0 < s ≤ 1 + σ = {1 + mod.sigma}")
    elif mod.branch == "high":
        if not mod.s > dom.d / 2:
            out.append(f"{w('model', 's')}s = {mod.s} violates the high-regularity dissipation "
                       f"constraint s > d/2 = {dom.d / 2}")
    else:
        out.append(f"{w('model', 'branch')}branch must be low or high, got {mod.branch!r}")
    if not mod.s - mod.eps > 0.0:
        out.append(f"{w('model', 'eps')}need s - ε > 0, got s = {mod.s}, ε = {mod.eps}")

    if noi.a0 < 0.0:
        out.append(f"{w('noise', 'a0')}a0 must be non-negative, got {noi.a0}")
    if noi.amplitudes is not None and dom.kind == "ball" and len(noi.amplitudes) != dom.N:
        out.append(f"{w('noise', 'amplitudes')}need N = {dom.N} amplitudes, got {len(noi.amplitudes)}")
    if noi.amplitudes is not None and dom.kind == "torus" and len(noi.amplitudes) != dom.N + 1:
        out.append(f"{w('noise', 'amplitudes')}need one amplitude per level |k| = 0..N, "
                   f"got {len(noi.amplitudes)}")

    if tim.scheme not in ("strang", "rk4"):
        out.append(f"{w('time', 'scheme')}scheme must be strang or rk4, got {tim.scheme!r}")
    if not (tim.dt > 0.0 and math.isfinite(tim.dt)):
        out.append(f"{w('time', 'dt')}dt must be positive, got {tim.dt}")
    if not tim.T >= 0.0:
        out.append(f"{w('time', 'T')}T must be non-negative, got {tim.T}")
    if tim.stride < 1:
        out.append(f"{w('time', 'stride')}stride must be at least 1, got {tim.stride}")
    if not 0.0 <= tim.burn_in < 1.0:
        out.append(f"{w('time', 'burn_in')}burn_in must lie in [0,1), got {tim.burn_in}")

    if ini.kind not in ("zero", "plane_wave", "random"):
        out.append(f"{w('initial', 'kind')}initial kind must be zero, plane_wave or random, got {ini.kind!r}")
    if ini.kind == "plane_wave":
        if dom.kind != "torus":
            out.append(f"{w('initial', 'kind')}plane_wave data needs the torus")
        elif abs(ini.mode) > dom.N:
            out.append(f"{w('initial', 'mode')}plane wave mode {ini.mode} exceeds the cutoff N = {dom.N}")

    if ens.trajectories < 1:
        out.append(f"{w('ensemble', 'trajectories')}trajectories must be at least 1, got {ens.trajectories}")
    if ens.seed < 0:
        out.append(f"{w('ensemble', 'seed')}seed must be non-negative, got {ens.seed}")
    if ens.threads < 0:
        out.append(f"{w('ensemble', 'threads')}threads must be non-negative, got {ens.threads}")
    if ens.format not in ("csv", "fdns"):
        out.append(f"{w('ensemble', 'format')}format must be csv or fdns, got {ens.format!r}")

    sw = cfg.sweep
    if not sw.Ns or min(sw.Ns) < 1:
        out.append(f"{w('sweep', 'Ns')}Ns must be positive integers")
    if not sw.alphas or not all(0.0 < a < 1.0 for a in sw.alphas):
        out.append(f"{w('sweep', 'alphas')}alphas must lie in (0,1)")
    if sw.T_scale is not None and not sw.T_scale > 0:
        out.append(f"{w('sweep', 'T_scale')}T_scale must be positive")

    iq = cfg.inequalities
    if not all(0.5 <= x <= 1.0 for x in iq.counting_sigmas):
        out.append(f"{w('inequalities', 'counting_sigmas')}counting sigmas must lie in [1/2, 1]")
    if not 1 <= iq.counting_N2_max <= iq.counting_N1_max:
        out.append(f"{w('inequalities', 'counting_N2_max')}need 1 ≤ N2_max ≤ N1_max")
    if not all(0.0 <= g <= 1.0 for g in iq.cordoba_gammas):
        out.append(f"{w('inequalities', 'cordoba_gammas')}gammas must lie in [0,1]")
    if iq.cordoba_trials < 1 or iq.radial_trials < 1:
        out.append(f"{w('inequalities', 'cordoba_trials')}trial counts must be at least 1")
    if iq.cordoba_refinement < 1:
        out.append(f"{w('inequalities', 'cordoba_refinement')}refinement must be at least 1")
    if not 0.5 < iq.radial_s < 1.5:
        out.append(f"{w('inequalities', 'radial_s')}radial_s = {iq.radial_s} violates 1/2 < s < d/2 = 3/2")
    if iq.lp_N < 9:
        out.append(f"{w('inequalities', 'lp_N')}lp_N must exceed 8")

    if not cfg.basis_info.p >= 1.0:
        out.append(f"{w('basis_info', 'p')}p must be at least 1")
    return out


def validate(cfg, lines=None):
    problems = _problems(cfg, lines or {})
    if problems:
        raise ValidationError(problems)
    return cfg


# -- rendering --------------------------------------------------------------------------------

def render(cfg, hashed_only=False):
    """Fully resolved config text; ``hashed_only`` drops keys that do not affect outputs."""
    parts = []
    for name in SECTIONS:
        sec = getattr(cfg, name)
        parts.append(f"[{name}]")
        for f in dataclasses.fields(sec):
            if hashed_only and (name, f.name) in _UNHASHED:
                continue
            parts.append(f"{f.name} = {_format(getattr(sec, f.name))}")
        parts.append("")
    return "\n".join(parts)


def config_hash(cfg):
    return hashlib.sha256(render(cfg, hashed_only=True).encode()).hexdigest()
