"""Experiment configuration: INI-style files with one section per concern.

Lists are comma separated. A ``[profile.paper]`` or ``[profile.desk]`` section
may override any ``section.key`` pair for that scale profile.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field

from .cohort import PopulationSpec
from .model import ModelBounds, NoiseSpec
from .policies import GlmBanditConfig, UcbBoldConfig

ALL_ALGORITHMS = ("UCB-BOLD", "GLM-Bandit", "LFA-Q", "TC-Q", "Fixed1", "Fixed2", "Random",
                  "Optimal")
ENV_PREFIX = "ENGAGE_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlanningConfig:
    grid_shrink: float = 1 / 3
    resolution: float = 0.1
    quad_nodes: int = 51
    vi_tol: float = 1e-6


@dataclass(frozen=True)
class QLearnerConfig:
    lfa_centers: int = 6
    lfa_alpha: float = 0.3
    tc_bin_width: float = 40.0
    tc_tilings: int = 64
    tc_alpha: float = 0.5
    eps_decay: float = 1.5
    init: float = 0.0
    grid_bound: float | None = None  # None: C_x * grid_shrink


@dataclass(frozen=True)
class AblationGrid:
    rho1: float = 1.0
    rho2: tuple = (0.5, 1.0, 1.5, 2.0)
    c_scale: tuple = (0.0, 1.0, 2.0, 3.0)
    gamma: tuple = (0.8,)
    beta: tuple = (0.0,)
    beta0: tuple = (0.0,)

    def cells(self, T: int) -> list[tuple]:
        return [(r2, cs, g, b, b0, T) for r2 in self.rho2 for cs in self.c_scale
                for g in self.gamma for b in self.beta for b0 in self.beta0]


@dataclass(frozen=True)
class SysidConfig:
    a: float = 0.5
    b: tuple = (-0.8, 0.6)
    c: tuple = (1.2, -0.5)
    mu: tuple = (-0.3, 0.4)
    r: float = 1.0
    k: int = 1
    reps: int = 50
    checkpoints: tuple = (256, 1024, 4096, 16384)
    lambda1: float = 1.0
    lambda2: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    seed: int
    T: int = 180
    patients: int = 20
    replications: int = 5
    baseline_reps: int = 25
    eval_cadence: int = 20
    report_every: int = 20
    algorithms: tuple = ALL_ALGORITHMS
    workers: int = 1
    out: str = "out"
    profile: str = "desk"
    cohort_file: str | None = None
    bounds: ModelBounds = ModelBounds(0.85, 3.75, 2.75, 2.5, 2.5, 3)
    noise: NoiseSpec = NoiseSpec(1.0, 2.5)
    grid: AblationGrid = AblationGrid()
    population: PopulationSpec = PopulationSpec()
    planning: PlanningConfig = PlanningConfig()
    ucb_bold: UcbBoldConfig = UcbBoldConfig()
    glm_bandit: GlmBanditConfig = GlmBanditConfig()
    qlearn: QLearnerConfig = QLearnerConfig()
    sysid: SysidConfig = SysidConfig()
    profiles: dict = field(default_factory=dict, compare=False)

    def config_hash(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


# section name -> (attribute on ExperimentConfig or None for top level, dataclass type)
_SECTIONS = {
    "bounds": ("bounds", ModelBounds),
    "noise": ("noise", NoiseSpec),
    "ablation": ("grid", AblationGrid),
    "population": ("population", PopulationSpec),
    "planning": ("planning", PlanningConfig),
    "ucb_bold": ("ucb_bold", UcbBoldConfig),
    "glm_bandit": ("glm_bandit", GlmBanditConfig),
    "qlearn": ("qlearn", QLearnerConfig),
    "sysid": ("sysid", SysidConfig),
}
_REQUIRED = ("experiment_id", "seed")


def _coerce(value: str, default, name: str):
    value = value.strip()
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, tuple):
            items = [v.strip() for v in value.split(",") if v.strip()]
            if not items:
                raise ConfigError(f"{name}: list must be nonempty")
            if default and isinstance(default[0], str):
                return tuple(items)
            if default and isinstance(default[0], int) and not isinstance(default[0], bool):
                return tuple(int(v) for v in items)
            return tuple(float(v) for v in items)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float) or default is None:
            if value.lower() in ("", "none"):
                return None
            try:
                return float(value)
            except ValueError:
                return value if default is None else float(value)
        return value
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse {value!r}") from exc


def _build(cls, items: dict, section: str, base=None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"[{section}] unknown field {key!r}")
        current = getattr(base, key) if base is not None else fields[key].default
        kwargs[key] = _coerce(raw, current, f"{section}.{key}")
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config_text(text: str, profile: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    top = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    missing = [k for k in _REQUIRED if k not in top]
    if missing:
        raise ConfigError("missing required fields: " + ", ".join(f"experiment.{k}" for k in missing))
    profiles = {s.split(".", 1)[1]: dict(cp[s]) for s in cp.sections() if s.startswith("profile.")}
    chosen = profile or top.get("profile", "desk")
    overrides = profiles.get(chosen, {})
    sections = {s: dict(cp[s]) for s in cp.sections() if not s.startswith("profile.")}
    for dotted, value in overrides.items():
        sec, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"[profile.{chosen}] keys must look like section.key")
        sections.setdefault(sec, {})[key] = value
    unknown = set(sections) - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigError("unknown sections: " + ", ".join(sorted(unknown)))

    top = dict(sections.get("experiment", {}))
    top["profile"] = chosen
    placeholder = ExperimentConfig(experiment_id="", seed=0)
    cfg_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, raw in top.items():
        if key not in cfg_fields or key in {a for a, _ in _SECTIONS.values()} or key == "profiles":
            raise ConfigError(f"[experiment] unknown field {key!r}")
        kwargs[key] = _coerce(raw, getattr(placeholder, key), f"experiment.{key}")
    for sec, (attr, cls) in _SECTIONS.items():
        if sec in sections:
            kwargs[attr] = _build(cls, sections[sec], sec, getattr(placeholder, attr))
    kwargs["profiles"] = profiles
    try:
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.T < 1 or cfg.patients < 1 or cfg.replications < 1 or cfg.baseline_reps < 1:
        raise ConfigError("T, patients, replications and baseline_reps must be positive")
    if cfg.eval_cadence < 1 or cfg.report_every < 1:
        raise ConfigError("eval_cadence and report_every must be positive")
    for alg in cfg.algorithms:
        if alg not in ALL_ALGORITHMS and not alg.startswith("Fixed"):
            raise ConfigError(f"experiment.algorithms: unknown algorithm {alg!r}")
    if cfg.bounds.M != cfg.population.M0 + 1:
        raise ConfigError("bounds.M must equal the population treatment count plus one "
                          "(the motivating action)")
    if cfg.profile not in ("desk", "paper"):
        raise ConfigError("experiment.profile must be desk or paper")


def parse_config(path, profile: str | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, profile)


def _render(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def serialize(cfg: ExperimentConfig) -> str:
    """INI text that parses back to an equal config (profile overrides already applied)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    nested = {a for a, _ in _SECTIONS.values()} | {"profiles"}
    cp["experiment"] = {f.name: _render(getattr(cfg, f.name))
                        for f in dataclasses.fields(cfg) if f.name not in nested}
    for sec, (attr, _) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        cp[sec] = {f.name: _render(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def to_jsonable(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d.pop("profiles", None)
    return json.loads(json.dumps(d))


def apply_overrides(cfg: ExperimentConfig, seed=None, workers=None, out=None,
                    environ=os.environ) -> ExperimentConfig:
    """Flag values win over environment variables, which win over the file."""
    changes = {}
    for name, flag, conv in (("seed", seed, int), ("workers", workers, int), ("out", out, str)):
        value = flag if flag is not None else environ.get(ENV_PREFIX + name.upper())
        if value is not None:
            try:
                changes[name] = conv(value)
            except ValueError as exc:
                raise ConfigError(f"{name}: cannot parse {value!r}") from exc
    if changes.get("workers", 1) < 1:
        raise ConfigError("workers must be at least 1")
    return dataclasses.replace(cfg, **changes) if changes else cfg
