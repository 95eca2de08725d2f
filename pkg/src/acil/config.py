"""Run configuration: flat ``key = value`` text with dotted sections.

Example::

    env = maze
    constraint = box:0.1
    seed = 0
    seeds = 1 2 3
    expert.n = 5
    align.episodes = 10
    cem.population = 100
    bc.epochs = 200

Blank lines and ``#`` comments are ignored. Unknown keys and malformed values
raise :class:`ConfigError` naming the offending field.

Seeds: every stage draws from ``derive_seed(master, component)``, i.e. a
``numpy.random.SeedSequence`` keyed by the master seed and the CRC32 of the
component name, so any stage can be rerun alone with identical randomness.
"""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import AlignmentConfig
from .constraints import ConstraintError, ConstraintSpec, parse_constraint
from .dynamics import TrainConfig
from .envs import ENVIRONMENTS, Environment, ExpertGains, make_env
from .imitation import BCConfig
from .planner import CemConfig, ErcConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the field."""


def derive_seed(master: int, component: str) -> int:
    """Deterministic 63-bit seed for ``component`` under ``master``."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(component.encode())])
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64)
               % np.uint64(2**63))


@dataclass
class ExpertConfig:
    n: int = 5
    max_steps: int = 400
    kp: float = 2.0
    kd: float = 1.0


@dataclass
class DynamicsConfig:
    n_members: int = 5
    hidden: int = 64
    epochs: int = 50
    retrain_epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9


@dataclass
class EvalConfig:
    episodes: int = 50
    max_steps: int = 400


@dataclass
class PathsConfig:
    expert: str = ""
    surrogate: str = ""
    policy: str = ""


@dataclass
class AlignSection:
    episodes: int = 10
    max_length_factor: float = 3.0
    inject_expert: bool = False


@dataclass
class RunConfig:
    env: str = "maze"
    constraint: str = "box:0.1"
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    align: AlignSection = field(default_factory=AlignSection)
    cem: CemConfig = field(default_factory=CemConfig)
    erc: ErcConfig = field(default_factory=ErcConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    bc: BCConfig = field(default_factory=BCConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    # -- derived objects -------------------------------------------------

    def make_env(self) -> Environment:
        return make_env(self.env, max_steps=self.eval.max_steps)

    def constraint_spec(self) -> ConstraintSpec:
        env = self.make_env()
        spec = parse_constraint(self.constraint, env.velocity_indices)
        spec.check_dims(env.d_a, env.d_s)
        return spec

    def gains(self) -> ExpertGains:
        return ExpertGains(self.expert.kp, self.expert.kd)

    def alignment_config(self, seed=None) -> AlignmentConfig:
        d = self.dynamics
        return AlignmentConfig(
            episodes=self.align.episodes,
            max_length_factor=self.align.max_length_factor,
            cem=self.cem,
            erc=self.erc,
            train=TrainConfig(d.epochs, d.batch_size, d.lr, d.optimizer, d.momentum),
            retrain_epochs=d.retrain_epochs,
            n_members=d.n_members,
            hidden=d.hidden,
            seed=self.seed if seed is None else seed,
            inject_expert=self.align.inject_expert,
        )

    def validate(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env: unknown environment {self.env!r}")
        try:
            self.constraint_spec()
        except (ConstraintError, ValueError) as exc:
            raise ConfigError(f"constraint: {exc}") from None
        if not self.seeds:
            raise ConfigError("seeds: need at least one evaluation seed")
        for name, val in [("expert.n", self.expert.n), ("align.episodes", self.align.episodes),
                          ("eval.episodes", self.eval.episodes), ("eval.max_steps", self.eval.max_steps),
                          ("expert.max_steps", self.expert.max_steps), ("bc.epochs", self.bc.epochs)]:
            if val < 1:
                raise ConfigError(f"{name}: must be >= 1, got {val}")
        if self.align.max_length_factor <= 0:
            raise ConfigError("align.max_length_factor: must be > 0")
        return self

    # -- text form -------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if dataclasses.is_dataclass(val):
                for g in dataclasses.fields(val):
                    lines.append(f"{f.name}.{g.name} = {_render(getattr(val, g.name))}")
            else:
                lines.append(f"{f.name} = {_render(val)}")
        return "\n".join(lines) + "\n"


def _render(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def _convert(key, raw: str, current, hint):
    raw = raw.strip()
    try:
        if hint in ("bool", bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if "list" in str(hint):
            return [int(x) for x in raw.replace(",", " ").split()]
        if "None" in str(hint) and raw.lower() == "none":
            return None
        if hint in ("int", int):
            return int(raw)
        if "float" in str(hint):
            return float(raw)
        if hint in ("str", str):
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {hint}") from None
    return type(current)(raw)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse config text over ``base`` (defaults when omitted)."""
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    sections = {}
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if dataclasses.is_dataclass(val):
            sections[f.name] = {g.name: g.type for g in dataclasses.fields(val)}
    updates: dict[str, dict] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (x.strip() for x in line.split("=", 1))
        if "." in key:
            sec, name = key.split(".", 1)
            if sec not in sections or name not in sections[sec]:
                raise ConfigError(f"{key}: unknown config field")
            cur = getattr(getattr(cfg, sec), name)
            updates.setdefault(sec, {})[name] = _convert(key, raw, cur, sections[sec][name])
        else:
            hints = {f.name: f.type for f in dataclasses.fields(cfg)}
            if key not in hints or key in sections:
                raise ConfigError(f"{key}: unknown config field")
            setattr(cfg, key, _convert(key, raw, getattr(cfg, key), hints[key]))
    for sec, vals in updates.items():
        try:
            setattr(cfg, sec, dataclasses.replace(getattr(cfg, sec), **vals))
        except ValueError as exc:
            raise ConfigError(f"{sec}.{next(iter(vals))}: {exc}") from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text())
