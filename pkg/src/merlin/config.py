"""Run configuration files.

INI syntax (``key = value`` lines under ``[section]`` headers). Every section
and key is optional; anything not listed below is rejected.

[run]            seed, mode (merlin | merlin_np | merlin_p | gcsl), out_dir
[env]            name (PointReach | PointRooms)
[data]           path, n_trajectories, generator (random | expert | reverse_play),
                 noise_sigma, goal (for reverse_play, "x,y")
[stitch]         delta, n_new
[relabel]        hindsight_ratio
[train]          updates, batch_size, lr, hidden ("256,256,256"), embed_dim,
                 precision (float32 | float64), log_every, checkpoint_every
[reverse_model]  epochs, lr, batch_size, n_rollouts, synthetic_fraction
[eval]           gamma, horizon, episodes, goal_mode (uniform | fixed), goal ("x,y")

Command-line flags override values read from the file.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from .dataset import SOURCES
from .env import make_spec
from .policy import MODES, TrainConfig


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple | None:
    text = text.strip()
    if not text:
        return None
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    mode: str = "merlin"
    out_dir: str = "runs"


@dataclass(frozen=True)
class EnvSection:
    name: str = "PointReach"


@dataclass(frozen=True)
class DataSection:
    path: str = ""
    n_trajectories: int = 2000
    generator: str = "random"
    noise_sigma: float = 0.1
    goal: tuple | None = None


@dataclass(frozen=True)
class StitchSection:
    delta: float = 1e-6
    n_new: int = 500


@dataclass(frozen=True)
class RelabelSection:
    hindsight_ratio: float = 1.0


@dataclass(frozen=True)
class TrainSection:
    updates: int = 100_000
    batch_size: int = 512
    lr: float = 5e-4
    hidden: tuple = (256, 256, 256)
    embed_dim: int = 32
    precision: str = "float32"
    log_every: int = 100
    checkpoint_every: int = 0


@dataclass(frozen=True)
class ReverseModelSection:
    epochs: int = 100
    lr: float = 3e-4
    batch_size: int = 256
    n_rollouts: int = 2000
    synthetic_fraction: float = 0.5


@dataclass(frozen=True)
class EvalSection:
    gamma: float = 0.98
    horizon: int = 1
    episodes: int = 100
    goal_mode: str = "uniform"
    goal: tuple | None = None


_PARSERS = {int: int, float: float, str: str}
_TUPLE_PARSERS = {"hidden": _ints, "goal": _floats}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    env: EnvSection = field(default_factory=EnvSection)
    data: DataSection = field(default_factory=DataSection)
    stitch: StitchSection = field(default_factory=StitchSection)
    relabel: RelabelSection = field(default_factory=RelabelSection)
    train: TrainSection = field(default_factory=TrainSection)
    reverse_model: ReverseModelSection = field(default_factory=ReverseModelSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        if self.run.mode not in MODES:
            raise ConfigError(f"[run] mode must be one of {MODES}, got {self.run.mode!r}")
        try:
            make_spec(self.env.name)
        except ValueError as exc:
            raise ConfigError(f"[env] {exc}") from None
        if self.data.generator not in SOURCES:
            raise ConfigError(f"[data] generator {self.data.generator!r} unknown")
        if self.data.generator == "reverse_play" and self.data.goal is None:
            raise ConfigError("[data] reverse_play needs a goal")
        if self.eval.goal_mode not in ("uniform", "fixed"):
            raise ConfigError("[eval] goal_mode must be uniform or fixed")
        if self.eval.goal_mode == "fixed" and self.eval.goal is None:
            raise ConfigError("[eval] fixed goal_mode needs a goal")
        for g in (self.data.goal, self.eval.goal):
            if g is not None and len(g) != 2:
                raise ConfigError("goals take two coordinates")
        if not 0.0 < self.eval.gamma <= 1.0:
            raise ConfigError("[eval] gamma must lie in (0, 1]")
        if self.eval.horizon < 1 or self.eval.episodes < 1:
            raise ConfigError("[eval] horizon and episodes must be >= 1")
        if self.stitch.delta < 0 or self.stitch.n_new < 0:
            raise ConfigError("[stitch] delta and n_new must be >= 0")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def train_config(self) -> TrainConfig:
        t, rm = self.train, self.reverse_model
        return TrainConfig(
            updates=t.updates, batch_size=t.batch_size, lr=t.lr,
            hindsight_ratio=self.relabel.hindsight_ratio, mode=self.run.mode,
            eval_horizon=self.eval.horizon, hidden=t.hidden, embed_dim=t.embed_dim,
            precision=t.precision, log_every=t.log_every, checkpoint_every=t.checkpoint_every,
            delta=self.stitch.delta, n_stitched=self.stitch.n_new,
            model_epochs=rm.epochs, model_lr=rm.lr, model_batch=rm.batch_size,
            n_rollouts=rm.n_rollouts, synthetic_fraction=rm.synthetic_fraction)

    def override(self, section: str, **values) -> "RunConfig":
        """Copy with non-None ``values`` replacing keys in ``section``."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        sec = getattr(self, section)
        known = {f.name for f in fields(sec)}
        bad = set(values) - known
        if bad:
            raise ConfigError(f"unknown keys for [{section}]: {sorted(bad)}")
        return replace(self, **{section: replace(sec, **values)})

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for f in fields(self):
            sec = getattr(self, f.name)
            cp[f.name] = {g.name: _fmt(getattr(sec, g.name)) for g in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        """Hash of every setting except where outputs are written."""
        keyed = replace(self, run=replace(self.run, out_dir=""))
        return hashlib.sha256(keyed.to_text().encode()).hexdigest()


def _section_types(cls) -> dict:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def parse(text: str) -> RunConfig:
    """Parse INI text; unknown sections or keys raise ConfigError."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    sections = {f.name for f in fields(RunConfig)}
    for name in cp.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        cls = type(getattr(cfg, name))
        types = _section_types(cls)
        values = {}
        for key, raw in cp[name].items():
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                if key in _TUPLE_PARSERS:
                    values[key] = _TUPLE_PARSERS[key](raw)
                else:
                    values[key] = _PARSERS[types[key]](raw.strip())
            except ValueError:
                raise ConfigError(f"bad value for [{name}] {key}: {raw!r}") from None
        cfg = replace(cfg, **{name: cls(**{**{f.name: getattr(cls(), f.name) for f in fields(cls)},
                                           **values})})
    return cfg


def load(path) -> RunConfig:
    with open(path) as fh:
        return parse(fh.read())
