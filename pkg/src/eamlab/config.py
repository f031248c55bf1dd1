"""Experiment configuration: a JSON document with strict keys and resolved defaults."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .rewards import RewardSpec
from .training import TrainConfig
from .worlds import World

FINETUNE_METHODS = ("am", "eam")

# TrainConfig fields that live at the top level of an experiment config
_TOP_LEVEL = ("method", "seed")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in _TOP_LEVEL)


def _default_world():
    return {"variant": "gaussian", "components": [{"weight": 1.0, "mean": [0.0], "cov": [[1.0]]}]}


def _default_reward():
    return {"kind": "quadratic", "beta": 1.0, "A": [[1.0]], "m": [0.0]}


def _default_train():
    return {k: v for k, v in TrainConfig().to_dict().items() if k not in _TOP_LEVEL}


def _default_pretrain():
    return {"iterations": 5000, "batch_size": 256, "lr": 1e-3}


def _default_model():
    return {"hidden": [64, 64], "n_freq": 8}


def _default_eval():
    return {"n": 100_000, "ode_steps": 10}


class ConfigError(ValueError):
    pass


def _strict(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"[{section}] must be a table")
    extra = set(given) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")


@dataclass
class ExperimentConfig:
    world: dict = field(default_factory=_default_world)
    reward: dict = field(default_factory=_default_reward)
    method: str = "eam"
    seed: int = 0
    train: dict = field(default_factory=_default_train)
    pretrain: dict = field(default_factory=_default_pretrain)
    model: dict = field(default_factory=_default_model)
    eval: dict = field(default_factory=_default_eval)
    out_dir: str = "runs/default"
    checkpoint: str | None = None
    analytic_velocity: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in FINETUNE_METHODS:
            raise ConfigError(f"method must be one of {FINETUNE_METHODS}, got {self.method!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        _strict("train", self.train, TRAIN_KEYS)
        _strict("pretrain", self.pretrain, _default_pretrain())
        _strict("model", self.model, _default_model())
        _strict("eval", self.eval, _default_eval())
        if int(self.eval["n"]) < 1000:
            raise ConfigError(f"eval.n must be >= 1000, got {self.eval['n']}")
        if int(self.eval["ode_steps"]) < 1:
            raise ConfigError("eval.ode_steps must be >= 1")
        if int(self.pretrain["iterations"]) < 0 or int(self.pretrain["batch_size"]) < 1:
            raise ConfigError("pretrain.iterations >= 0 and pretrain.batch_size >= 1 required")
        try:
            w = self.world_obj()
            r = self.reward_obj()
            self.train_config()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if r.dim != w.dim:
            raise ConfigError(f"reward dimension {r.dim} does not match world dimension {w.dim}")

    # -- typed views -------------------------------------------------------

    def world_obj(self) -> World:
        return World.from_dict(self.world)

    def reward_obj(self) -> RewardSpec:
        return RewardSpec.from_dict(self.reward)

    def train_config(self, method: str | None = None) -> TrainConfig:
        return TrainConfig(method=method or self.method, seed=self.seed, **self.train)

    def pretrain_config(self) -> TrainConfig:
        kw = {k: v for k, v in self.train.items() if k in ("t_min", "t_max", "beta1", "beta2", "weight_decay")}
        return TrainConfig(method="pretrain", seed=self.seed, **kw, **self.pretrain)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "world": copy.deepcopy(self.world),
            "reward": copy.deepcopy(self.reward),
            "method": self.method,
            "seed": self.seed,
            "train": dict(self.train),
            "pretrain": dict(self.pretrain),
            "model": copy.deepcopy(self.model),
            "eval": dict(self.eval),
            "out_dir": self.out_dir,
            "checkpoint": self.checkpoint,
            "analytic_velocity": self.analytic_velocity,
        }

    def resolved_text(self) -> str:
        """Canonical text: sorted keys, fixed separators, trailing newline."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        top = {f.name for f in fields(cls)}
        _strict("top level", d, top)
        d = copy.deepcopy(d)
        # sections merge onto their defaults so partial tables are allowed
        merged = {}
        for name, default in (("train", _default_train), ("pretrain", _default_pretrain),
                              ("model", _default_model), ("eval", _default_eval)):
            sec = d.pop(name, {})
            _strict(name, sec, default())
            merged[name] = {**default(), **sec}
        if "world" in d:
            World.from_dict(d["world"])  # strict key check happens here
        if "reward" in d:
            RewardSpec.from_dict(d["reward"])
        return cls(**d, **merged)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Apply ``section.key`` or top-level overrides; ``None`` values are ignored."""
        d = self.to_dict()
        for key, val in kw.items():
            if val is None:
                continue
            if "." in key:
                sec, sub = key.split(".", 1)
                if sec not in ("train", "pretrain", "model", "eval"):
                    raise ConfigError(f"cannot override {key}")
                d[sec][sub] = val
            else:
                d[key] = val
        return ExperimentConfig.from_dict(d)
