"""Run configuration: named profiles, JSON files, ``MSECG_*`` env vars and flags.

Precedence, lowest first: dataclass defaults < profile < ``--config`` file <
environment < command-line overrides.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Mapping

from .dsp import DspConfig
from .model import ModelConfig
from .train import StageConfig, TrainConfig

PROFILES = ("desk", "paper")
ENV_PREFIX = "MSECG_"


@dataclass
class DataConfig:
    synthetic_records: int = 10
    duration: float = 10.0
    fs: float = 500.0
    noise_duration: float = 120.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    threads: int = 1
    profile: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dsp"]["snr_range"] = list(d["dsp"]["snr_range"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        data_keys = {f.name for f in fields(DataConfig)}
        if set(d.get("data", {})) - data_keys:
            raise ValueError(f"unknown data config keys: {sorted(set(d['data']) - data_keys)}")
        dsp_keys = {f.name for f in fields(DspConfig)}
        if set(d.get("dsp", {})) - dsp_keys:
            raise ValueError(f"unknown dsp config keys: {sorted(set(d['dsp']) - dsp_keys)}")
        seed = int(d.get("seed", 0))
        model = dict(d.get("model", {}))
        train = dict(d.get("train", {}))
        # one master seed drives initialization and training draws
        model["seed"] = seed
        train["seed"] = seed
        return cls(model=ModelConfig.from_dict(model), train=TrainConfig.from_dict(train),
                   dsp=DspConfig(**d.get("dsp", {})), data=DataConfig(**d.get("data", {})),
                   seed=seed, threads=int(d.get("threads", 1)), profile=d.get("profile"))


_SECTION_TYPES = {"model": ModelConfig, "train": TrainConfig, "dsp": DspConfig, "data": DataConfig,
                  "stage1": StageConfig, "stage2": StageConfig}


def profile_dict(name: str) -> dict:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {PROFILES}")
    text = resources.files("msecg.configs").joinpath(f"{name}.json").read_text()
    d = json.loads(text)
    d["profile"] = name
    return d


def deep_merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """``MSECG_SEED=3`` -> ``seed``; ``MSECG_MODEL__D=32`` -> ``model.D``."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):]
        if name in ("PROFILE", "OUT_DIR", "CONFIG"):
            continue
        set_path(out, ".".join(_canonical_path(name.split("__"))), _parse_value(raw))
    return out


def _canonical_path(parts: list[str]) -> list[str]:
    """Match env-var segments case-insensitively against dataclass field names."""
    out, cls = [], RunConfig
    for part in parts:
        names = {f.name.lower(): f for f in fields(cls)} if cls is not None else {}
        f = names.get(part.lower())
        if f is None:
            out.append(part.lower())
            cls = None
            continue
        out.append(f.name)
        cls = _SECTION_TYPES.get(f.name) if cls in (RunConfig, TrainConfig) else None
    return out


def resolve(profile: str | None = None, config_path: str | Path | None = None,
            overrides: Mapping | None = None, environ: Mapping[str, str] | None = None) -> RunConfig:
    base: dict = {}
    if profile:
        base = profile_dict(profile)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        base = deep_merge(base, json.loads(path.read_text()))
    base = deep_merge(base, env_overrides(environ))
    if overrides:
        base = deep_merge(base, overrides)
    return RunConfig.from_dict(base)
