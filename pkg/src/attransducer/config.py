"""INI-style run configuration with ``[model]``, ``[train]`` and ``[data]`` sections."""
from __future__ import annotations

import configparser
from dataclasses import asdict, fields
from pathlib import Path

from .data import SyntheticTaskConfig
from .model import ModelConfig
from .train import TrainConfig

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": SyntheticTaskConfig}


def _coerce(cls, key: str, raw: str):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ValueError(f"unknown key {key!r} for [{cls.__name__}]")
    t = str(types[key])
    if raw.lower() in ("none", "") and "None" in t:
        return None
    if "bool" in t:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {raw!r}")
    if "float" in t:
        return float(raw)
    return int(raw)


def load_config(path=None, **overrides):
    """Return ``(ModelConfig, TrainConfig, SyntheticTaskConfig)``.

    ``overrides`` are ``section__key=value`` pairs applied after the file.
    """
    values = {name: {} for name in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        for section in parser.sections():
            if section not in SECTIONS:
                raise ValueError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                values[section][key] = _coerce(SECTIONS[section], key, raw)
    for k, v in overrides.items():
        section, _, key = k.partition("__")
        if v is not None:
            values[section][key] = v
    return tuple(SECTIONS[name](**values[name]) for name in ("model", "train", "data"))


def dump_config(path, model: ModelConfig, train: TrainConfig, data: SyntheticTaskConfig) -> None:
    parser = configparser.ConfigParser()
    for name, obj in (("model", model), ("train", train), ("data", data)):
        parser[name] = {k: str(v) for k, v in asdict(obj).items()}
    with open(Path(path), "w", encoding="utf-8") as fh:
        parser.write(fh)
