"""Run configuration: typed INI sections, named presets and overrides."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from typing import Any

from .chess import get_variant
from .mcts import SearchParams
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


# section -> key -> type; every key must be set by the base layer below
SCHEMA: dict[str, dict[str, type]] = {
    "run": {"variant": str, "seed": int, "threads": int},
    "train": {
        "iterations": int, "games": int, "window": int, "epochs": int, "batch_size": int,
        "learning_rate": float, "max_plies_chess": int, "max_plies_gardner": int,
        "checkpoint_every": int, "save_games": bool,
    },
    "search": {"simulations": int, "considered_actions": int, "gumbel_scale": float,
               "c_visit": float, "c_scale": float},
    "model": {"hidden": int, "blocks": int, "slope": float, "attention": str},
    "rate": {"games": int, "simulations": int, "initial_players": int, "rounds": int, "max_plies": int},
}

_BASE = """
[run]
variant = chess
seed = 0
threads = 1

[train]
iterations = 100
games = 256
window = 1000000
epochs = 1
batch_size = 2048
learning_rate = 0.001
max_plies_chess = 512
max_plies_gardner = 256
checkpoint_every = 1
save_games = true

[search]
simulations = 128
considered_actions = 16
gumbel_scale = 1.0
c_visit = 50.0
c_scale = 1.0

[model]
hidden = 128
blocks = 5
slope = 0.2
attention = out

[rate]
games = 60
simulations = 128
initial_players = 10
rounds = 5
max_plies = 0
"""

# overrides layered on top of the base; max_plies = 0 under [rate] means "the variant's training cap"
PRESETS: dict[str, str] = {
    "alg1-defaults": "",
    "paper-8x8": """
[train]
iterations = 500
batch_size = 256
checkpoint_every = 5
""",
    "paper-5x5": """
[run]
variant = gardner
[train]
games = 1024
batch_size = 256
checkpoint_every = 5
[model]
blocks = 10
""",
    "desk-scale": """
[run]
variant = gardner
[train]
iterations = 10
games = 64
window = 50000
batch_size = 256
[search]
simulations = 32
[model]
hidden = 32
blocks = 2
[rate]
games = 20
simulations = 32
""",
}


def _parse_value(kind: type, text: str, where: str) -> Any:
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return lowered in ("true", "yes", "1")
        return kind(text)
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {text!r}") from None


def _merge(values: dict[str, dict[str, Any]], text: str, origin: str) -> None:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            values.setdefault(section, {})[key] = _parse_value(SCHEMA[section][key], raw, f"{origin}: {section}.{key}")


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    preset: str

    @classmethod
    def load(cls, preset: str = "alg1-defaults", path=None, overrides: list[str] | None = None) -> RunConfig:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        values: dict[str, dict[str, Any]] = {}
        _merge(values, _BASE, "<base>")
        _merge(values, PRESETS[preset], f"<preset {preset}>")
        if path is not None:
            try:
                with open(path) as f:
                    text = f.read()
            except OSError as exc:
                raise ConfigError(f"{path}: {exc.strerror}") from None
            _merge(values, text, str(path))
        for item in overrides or []:
            key, sep, raw = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            _merge(values, f"[{section}]\n{name} = {raw}\n", "--set")
        cfg = cls(values, preset)
        cfg.validate()
        return cfg

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        self.values[section][key] = value

    def validate(self) -> None:
        try:
            get_variant(self.get("run", "variant"))
            self.train_config()
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def max_plies(self, variant: str | None = None) -> int:
        name = get_variant(variant or self.get("run", "variant")).name
        return self.get("train", f"max_plies_{name}")

    def search_params(self, simulations: int | None = None) -> SearchParams:
        s = self.values["search"]
        return SearchParams(
            simulations=simulations or s["simulations"], gumbel_scale=s["gumbel_scale"],
            considered_actions=s["considered_actions"], c_visit=s["c_visit"], c_scale=s["c_scale"],
            seed=self.get("run", "seed"),
        )

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(hidden=m["hidden"], blocks=m["blocks"], slope=m["slope"], attention=m["attention"])

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        variant = get_variant(self.get("run", "variant")).name
        return TrainConfig(
            variant=variant, iterations=t["iterations"], games=t["games"], search=self.search_params(),
            window=t["window"], epochs=t["epochs"], batch_size=t["batch_size"],
            learning_rate=t["learning_rate"], max_plies=self.max_plies(variant), seed=self.get("run", "seed"),
            checkpoint_every=t["checkpoint_every"], model=self.model_config(), threads=self.get("run", "threads"),
            save_games=t["save_games"],
        )

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in SCHEMA.items():
            parser[section] = {}
            for key in keys:
                v = self.values[section][key]
                parser[section][key] = str(v).lower() if isinstance(v, bool) else str(v)
        buf = io.StringIO()
        buf.write(f"# preset: {self.preset}\n")
        parser.write(buf)
        return buf.getvalue()


