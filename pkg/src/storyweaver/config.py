"""JSON config file: asset paths, hyperparameters, server settings.

Relative paths resolve against the config file's own directory so a config
can travel with its assets. Poetry and topic assets default to the bundled
starter set, which makes a minimal config just {"seed": 7}.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .encoding import DEFAULT_BITS, DEFAULT_DIM
from .selector import DEFAULT_FALLBACK, Hyperparams

ENV_CONFIG = "STORYWEAVER_CONFIG"


def asset_path(name: str) -> Path:
    """Path of a bundled asset file (templates, lexicon, sample corpora...)."""
    return Path(str(resources.files("storyweaver").joinpath("assets", name)))


def assets_dir() -> Path:
    return Path(str(resources.files("storyweaver").joinpath("assets")))


@dataclass(frozen=True)
class TopicConfig:
    title: str = "Dinosaur"
    base_url: str = ""
    offline: bool = True
    cache_dir: Path = Path("topic_cache")
    bundled_dir: Path = field(default_factory=assets_dir)


@dataclass(frozen=True)
class PoetryConfig:
    templates_path: Path = field(default_factory=lambda: asset_path("templates.txt"))
    rhymes_path: Path = field(default_factory=lambda: asset_path("rhymes.dict"))
    glossary_path: Path = field(default_factory=lambda: asset_path("glossary.tsv"))


@dataclass(frozen=True)
class ServerConfig:
    port: int = 8765
    bind: str = "127.0.0.1"
    static_dir: Path | None = None


@dataclass(frozen=True)
class AppConfig:
    qtable: Path | None = None
    context_model: Path | None = None
    rules: Path | None = field(default_factory=lambda: asset_path("rules.txt"))
    topic: TopicConfig = field(default_factory=TopicConfig)
    poetry: PoetryConfig = field(default_factory=PoetryConfig)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    encoding_dim: int = DEFAULT_DIM
    encoding_bits: int = DEFAULT_BITS
    encoding_seed: int = 1234
    seed: int = 0
    context_window: int = 4
    fallback: str = DEFAULT_FALLBACK
    transcript_dir: Path | None = None
    fixed_clock: str | None = None
    server: ServerConfig = field(default_factory=ServerConfig)


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent.resolve()

    topic_raw = raw.get("topic", {})
    topic = TopicConfig(
        title=topic_raw.get("title", "Dinosaur"),
        base_url=topic_raw.get("base_url", ""),
        offline=bool(topic_raw.get("offline", True)),
        cache_dir=_resolve(base, topic_raw.get("cache_dir", "topic_cache")),
        bundled_dir=_resolve(base, topic_raw["bundled_dir"])
        if "bundled_dir" in topic_raw
        else assets_dir(),
    )
    poetry_raw = raw.get("poetry", {})
    poetry = PoetryConfig(
        templates_path=_resolve(base, poetry_raw["templates_path"])
        if "templates_path" in poetry_raw
        else asset_path("templates.txt"),
        rhymes_path=_resolve(base, poetry_raw["rhymes_path"])
        if "rhymes_path" in poetry_raw
        else asset_path("rhymes.dict"),
        glossary_path=_resolve(base, poetry_raw["glossary_path"])
        if "glossary_path" in poetry_raw
        else asset_path("glossary.tsv"),
    )
    hp_raw = raw.get("hyperparams", {})
    hyperparams = Hyperparams(
        alpha=hp_raw.get("alpha", 0.1),
        gamma=hp_raw.get("gamma", 0.9),
        epsilon_start=hp_raw.get("epsilon_start", 0.2),
        epsilon_end=hp_raw.get("epsilon_end", 0.01),
        lambda_conf=hp_raw.get("lambda_conf", 0.3),
    )
    enc_raw = raw.get("encoding", {})
    server_raw = raw.get("server", {})
    server = ServerConfig(
        port=int(server_raw.get("port", 8765)),
        bind=server_raw.get("bind", "127.0.0.1"),
        static_dir=_resolve(base, server_raw.get("static_dir")),
    )
    return AppConfig(
        qtable=_resolve(base, raw.get("qtable")),
        context_model=_resolve(base, raw.get("context_model")),
        rules=_resolve(base, raw["rules"]) if "rules" in raw else asset_path("rules.txt"),
        topic=topic,
        poetry=poetry,
        hyperparams=hyperparams,
        encoding_dim=int(enc_raw.get("dim", DEFAULT_DIM)),
        encoding_bits=int(enc_raw.get("bits", DEFAULT_BITS)),
        encoding_seed=int(enc_raw.get("seed", 1234)),
        seed=int(raw.get("seed", 0)),
        context_window=int(raw.get("context_window", 4)),
        fallback=raw.get("fallback", DEFAULT_FALLBACK),
        transcript_dir=_resolve(base, raw.get("transcript_dir")),
        fixed_clock=raw.get("fixed_clock"),
        server=server,
    )


def config_path_from_env() -> str | None:
    return os.environ.get(ENV_CONFIG)
