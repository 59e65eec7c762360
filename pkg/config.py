"""
Pipeline configuration: INI file, then GEOEMBED_* environment overrides, then CLI flags.
"""
import configparser
import dataclasses
import hashlib
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from errors import ConfigError
from models import REDUCER_KINDS, GloveConfig, PipelineConfig, ReducerSpec

logger = logging.getLogger(__name__)

ENV_PREFIX = "GEOEMBED_"
CONFIG_COPY_NAME = "pipeline.ini"

PATH_KEYS = ("corpus_path", "stopwords_path", "english_words_path", "cities_path", "mines_path")
PIPELINE_KEYS = {"keyword": str, "k": int, "seed": int, "workers": int, "output_dir": str,
                 "baseline_trials": int}
GLOVE_KEYS = {"dim": int, "window": int, "x_max": float, "alpha": float, "lr": float, "epochs": int,
              "min_count": int}
REDUCER_KEYS = {"latent_dim": int, "hidden_dims": "dims", "epochs": int, "batch_size": int, "lr": float,
                "kl_weight": float, "lstm_steps": int, "lstm_features": int, "lstm_hidden": int}


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: first 8 bytes of sha256("<seed>:<stage>") as a big-endian integer, mod 2**32."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 32)


def _convert(section: str, key: str, raw: str, kind) -> Any:
    raw = raw.strip()
    try:
        if kind == "dims":
            return tuple(int(part) for part in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {getattr(kind, '__name__', 'list')}")


def _check_keys(parser: configparser.ConfigParser, section: str, allowed) -> None:
    unknown = [key for key in parser[section] if key not in allowed]
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _reducer_spec(kind: str, shared: Dict[str, Any], own: Dict[str, Any]) -> ReducerSpec:
    values = dict(shared)
    values.update(own)
    return ReducerSpec(kind=kind, **values)


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Read a pipeline config file.

    Relative paths in [paths] resolve against the config file's directory.
    A [reducer.<kind>] section overrides the shared [reducers] values for that kind.

    Args:
        path: INI file; None gives the defaults

    Returns:
        PipelineConfig (not yet validated)
    """
    config = PipelineConfig()
    if path is None:
        return config

    source = Path(path)
    if not source.exists():
        raise ConfigError(f"config file does not exist: {source} (--config)")
    parser = configparser.ConfigParser()
    try:
        parser.read(source, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {source}: {e}")

    base = source.resolve().parent
    updates: Dict[str, Any] = {}

    if parser.has_section("paths"):
        _check_keys(parser, "paths", PATH_KEYS + ("output_dir",))
        for key, raw in parser["paths"].items():
            updates[key] = str(base / raw.strip()) if raw.strip() else None
    if parser.has_section("pipeline"):
        _check_keys(parser, "pipeline", PIPELINE_KEYS)
        for key, raw in parser["pipeline"].items():
            value = _convert("pipeline", key, raw, PIPELINE_KEYS[key])
            updates[key] = str(base / value) if key == "output_dir" else value
    if parser.has_section("glove"):
        _check_keys(parser, "glove", GLOVE_KEYS)
        glove = {key: _convert("glove", key, raw, GLOVE_KEYS[key]) for key, raw in parser["glove"].items()}
        updates["glove"] = GloveConfig(**glove)

    kinds = list(REDUCER_KINDS)
    shared: Dict[str, Any] = {}
    if parser.has_section("reducers"):
        _check_keys(parser, "reducers", set(REDUCER_KEYS) | {"kinds"})
        section = parser["reducers"]
        if "kinds" in section:
            kinds = [k.strip() for k in section["kinds"].replace(",", " ").split() if k.strip()]
        shared = {key: _convert("reducers", key, raw, REDUCER_KEYS[key])
                  for key, raw in section.items() if key != "kinds"}
    specs = []
    for kind in kinds:
        name = f"reducer.{kind}"
        own = {}
        if parser.has_section(name):
            _check_keys(parser, name, REDUCER_KEYS)
            own = {key: _convert(name, key, raw, REDUCER_KEYS[key]) for key, raw in parser[name].items()}
        specs.append(_reducer_spec(kind, shared, own))
    updates["reducers"] = specs

    logger.debug("loaded config from %s", source)
    return dataclasses.replace(config, **updates)


def env_overrides(environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """GEOEMBED_<KEY> variables for the [paths] and [pipeline] keys, after loading .env."""
    if environ is None:
        load_dotenv()
        environ = dict(os.environ)
    overrides: Dict[str, Any] = {}
    for key in PATH_KEYS:
        value = environ.get(ENV_PREFIX + key.upper())
        if value:
            overrides[key] = value
    for key, kind in PIPELINE_KEYS.items():
        value = environ.get(ENV_PREFIX + key.upper())
        if value:
            overrides[key] = _convert("env", ENV_PREFIX + key.upper(), value, kind)
    return overrides


def apply_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """Replace top-level fields; None values leave the field alone."""
    values = {key: value for key, value in overrides.items() if value is not None}
    unknown = [key for key in values if key not in {f.name for f in dataclasses.fields(config)}]
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    return dataclasses.replace(config, **values)


def with_stage_seeds(config: PipelineConfig) -> PipelineConfig:
    """Derive every stage seed from the one pipeline seed."""
    glove = dataclasses.replace(config.glove, seed=derive_seed(config.seed, "glove"))
    reducers = [dataclasses.replace(spec, seed=derive_seed(config.seed, f"reduce:{spec.kind}"))
                for spec in config.reducers]
    return dataclasses.replace(config, glove=glove, reducers=reducers)


def resolve_config(path: Optional[str] = None, **cli_overrides) -> PipelineConfig:
    """File, then environment, then CLI flags; stage seeds derived; validated."""
    config = load_config(path)
    config = apply_overrides(config, **env_overrides())
    config = apply_overrides(config, **cli_overrides)
    return with_stage_seeds(config).validate()


def config_to_ini(config: PipelineConfig) -> str:
    """The effective config as INI text. Derived stage seeds are not written."""
    parser = configparser.ConfigParser()
    parser["paths"] = {key: getattr(config, key) or "" for key in PATH_KEYS}
    parser["pipeline"] = {key: str(getattr(config, key)) for key in PIPELINE_KEYS}
    parser["glove"] = {key: repr(getattr(config.glove, key)) for key in GLOVE_KEYS}
    parser["reducers"] = {"kinds": ", ".join(spec.kind for spec in config.reducers)}
    for spec in config.reducers:
        section = {}
        for key in REDUCER_KEYS:
            value = getattr(spec, key)
            section[key] = ", ".join(str(d) for d in value) if key == "hidden_dims" else repr(value)
        parser[f"reducer.{spec.kind}"] = section

    lines = []
    for name in parser.sections():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in parser[name].items())
        lines.append("")
    return "\n".join(lines)
