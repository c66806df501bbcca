"""Flat key=value experiment configs with one section per scenario.

Files use INI syntax: a [common] section for shared paths and knobs,
plus one section per scenario overriding whatever it needs. Every key
has a documented default; unknown keys are rejected to catch typos.
"""

from __future__ import annotations

import configparser
from pathlib import Path

__all__ = ["ConfigError", "DEFAULTS", "SCENARIO_NAMES", "load_config", "scenario_settings"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "common": {
        "seed": "7",
        "data": "",
        "shifted_data": "",
        "backbone": "",
        "pool": "",
        "analysis_pool": "",
        "batch_size": "32",
        "lr": "0.01",
    },
    "pool-build": {
        "pool": "",
        "task_size": "3",
        "count": "60",
        "ratio": "0.9",
        "iterations": "250",
        "threshold": "0.01",
        "l1_weight": "1.0",
        "task_seed": "101",
    },
    "main-comparison": {
        "test_count": "20",
        "task_size": "3",
        "ratio": "0.9",
        "smsp_iterations": "100",
        "amp_iterations": "1000",
        "neighbors": "8",
        "class_disjoint": "true",
        "threshold": "0.01",
        "l1_weight": "1.0",
        "task_seed": "501",
    },
    "size-transfer": {
        "pool_3": "",
        "pool_5": "",
        "test_sizes": "3,5",
        "test_count": "10",
        "ratio": "0.9",
        "smsp_iterations": "100",
        "neighbors": "8",
        "class_disjoint": "true",
        "task_seed": "601",
    },
    "ratio-transfer": {
        "test_count": "20",
        "task_size": "3",
        "ratios": "0.85,0.9,0.95",
        "smsp_iterations": "100",
        "neighbors": "8",
        "class_disjoint": "true",
        "task_seed": "701",
    },
    "unseen-distribution": {
        "test_count": "20",
        "task_size": "3",
        "ratio": "0.9",
        "smsp_iterations": "100",
        "neighbors": "8",
        "task_seed": "801",
    },
    "neighbor-ablation": {
        "test_count": "20",
        "task_size": "3",
        "ratio": "0.9",
        "smsp_iterations": "100",
        "neighbor_counts": "1,2,4,8,16",
        "class_disjoint": "true",
        "task_seed": "901",
    },
    "similarity-ablation": {
        "test_count": "20",
        "task_size": "3",
        "ratio": "0.9",
        "iteration_marks": "20,60,100",
        "neighbors": "8",
        "class_disjoint": "true",
        "task_seed": "1001",
    },
    "overlap-analysis": {
        "k_fractions": "0.1,0.3",
        "permutations": "5000",
        "max_targets": "60",
    },
}

SCENARIO_NAMES = tuple(k for k in DEFAULTS if k != "common")


def load_config(path=None) -> dict[str, dict[str, str]]:
    """Defaults merged with an optional INI file."""
    merged = {section: dict(values) for section, values in DEFAULTS.items()}
    if path is None:
        return merged
    parser = configparser.ConfigParser()
    read = parser.read(Path(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in merged:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in merged[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            merged[section][key] = value
    return merged


def scenario_settings(cfg: dict, name: str) -> dict[str, str]:
    """The [common] mapping overlaid with the scenario's own section."""
    if name not in SCENARIO_NAMES:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}")
    settings = dict(cfg["common"])
    settings.update(cfg[name])
    return settings


def as_int(settings: dict, key: str) -> int:
    try:
        return int(settings[key])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad integer for {key!r}") from e


def as_float(settings: dict, key: str) -> float:
    try:
        return float(settings[key])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad float for {key!r}") from e


def as_bool(settings: dict, key: str) -> bool:
    raw = settings.get(key, "").strip().lower()
    if raw in ("true", "1", "yes", "on"):
        return True
    if raw in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"bad boolean for {key!r}: {settings.get(key)!r}")


def as_list(settings: dict, key: str, conv=float) -> list:
    raw = settings.get(key, "").strip()
    if not raw:
        raise ConfigError(f"empty list for {key!r}")
    try:
        return [conv(part.strip()) for part in raw.split(",")]
    except ValueError as e:
        raise ConfigError(f"bad list for {key!r}") from e
