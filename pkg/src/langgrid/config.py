"""Run configuration: `key = value` lines under [section] headers.

Every key must exist in the schema; unknown keys are rejected by name.
The fully-resolved configuration is echoed into each run's manifest, and
write_config() serializes one back into parseable text (used to prove a
manifest reproduces its run).
"""
from __future__ import annotations

from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Bad config file: unknown key/section or unparsable value."""


def _bool(text: str) -> bool:
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
    },
    "task": {
        "family": (str, "one_room"),
        "goal": (str, "red ball"),
        "distractors_min": (int, 3),
        "distractors_max": (int, 5),
        "max_steps": (int, 0),          # 0 = family default
        "instruction": (_bool, False),
    },
    "sen": {
        "workers": (int, 4),
        "iterations": (int, 60000),
        "t_max": (int, 20),
        "gamma": (float, 0.99),
        "lr": (float, 7e-4),
        "entropy_coef": (float, 0.01),
        "eval_every": (int, 1000),
        "eval_episodes": (int, 2),
        "stop_success": (float, 0.85),
        "max_episode_steps": (int, 100),
        "locked_goal_prob": (float, 0.3),
        "start_carried_prob": (float, 0.15),
    },
    "lcn": {
        "capacity": (int, 10000),
        "batch_size": (int, 32),
        "gamma": (float, 0.9),
        "lr": (float, 1e-3),
        "eps_start": (float, 1.0),
        "eps_end": (float, 0.05),
        "eps_decay_frac": (float, 0.2),
        "target_sync": (int, 200),
        "err_rate": (float, 0.05),
        "option_max_steps": (int, 30),
        "max_episodes": (int, 20000),
        "fuzzy_frac": (float, 0.2),
        "executor": (str, "oracle"),     # "oracle" or a sen checkpoint path
    },
    "eval": {
        "bundle": (str, "hier"),         # hier | flat | random | oracle
        "episodes": (int, 300),
        "option_max_steps": (int, 30),
        "sen_checkpoint": (str, ""),
        "lcn_checkpoint": (str, ""),
        "explore_budget": (int, 200),
    },
    "solve": {
        "budget": (int, 100),
        "episodes": (int, 100),
        "option_max_steps": (int, 30),
        "sen_checkpoint": (str, ""),     # empty = oracle executor
        "memory_file": (str, "memory.txt"),
    },
    "theorem": {
        "families": (int, 100),
        "max_elements": (int, 8),
        "samples": (int, 20000),
    },
    "export": {
        "checkpoint": (str, ""),
        "kind": (str, "lcn"),            # lcn | sen
    },
}


def default_config() -> dict[str, dict[str, Any]]:
    return {sec: {k: dv for k, (_, dv) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config_text(text: str) -> dict[str, dict[str, Any]]:
    cfg = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        parser = SCHEMA[section][key][0]
        try:
            cfg[section][key] = parser(value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}") from e
    return cfg


def load_config(path: str | Path | None) -> dict[str, dict[str, Any]]:
    """Load a config file; the literal string "default" gives the defaults."""
    if path is None or str(path) == "default":
        return default_config()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def write_config(cfg: dict[str, dict[str, Any]]) -> str:
    lines = []
    for section in cfg:
        lines.append(f"[{section}]")
        for key, value in cfg[section].items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
