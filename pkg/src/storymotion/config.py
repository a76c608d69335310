"""Flat INI configuration shared by the CLI: one section per module,
flag values override file values, and every run logs a stable hash of the
fully resolved configuration."""

from __future__ import annotations

import configparser
import hashlib
import json
import os

from .motion import ContractViolation


class ConfigError(ContractViolation):
    """Configuration file missing, unreadable, or holding a bad value."""


DEFAULTS = {
    "data": {"seed": 0, "clips_per_action": 64, "test_fraction": 0.125},
    "model": {"latent_tokens": 4, "latent_dim": 64, "denoiser_blocks": 4,
              "injection": "per-layer", "variant": "full",
              "diffusion_steps": 1000, "ddim_steps": 50},
    "train": {"lr": 1e-5, "batch_size": 32, "steps": 1000, "seed": 0,
              "lambda_tr": 1.0, "lambda_key": 1.0, "lambda_r": 1.0,
              "lambda_c": 1.0, "tau1": 0.1, "kl_weight": 1e-4},
    "guidance": {"w_c": 7.5, "tau2": 0.05, "k_iters": 4, "lbfgs_history": 10},
    "blend": {"l": 20, "tau3": 0.05, "ladder": 50},
    "eval": {"protocol": "Average", "samples": 64, "seed": 0},
    "service": {"port": 8077, "store": "./store", "steps": 50},
}


def load_config(path: str | None) -> dict:
    """Read an INI file into {section: {key: string}}; missing path -> {}."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config {path}: {exc}") from exc
    out = {section: dict(parser[section]) for section in parser.sections()}
    for section, values in out.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(values) - set(DEFAULTS[section]) - {"out_dir"}
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return out


def resolve(config: dict, section: str, key: str, override=None, cast=None):
    """Priority: explicit flag > config file > built-in default."""
    if override is not None:
        return override
    raw = config.get(section, {}).get(key)
    if raw is None:
        if section in DEFAULTS and key in DEFAULTS[section]:
            return DEFAULTS[section][key]
        raise ConfigError(f"missing config value [{section}] {key}")
    if cast is None:
        cast = type(DEFAULTS.get(section, {}).get(key, ""))
    try:
        if cast is bool:
            return str(raw).lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value [{section}] {key} = {raw!r}") from exc


def resolved_section(config: dict, section: str, overrides: dict | None = None) -> dict:
    out = dict(DEFAULTS.get(section, {}))
    for k, v in config.get(section, {}).items():
        base = out.get(k)
        try:
            out[k] = type(base)(v) if base is not None and not isinstance(base, str) else v
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value [{section}] {k} = {v!r}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            out[k] = v
    return out


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()[:16]
