"""Experiment configuration files (YAML) and seed sub-streams.

Example::

    target: 9gaussians        # or {name, weights, means, var}
    seed: 0
    mode: logdensity          # or "score" for the score-FPE ablation
    train: {iterations: 100000, learning_rate: 5.0e-4}
    lmc: {step_size: 1.0, iterations: 60, batch_size: 128}
    sampler: {steps: 1000, samples: 1000, radius: 20}
    metrics: [kl, mixing]

Missing sections fall back to the per-target defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from diffusion_pinn.diffusion import LMC_DEFAULTS, LmcConfig
from diffusion_pinn.errors import ConfigError
from diffusion_pinn.sampler import RADIUS_DEFAULTS, SamplerConfig
from diffusion_pinn.targets import get_target
from diffusion_pinn.trainer import TRAIN_DEFAULTS, TrainConfig

MODES = ("logdensity", "score")
METRICS = ("kl", "mixing", "score")
TOP_LEVEL = {"target", "seed", "mode", "train", "lmc", "sampler", "metrics", "out"}
TRAIN_KEYS = {
    "learning_rate", "iterations", "clip_norm", "reg_coef", "batch_size",
    "hutchinson", "checkpoint_every", "track_score_error", "chunk",
}
LMC_KEYS = {"step_size", "iterations", "batch_size", "refresh", "refresh_period"}
SAMPLER_KEYS = {"steps", "samples", "radius"}


def substream_seed(seed, name):
    """Independent integer seed for the named purpose ("train", "sample", "eval", ...)."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    target_spec: object
    seed: int
    mode: str
    train: TrainConfig
    lmc: LmcConfig
    sampler: SamplerConfig
    metrics: tuple
    out: Path | None
    source_hash: str

    @property
    def target(self):
        return get_target(self.target_spec)


def _section(raw, name, allowed):
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown field")
    return value


def _build(cls, name, values):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        text = str(exc).lower()
        field = next((k for k in values if k in text or k.replace("_", " ") in text), None)
        where = f"{name}.{field}" if field else name
        raise ConfigError(f"{where}: {exc}") from exc


def _typed(section, values, types):
    """Check field types; numeric strings such as "5e-4" (left as str by YAML 1.1) are converted."""
    out = dict(values)
    for key, kind in types.items():
        if key not in out or out[key] is None and key == "batch_size":
            continue
        v = out[key]
        kinds = kind if isinstance(kind, tuple) else (kind,)
        if float in kinds and isinstance(v, str):
            try:
                v = out[key] = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) != (bool in kinds) or not isinstance(v, kinds):
            names = "/".join(k.__name__ for k in kinds)
            raise ConfigError(f"{section}.{key}: expected {names}, got {v!r}")
    return out


_NUM = (int, float)
TRAIN_TYPES = {
    "learning_rate": _NUM, "iterations": int, "clip_norm": _NUM, "reg_coef": _NUM, "batch_size": int,
    "hutchinson": bool, "checkpoint_every": int, "track_score_error": bool, "chunk": int,
}
LMC_TYPES = {"step_size": _NUM, "iterations": int, "batch_size": int, "refresh": bool, "refresh_period": int}
SAMPLER_TYPES = {"steps": int, "samples": int, "radius": _NUM}


def parse_config(raw, *, source_hash=""):
    """Validate a mapping and resolve defaults; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigError(f"{key}: unknown field")
    if "target" not in raw:
        raise ConfigError("target: required field missing")
    spec = raw["target"]
    try:
        target = get_target(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"target: {exc}") from exc
    name = target.name
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    mode = raw.get("mode", "logdensity")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {MODES}, got {mode!r}")

    lmc_raw = _typed("lmc", _section(raw, "lmc", LMC_KEYS), LMC_TYPES)
    base_lmc = dataclasses.asdict(LMC_DEFAULTS.get(name, LMC_DEFAULTS["9gaussians"]))
    lmc = _build(LmcConfig, "lmc", {**base_lmc, **lmc_raw})

    train_raw = _typed("train", _section(raw, "train", TRAIN_KEYS), TRAIN_TYPES)
    train = _build(TrainConfig, "train", {**TRAIN_DEFAULTS.get(name, {}), **train_raw, "seed": substream_seed(seed, "train"), "lmc": lmc})

    sampler_raw = _typed("sampler", _section(raw, "sampler", SAMPLER_KEYS), SAMPLER_TYPES)
    sampler_base = {"radius": RADIUS_DEFAULTS.get(name, 20.0)}
    sampler = _build(SamplerConfig, "sampler", {**sampler_base, **sampler_raw, "seed": substream_seed(seed, "sample")})

    metrics = raw.get("metrics", ["kl", "mixing"])
    if isinstance(metrics, str):
        metrics = [metrics]
    for i, m in enumerate(metrics):
        if m not in METRICS:
            raise ConfigError(f"metrics[{i}]: expected one of {METRICS}, got {m!r}")
    out = raw.get("out")
    return ExperimentConfig(spec, seed, mode, train, lmc, sampler, tuple(metrics), Path(out) if out else None, source_hash)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: {path} is not valid YAML: {exc}") from exc
    return parse_config(raw, source_hash=hashlib.sha256(text.encode()).hexdigest())
