"""Run configuration: flat ``key = value`` files plus command-line overrides."""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

from .data import DATASET_PRESETS
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    dataset: str = "eth_ucy"          # preset for frame_dt / radius: eth_ucy, sdd, nba
    train_files: str = ""             # comma-separated trajectory files
    test_files: str = ""
    column_order: str = "frame,id,x,y"
    delimiter: str = ""               # empty: any whitespace run
    unit_scale: float = 1.0           # e.g. SDD pixels -> metres
    frame_dt: float = 0.0             # 0: take from preset
    radius: float = -1.0              # negative: take from preset; inf allowed
    obs_len: int = 8
    pred_len: int = 12
    stride: int = 1
    window_cache: str = ""            # optional path of a cached window list
    # model
    latent_dim: int = 32
    obs_hidden: int = 256
    rnn_hidden: int = 256
    embed_dim: int = 64
    attn_dim: int = 32
    head_hidden: int = 128
    mpd_horizon: float = 7.0
    kl_estimator: str = "closed_form"
    dtype: str = "float32"
    # training
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    steps: int = 10000
    checkpoint_every: int = 1000
    augment_flip: bool = True
    augment_rotation: bool = True
    # evaluation / prediction
    k: int = 20
    fpc_rate: int = 50
    fpc_seed: int = 0
    nll_samples: int = 2000
    best_of_mode: str = "independent"
    baseline_velocity: str = "mean"
    decode_mode: str = "sample"       # or "mean" (deterministic decoder means)
    eval_batch: int = 64
    max_windows: int = 0              # 0: all
    heatmap_bins: int = 128
    heatmap_pad: float = 0.1
    sweep_rates: str = "1-50"
    latent_samples: int = 150
    latent_speeds: str = "0.6,0.7,0.8"
    latent_turns: str = "-30,-15,0,15,30"
    # runtime
    seed: int = 0
    threads: int = 1

    # derived ------------------------------------------------------------
    def preset(self) -> dict:
        if self.dataset not in DATASET_PRESETS:
            raise ConfigError(f"unknown dataset preset {self.dataset!r}")
        return DATASET_PRESETS[self.dataset]

    @property
    def effective_frame_dt(self) -> float:
        return self.frame_dt if self.frame_dt > 0 else self.preset()["frame_dt"]

    @property
    def effective_radius(self) -> float:
        return self.radius if self.radius >= 0 else self.preset()["radius"]

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{f.name: getattr(self, f.name) for f in fields(ModelConfig)})

    def file_list(self, key: str) -> list[str]:
        return [p.strip() for p in getattr(self, key).split(",") if p.strip()]

    # io -----------------------------------------------------------------
    def update(self, pairs: dict) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in pairs.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(known[key].type, raw, key)
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls().update(parse_pairs(text.splitlines()))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def parse_pairs(lines) -> dict:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        k, v = s.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(typ, raw, key):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return math.inf if raw.lower() in ("inf", "+inf") else float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_int_list(spec: str) -> list[int]:
    """``"1-5,10"`` -> ``[1, 2, 3, 4, 5, 10]``."""
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(-?\d+)-(-?\d+)", part)
        if m:
            out.extend(range(int(m.group(1)), int(m.group(2)) + 1))
        else:
            out.append(int(part))
    return out


def parse_float_list(spec: str) -> list[float]:
    return [float(p) for p in spec.split(",") if p.strip()]
