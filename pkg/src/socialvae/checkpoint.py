"""Checkpoint save/load on top of the SVAE record container."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .container import ContainerError, read_records, record_text, text_record, write_records
from .model import SocialVAE
from .nn import Adam


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    model: SocialVAE
    optimizer: Adam | None
    step: int


def save_checkpoint(path, model: SocialVAE, config: RunConfig,
                    optimizer: Adam | None = None, step: int = 0) -> None:
    records = {"config": text_record(config.to_text()), "step": np.int64(step)}
    for name, p in model.named_params():
        records[f"param/{name}"] = p.data
    if optimizer is not None:
        records["adam/t"] = np.int64(optimizer.t)
        for name, _ in optimizer.named:
            records[f"adam/m/{name}"] = optimizer.m[name]
            records[f"adam/v/{name}"] = optimizer.v[name]
    write_records(path, records)


def load_params(model: SocialVAE, records: dict) -> None:
    """Copy ``param/*`` records into ``model``; any name or shape mismatch is an error."""
    named = dict(model.named_params())
    stored = {k[len("param/"):]: v for k, v in records.items() if k.startswith("param/")}
    if set(stored) != set(named):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise CheckpointError(f"parameter names differ (missing {missing[:5]}, unexpected {extra[:5]})")
    for name, p in named.items():
        if stored[name].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {stored[name].shape}, model {p.data.shape}")
        p.data = stored[name].astype(p.dtype, copy=True)
        p.zero_grad()


def load_checkpoint(path, config: RunConfig | None = None) -> Checkpoint:
    """Rebuild model (and optimizer state if stored).

    With ``config`` given, the model is built from it and the stored
    parameters must fit; otherwise the stored config snapshot is used.
    """
    try:
        _, rec = read_records(path)
    except (ContainerError, OSError) as exc:
        raise CheckpointError(str(exc)) from None
    stored_cfg = RunConfig.from_text(record_text(rec["config"]))
    cfg = config or stored_cfg
    model = SocialVAE(cfg.model_config(), seed=cfg.seed)
    load_params(model, rec)
    opt = None
    if "adam/t" in rec:
        opt = Adam(model.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        opt.t = int(rec["adam/t"])
        for name, _ in opt.named:
            opt.m[name] = rec[f"adam/m/{name}"].copy()
            opt.v[name] = rec[f"adam/v/{name}"].copy()
    return Checkpoint(cfg, model, opt, int(rec["step"]))
