"""Training, evaluation and export routines behind the command-line tool."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_float_list, parse_int_list
from .container import load_windows, save_windows
from .data import (AugmentationConfig, ObservationWindow, augment, collate, make_windows,
                   parse_trajectory_file)
from .fpc import predict_with_fpc
from .model import SocialVAE, predict, training_loss
from .nn import Adam, TrainingError

log = logging.getLogger(__name__)

# keeps NLL rollouts for one chunk at roughly this many trajectories
_NLL_CHUNK = 8192


def load_scene_windows(cfg: RunConfig, key: str) -> dict:
    """``{scene_id: windows}`` for the files listed under ``key`` (train_files/test_files)."""
    paths = cfg.file_list(key)
    if key == "train_files" and cfg.window_cache and Path(cfg.window_cache).exists():
        out: dict = {}
        for w in load_windows(cfg.window_cache):
            out.setdefault(w.scene_id, []).append(w)
        return out
    cols = tuple(c.strip() for c in cfg.column_order.split(","))
    out = {}
    for p in paths:
        scene = parse_trajectory_file(p, cols, cfg.delimiter or None, cfg.unit_scale,
                                      cfg.effective_frame_dt)
        out[scene.scene_id] = make_windows(scene, cfg.obs_len, cfg.pred_len, cfg.stride,
                                           cfg.effective_radius)
    if key == "train_files" and cfg.window_cache:
        all_w = [w for ws in out.values() for w in ws]
        if all_w:
            save_windows(cfg.window_cache, all_w)
    return out


def _limit(windows: list, cfg: RunConfig) -> list:
    return windows[:cfg.max_windows] if cfg.max_windows > 0 else windows


# training -------------------------------------------------------------------

def batch_indices(n: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Indices for ``step`` from a stream of per-epoch permutations (resumable)."""
    B = min(batch_size, n)
    start = step * B
    out = []
    while len(out) < B:
        epoch, off = divmod(start + len(out), n)
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        take = min(B - len(out), n - off)
        out.extend(perm[off:off + take])
    return np.asarray(out)


@dataclass
class TrainResult:
    model: SocialVAE
    optimizer: Adam
    step: int
    history: list   # (step, loss, recon, kl)


def train(cfg: RunConfig, windows: list, out_dir=None, resume=None,
          model: SocialVAE | None = None,
          callback: Callable[[int, float, float, float], bool | None] | None = None) -> TrainResult:
    """Mini-batch Adam on the training loss.

    Batches, augmentation and sampling noise are all derived from
    ``(seed, step)``, so a resumed run reproduces the uninterrupted one.
    ``callback(step, loss, recon, kl)`` may return True to stop early.
    """
    if not windows:
        raise ValueError("training set is empty")
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume, cfg)
        model, opt, start = ck.model, ck.optimizer, ck.step
        if opt is None:
            opt = Adam(model.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        model = model or SocialVAE(cfg.model_config(), seed=cfg.seed)
        opt = Adam(model.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    aug_cfg = AugmentationConfig(cfg.augment_flip, cfg.augment_rotation, cfg.seed)
    out = Path(out_dir) if out_dir else None
    loss_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        loss_path = out / "loss.csv"
        fresh = resume is None or not loss_path.exists()
        loss_fh = open(loss_path, "w" if fresh else "a", newline="")
        if fresh:
            loss_fh.write("step,loss,recon,kl\n")
    history = []
    try:
        for step in range(start, cfg.steps):
            idx = batch_indices(len(windows), cfg.batch_size, step, cfg.seed)
            aug_rng = np.random.default_rng([cfg.seed, step, 1])
            batch = collate([augment(windows[i], aug_cfg, aug_rng) for i in idx])
            try:
                terms = training_loss(model, batch, np.random.default_rng([cfg.seed, step, 2]))
                terms.loss.backward()
                opt.step()
            except TrainingError as exc:
                raise TrainingError(f"step {step + 1}: {exc}") from None
            row = (step + 1, float(terms.loss.data), terms.recon, terms.kl)
            history.append(row)
            if loss_fh is not None:
                loss_fh.write("%d,%.9g,%.9g,%.9g\n" % row)
            if out is not None and cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{step + 1:07d}.svae", model, cfg, opt, step + 1)
            if callback is not None and callback(*row):
                break
    finally:
        if loss_fh is not None:
            loss_fh.close()
    final = history[-1][0] if history else max(start, cfg.steps)
    if out is not None:
        save_checkpoint(out / "last.svae", model, cfg, opt, final)
    return TrainResult(model, opt, final, history)


# evaluation -----------------------------------------------------------------

def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield i // size, seq[i:i + size]


def sample_best_of(model: SocialVAE, windows: list, cfg: RunConfig, rate: int,
                   seed_key: tuple = ()) -> tuple[np.ndarray, np.ndarray]:
    """Per-window best-of-K ADE and FDE with FPC at ``rate`` (1 = none)."""
    ades, fdes = [], []
    for c, chunk in _chunks(windows, cfg.eval_batch):
        batch = collate(chunk)
        rng = np.random.default_rng([cfg.seed, *seed_key, c])
        pos, _ = predict_with_fpc(model, batch, cfg.k, rate, rng, cfg.fpc_seed,
                                  mean_only=cfg.decode_mode == "mean")
        a, f = metrics.best_of_k_batch(pos, batch.positions[:, batch.obs_len:], cfg.best_of_mode)
        ades.append(a)
        fdes.append(f)
    return np.concatenate(ades), np.concatenate(fdes)


def window_nll(model: SocialVAE, windows: list, cfg: RunConfig,
               seed_key: tuple = ()) -> tuple[np.ndarray, np.ndarray]:
    """Per-window mean and total per-step KDE NLL from ``cfg.nll_samples`` rollouts."""
    per_chunk = max(1, _NLL_CHUNK // max(cfg.nll_samples, 1))
    means, totals = [], []
    for c, chunk in _chunks(windows, per_chunk):
        batch = collate(chunk)
        rng = np.random.default_rng([cfg.seed, *seed_key, c, 7])
        sample, _ = predict(model, batch, cfg.nll_samples, rng,
                            mean_only=cfg.decode_mode == "mean")
        gt = batch.positions[:, batch.obs_len:]
        for b in range(len(chunk)):
            r = metrics.nll_kde(sample.positions[b], gt[b])
            means.append(r.mean)
            totals.append(r.total)
    return np.asarray(means), np.asarray(totals)


def evaluate(cfg: RunConfig, model: SocialVAE, scenes: dict) -> dict:
    """Reports keyed ``vanilla`` (no FPC) and ``fpc`` (rate ``cfg.fpc_rate``)."""
    vanilla, fpc = {}, {}
    for s_idx, (scene, windows) in enumerate(sorted(scenes.items())):
        windows = _limit(windows, cfg)
        if not windows:
            continue
        a0, f0 = sample_best_of(model, windows, cfg, 1, (s_idx,))
        a1, f1 = sample_best_of(model, windows, cfg, cfg.fpc_rate, (s_idx,))
        nll_m, nll_t = (window_nll(model, windows, cfg, (s_idx,))
                        if cfg.nll_samples >= 2 else ([], []))
        vanilla[scene] = {"ade": list(a0), "fde": list(f0), "nll": list(nll_m), "nll_total": list(nll_t)}
        fpc[scene] = {"ade": list(a1), "fde": list(f1)}
    return {"vanilla": metrics.aggregate(vanilla, "socialvae"),
            "fpc": metrics.aggregate(fpc, f"socialvae+fpc@{cfg.fpc_rate}")}


def baseline(cfg: RunConfig, scenes: dict) -> metrics.MetricReport:
    per = {}
    for scene, windows in sorted(scenes.items()):
        windows = _limit(windows, cfg)
        if not windows:
            continue
        ades, fdes = [], []
        for w in windows:
            pred = metrics.linear_baseline(w.obs_positions, w.pred_len, cfg.baseline_velocity)
            ades.append(metrics.ade(pred, w.fut_positions))
            fdes.append(metrics.fde(pred, w.fut_positions))
        per[scene] = {"ade": ades, "fde": fdes}
    return metrics.aggregate(per, f"linear-{cfg.baseline_velocity}")


def fpc_sweep(cfg: RunConfig, model: SocialVAE, windows: list, rates=None) -> list[dict]:
    """Mean best-of-K ADE/FDE per sampling rate, also normalised by the rate-1 values."""
    rates = rates or parse_int_list(cfg.sweep_rates)
    windows = _limit(windows, cfg)
    rows = []
    base = None
    for rate in sorted(set([1, *rates])):
        a, f = sample_best_of(model, windows, cfg, rate)
        row = {"rate": rate, "ade": float(a.mean()), "fde": float(f.mean())}
        if base is None:
            base = row
        row["ade_norm"] = row["ade"] / base["ade"] if base["ade"] > 0 else math.nan
        row["fde_norm"] = row["fde"] / base["fde"] if base["fde"] > 0 else math.nan
        if rate in rates:
            rows.append(row)
    return rows


# exports ----------------------------------------------------------------------

def write_report(report: metrics.MetricReport, out_dir, stem: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    (out / f"{stem}.csv").write_text(report.to_csv())


def heatmap_grid(points: np.ndarray, bins: int = 128, pad: float = 0.1):
    """2D histogram over the padded bounding box of ``points`` (n, 2)."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    lo = lo - pad * span
    hi = hi + pad * span
    grid, xe, ye = np.histogram2d(points[:, 0], points[:, 1], bins=bins,
                                  range=[[lo[0], hi[0]], [lo[1], hi[1]]])
    return grid, xe, ye


def export_predictions(cfg: RunConfig, model: SocialVAE, windows: list, out_dir) -> None:
    """Write samples.csv, heatmaps/<window>.csv and attention.jsonl."""
    out = Path(out_dir)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    windows = _limit(windows, cfg)
    with open(out / "samples.csv", "w", newline="") as sf, open(out / "attention.jsonl", "w") as af:
        sw = csv.writer(sf)
        sw.writerow(["window_id", "sample_id", "t", "x", "y"])
        wid = 0
        for c, chunk in _chunks(windows, cfg.eval_batch):
            batch = collate(chunk)
            rng = np.random.default_rng([cfg.seed, c])
            pos, _ = predict_with_fpc(model, batch, cfg.k, cfg.fpc_rate, rng, cfg.fpc_seed,
                                      mean_only=cfg.decode_mode == "mean")
            heat, enc = predict(model, batch, max(cfg.nll_samples, 2), np.random.default_rng([cfg.seed, c, 3]),
                                mean_only=cfg.decode_mode == "mean")
            T = batch.obs_len
            for b, w in enumerate(chunk):
                for k in range(pos.shape[1]):
                    for t in range(pos.shape[2]):
                        sw.writerow([wid, k, T + t + 1, f"{pos[b, k, t, 0]:.6f}", f"{pos[b, k, t, 1]:.6f}"])
                grid, xe, ye = heatmap_grid(heat.positions[b].reshape(-1, 2), cfg.heatmap_bins, cfg.heatmap_pad)
                with open(out / "heatmaps" / f"{wid}.csv", "w") as hf:
                    hf.write(f"# x_min={xe[0]:.6f} x_max={xe[-1]:.6f} y_min={ye[0]:.6f} y_max={ye[-1]:.6f}"
                             f" rows=x cols=y samples={heat.positions.shape[1]}\n")
                    np.savetxt(hf, grid, fmt="%d", delimiter=",")
                n = len(w.nb_ids)
                for t in range(1, T):
                    for j in np.flatnonzero(w.nb_mask[t, :n]):
                        af.write(json.dumps({"window": wid, "frame": t + 1,
                                             "neighbor": _plain(w.nb_ids[j]),
                                             "weight": float(enc.attention[b, t, j])}) + "\n")
                wid += 1


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def synthetic_observation(speed: float, turn_deg: float, obs_len: int = 8,
                          turn_frame: int = 5, frame_dt: float = 0.4) -> ObservationWindow:
    """Straight walk at ``speed`` per frame that turns by ``turn_deg`` at ``turn_frame``."""
    pos = [np.zeros(2)]
    heading = 0.0
    for f in range(2, obs_len + 1):
        if f == turn_frame + 1:
            heading = math.radians(turn_deg)
        pos.append(pos[-1] + speed * np.array([math.cos(heading), math.sin(heading)]))
    pos = np.asarray(pos)
    L = len(pos)
    return ObservationWindow("synthetic", "latent", 0, pos, np.zeros(0, dtype=object),
                             np.zeros((L, 0, 2)), np.zeros((L, 0, 2)), np.zeros((L, 0), dtype=bool),
                             obs_len=obs_len, frame_dt=frame_dt)


def latent_dump(cfg: RunConfig, model: SocialVAE, out_path) -> int:
    """Prior samples of the first latent for a speed x turn grid of synthetic observations."""
    speeds = parse_float_list(cfg.latent_speeds)
    turns = parse_float_list(cfg.latent_turns)
    rng = np.random.default_rng(cfg.seed)
    rows = 0
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["observation", "speed", "turn_deg", "sample"] +
                   [f"z{i}" for i in range(cfg.latent_dim)])
        obs_id = 0
        for sp in speeds:
            for turn in turns:
                win = synthetic_observation(sp, turn, cfg.obs_len, frame_dt=cfg.effective_frame_dt)
                sample, _ = predict(model, win, cfg.latent_samples, rng, n_steps=1)
                for s, z in enumerate(sample.latents[0, :, 0]):
                    w.writerow([obs_id, sp, turn, s] + [f"{v:.7g}" for v in z])
                    rows += 1
                obs_id += 1
    return rows
