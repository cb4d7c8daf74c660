"""ADE/FDE, best-of-K, KDE negative log-likelihood and the constant-velocity baseline."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

MIN_BANDWIDTH = 1e-6


def _check(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return pred, gt


def ade(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def best_of_k(preds, gt, mode: str = "independent") -> tuple[float, float]:
    """Best ADE and FDE over K samples shaped (K, H, 2).

    ``independent`` minimises each metric on its own; ``joint`` reports the
    FDE of the ADE-best sample.
    """
    preds, gt = _check(preds, gt)
    if preds.ndim != 3 or len(preds) == 0:
        raise ValueError("best_of_k needs a non-empty (K, H, 2) array")
    err = np.linalg.norm(preds - gt, axis=-1)
    ades = err.mean(axis=1)
    fdes = err[:, -1]
    if mode == "independent":
        return float(ades.min()), float(fdes.min())
    if mode == "joint":
        i = int(ades.argmin())
        return float(ades[i]), float(fdes[i])
    raise ValueError(f"unknown best_of_k mode {mode!r}")


def best_of_k_batch(preds, gt, mode: str = "independent") -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``best_of_k`` over windows: preds (B, K, H, 2), gt (B, H, 2)."""
    preds, gt = _check(preds, gt)
    err = np.linalg.norm(preds - gt[:, None], axis=-1)
    ades = err.mean(axis=2)
    fdes = err[..., -1]
    if mode == "independent":
        return ades.min(axis=1), fdes.min(axis=1)
    if mode == "joint":
        i = ades.argmin(axis=1)
        r = np.arange(len(i))
        return ades[r, i], fdes[r, i]
    raise ValueError(f"unknown best_of_k mode {mode!r}")


@dataclass
class NLLResult:
    per_step: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.per_step.mean())

    @property
    def total(self) -> float:
        return float(self.per_step.sum())


def kde_log_density(samples, point) -> float:
    """Log of a 2D Gaussian KDE with diagonal Scott bandwidths, evaluated at ``point``."""
    x = np.asarray(samples, dtype=float)
    n, dim = x.shape
    if n < 2:
        raise ValueError("KDE needs at least 2 samples")
    bw = np.maximum(x.std(axis=0, ddof=1) * n ** (-1.0 / (dim + 4)), MIN_BANDWIDTH)
    z = (np.asarray(point, dtype=float) - x) / bw
    log_k = -0.5 * (z * z).sum(axis=1) - np.log(bw).sum() - 0.5 * dim * math.log(2 * math.pi)
    return float(logsumexp(log_k) - math.log(n))


def nll_kde(samples, gt) -> NLLResult:
    """Per-step NLL of ground truth under independent per-step KDEs.

    ``samples`` is (S, H, 2); the joint density is the product over steps, so
    the total NLL is the sum of the per-step values.
    """
    samples, gt = _check(samples, gt)
    per = np.array([-kde_log_density(samples[:, t], gt[t]) for t in range(gt.shape[0])])
    return NLLResult(per)


def linear_baseline(obs_positions, pred_len: int = 12, mode: str = "mean") -> np.ndarray:
    """Constant-velocity extrapolation from the last observed position.

    ``mean`` uses the average observed displacement, ``last`` the final one.
    """
    obs = np.asarray(getattr(obs_positions, "obs_positions", obs_positions), dtype=float)
    if len(obs) < 2:
        raise ValueError("linear baseline needs at least 2 observed positions")
    d = np.diff(obs, axis=0)
    if mode == "mean":
        v = d.mean(axis=0)
    elif mode == "last":
        v = d[-1]
    else:
        raise ValueError(f"unknown velocity mode {mode!r}")
    steps = np.arange(1, pred_len + 1)[:, None]
    return obs[-1] + steps * v


@dataclass
class MetricReport:
    ade: float
    fde: float
    nll: float | None = None
    nll_total: float | None = None
    count: int = 0
    per_scene: dict = field(default_factory=dict)
    label: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "ade": self.ade, "fde": self.fde, "nll": self.nll,
                "nll_total": self.nll_total, "count": self.count, "per_scene": self.per_scene}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["scene", "count", "ade", "fde", "nll"])
        for scene, row in sorted(self.per_scene.items()):
            w.writerow([scene, row["count"], row["ade"], row["fde"], row.get("nll")])
        w.writerow(["ALL", self.count, self.ade, self.fde, self.nll])
        return buf.getvalue()


def aggregate(per_window: dict, label: str = "") -> MetricReport:
    """Build a report from ``{scene: {"ade": [...], "fde": [...], "nll": [...]}}`` lists.

    The aggregate is the mean over all windows (not over scenes).
    """
    per_scene = {}
    all_ade, all_fde, all_nll, all_nll_tot = [], [], [], []
    for scene, vals in per_window.items():
        n = len(vals["ade"])
        row = {"count": n, "ade": float(np.mean(vals["ade"])), "fde": float(np.mean(vals["fde"]))}
        if vals.get("nll"):
            row["nll"] = float(np.mean(vals["nll"]))
            all_nll.extend(vals["nll"])
            all_nll_tot.extend(vals.get("nll_total", []))
        per_scene[scene] = row
        all_ade.extend(vals["ade"])
        all_fde.extend(vals["fde"])
    return MetricReport(
        ade=float(np.mean(all_ade)) if all_ade else math.nan,
        fde=float(np.mean(all_fde)) if all_fde else math.nan,
        nll=float(np.mean(all_nll)) if all_nll else None,
        nll_total=float(np.mean(all_nll_tot)) if all_nll_tot else None,
        count=len(all_ade), per_scene=per_scene, label=label)
