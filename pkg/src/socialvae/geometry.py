"""Geometric quantities that feed the observation encoder.

All functions accept numpy arrays whose trailing axis holds (x, y) and
broadcast over any leading axes.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

# bearing cosine used when the observing agent has not moved
STATIONARY_BEARING_COS = 1.0
DEFAULT_MPD_HORIZON = 7.0


class SocialFeatures(NamedTuple):
    distance: np.ndarray
    bearing_cos: np.ndarray
    mpd: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.distance, self.bearing_cos, self.mpd], axis=-1)


def displacements(positions) -> np.ndarray:
    """Per-frame differences ``x[t+1] - x[t]`` along the first axis."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim < 2 or positions.shape[0] < 2:
        raise ValueError("displacements need at least 2 positions")
    return np.diff(positions, axis=0)


def self_state(d_t, d_prev) -> np.ndarray:
    """Velocity and acceleration, ``[d_t, d_t - d_prev]``."""
    d_t = np.asarray(d_t, dtype=float)
    return np.concatenate([d_t, d_t - np.asarray(d_prev, dtype=float)], axis=-1)


def neighbor_state(target_pos, target_disp, nb_pos, nb_disp) -> np.ndarray:
    """Neighbour position and displacement relative to the target."""
    rel_p = np.asarray(nb_pos, dtype=float) - np.asarray(target_pos, dtype=float)
    rel_v = np.asarray(nb_disp, dtype=float) - np.asarray(target_disp, dtype=float)
    return np.concatenate([rel_p, rel_v], axis=-1)


def social_features(rel_position, rel_velocity, target_disp, frame_dt: float,
                    horizon: float = DEFAULT_MPD_HORIZON) -> SocialFeatures:
    """Distance, bearing cosine and minimal predicted distance to a neighbour.

    ``rel_velocity`` is the relative displacement per frame; it is divided by
    ``frame_dt`` to get a per-second velocity. The time of closest approach is
    clamped to ``[0, horizon]`` so diverging pairs report their current
    distance.
    """
    if frame_dt <= 0 or horizon <= 0:
        raise ValueError("frame_dt and horizon must be positive")
    p = np.asarray(rel_position, dtype=float)
    v = np.asarray(rel_velocity, dtype=float) / frame_dt
    d = np.asarray(target_disp, dtype=float)
    p, v, d = np.broadcast_arrays(p, v, d)

    dist = np.linalg.norm(p, axis=-1)
    d_norm = np.linalg.norm(d, axis=-1)
    denom = dist * d_norm
    dot_pd = np.sum(p * d, axis=-1)
    cos = np.divide(dot_pd, denom, out=np.full_like(dist, STATIONARY_BEARING_COS),
                    where=denom > 0)
    cos = np.clip(cos, -1.0, 1.0)

    v2 = np.sum(v * v, axis=-1)
    tau = np.divide(-np.sum(p * v, axis=-1), v2, out=np.zeros_like(v2), where=v2 > 0)
    tau = np.clip(tau, 0.0, horizon)
    mpd = np.linalg.norm(p + tau[..., None] * v, axis=-1)
    mpd = np.minimum(mpd, dist)
    return SocialFeatures(dist, cos, mpd)


def neighborhood(scene, agent, t, radius: float) -> set:
    """Ids of agents other than ``agent`` strictly within ``radius`` at frame ``t``."""
    here = scene.positions_at(t)
    if agent not in here:
        raise ValueError(f"agent {agent!r} is not present at frame {t!r}")
    origin = here[agent]
    out = set()
    for other, pos in here.items():
        if other == agent:
            continue
        if np.hypot(*(pos - origin)) < radius:
            out.add(other)
    return out
