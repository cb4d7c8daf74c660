"""Synthetic pedestrian scenes for tests, demos and sanity runs.

Agents enter at random times, walk towards a goal at a preferred speed with a
slowly turning heading, and repel each other with an exponential social force.
"""
from __future__ import annotations

import math

import numpy as np

from .data import TrajectoryScene


def simulate_crowd(n_agents: int = 40, n_frames: int = 200, seed: int = 0,
                   frame_dt: float = 0.4, area: tuple = (20.0, 15.0),
                   speed: tuple = (1.0, 1.6), lifespan: tuple = (20, 60),
                   scene_id: str = "synthetic") -> TrajectoryScene:
    rng = np.random.default_rng(seed)
    W, Hgt = area
    substeps = 4
    dt = frame_dt / substeps
    start = rng.integers(0, max(1, n_frames - lifespan[0]), size=n_agents)
    life = rng.integers(lifespan[0], lifespan[1] + 1, size=n_agents)
    pos = np.column_stack([rng.uniform(0, W, n_agents), rng.uniform(0, Hgt, n_agents)])
    heading = rng.uniform(0, 2 * math.pi, n_agents)
    turn = rng.normal(0.0, 0.15, n_agents)   # rad/s
    pref = rng.uniform(*speed, n_agents)
    vel = pref[:, None] * np.column_stack([np.cos(heading), np.sin(heading)])

    tracks = {a: ([], []) for a in range(n_agents)}
    for f in range(n_frames):
        alive = (start <= f) & (f < start + life)
        for _ in range(substeps):
            heading += turn * dt
            desired = pref[:, None] * np.column_stack([np.cos(heading), np.sin(heading)])
            force = (desired - vel) / 0.5
            idx = np.flatnonzero(alive)
            if len(idx) > 1:
                diff = pos[idx, None, :] - pos[None, idx, :]
                dist = np.linalg.norm(diff, axis=-1) + np.eye(len(idx))
                mag = 2.0 * np.exp(-(dist - 0.4) / 0.3)
                np.fill_diagonal(mag, 0.0)
                force[idx] += (mag[..., None] * diff / dist[..., None]).sum(axis=1)
            vel += force * dt
            pos += vel * dt * alive[:, None]
        for a in np.flatnonzero(alive):
            tracks[a][0].append(f)
            tracks[a][1].append(pos[a].copy())
    tracks = {int(a): (np.asarray(fr), np.asarray(p)) for a, (fr, p) in tracks.items() if fr}
    return TrajectoryScene.from_tracks(scene_id, frame_dt, tracks)


def write_scene(scene: TrajectoryScene, path) -> None:
    """Write ``frame id x y`` rows sorted by frame then agent."""
    rows = []
    for a, (idx, p) in scene.tracks.items():
        for i, (x, y) in zip(idx, p):
            rows.append((scene.frames[i], a, x / scene.unit_scale, y / scene.unit_scale))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w") as fh:
        for fr, a, x, y in rows:
            fh.write(f"{fr}\t{a}\t{x:.6f}\t{y:.6f}\n")
