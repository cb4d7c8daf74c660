"""Trajectory files, observation windows, augmentation and splits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

OBS_LEN = 8
PRED_LEN = 12

# frame interval (s) and neighbourhood radius (working units) per dataset family
DATASET_PRESETS = {
    "eth_ucy": {"frame_dt": 0.4, "radius": 8.0, "unit_scale": 1.0},
    "sdd": {"frame_dt": 0.4, "radius": 8.0, "unit_scale": 1.0},
    "nba": {"frame_dt": 0.12, "radius": math.inf, "unit_scale": 1.0},
}

DEFAULT_COLUMNS = ("frame", "id", "x", "y")


class ParseError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class TrajectoryScene:
    """All agent tracks of one recording.

    ``frames`` holds the sorted unique frame ids; ``tracks`` maps each agent
    id to ``(frame_indices, positions)`` where the indices point into
    ``frames``.
    """

    scene_id: str
    frame_dt: float
    unit_scale: float = 1.0
    frames: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tracks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_dt <= 0:
            raise DataError("frame_dt must be positive")
        if len(self.frames) > 1 and np.any(np.diff(self.frames) <= 0):
            raise DataError("frame ids must be strictly increasing")

    @property
    def agents(self) -> list:
        return list(self.tracks)

    def dense(self) -> tuple[list, np.ndarray]:
        """``(agent_ids, positions)`` with positions shaped (frames, agents, 2), NaN when absent."""
        ids = list(self.tracks)
        out = np.full((len(self.frames), len(ids), 2), np.nan)
        for k, a in enumerate(ids):
            idx, pos = self.tracks[a]
            out[idx, k] = pos
        return ids, out

    def positions_at(self, frame) -> dict:
        i = np.searchsorted(self.frames, frame)
        if i >= len(self.frames) or self.frames[i] != frame:
            return {}
        out = {}
        for a, (idx, pos) in self.tracks.items():
            j = np.searchsorted(idx, i)
            if j < len(idx) and idx[j] == i:
                out[a] = pos[j]
        return out

    @classmethod
    def from_tracks(cls, scene_id: str, frame_dt: float, tracks: dict, unit_scale: float = 1.0):
        """Build from ``{agent: (frame_ids, positions)}``."""
        all_frames = np.unique(np.concatenate([np.asarray(f) for f, _ in tracks.values()])) \
            if tracks else np.zeros(0)
        packed = {}
        for a, (f, pos) in tracks.items():
            f = np.asarray(f)
            order = np.argsort(f, kind="stable")
            f = f[order]
            if len(f) > 1 and np.any(np.diff(f) <= 0):
                raise DataError(f"agent {a!r} has repeated frame ids")
            packed[a] = (np.searchsorted(all_frames, f), np.asarray(pos, dtype=float)[order])
        return cls(scene_id, frame_dt, unit_scale, all_frames, packed)


def _number(tok: str):
    v = float(tok)
    return int(v) if v.is_integer() else v


def parse_trajectory_file(path, column_order: Sequence[str] = DEFAULT_COLUMNS,
                          delimiter: str | None = None, unit_scale: float = 1.0,
                          frame_dt: float = 0.4, scene_id: str | None = None) -> TrajectoryScene:
    """Read a ``frame id x y`` text file (any whitespace by default).

    Blank lines and lines starting with ``#`` are skipped. Positions are
    multiplied by ``unit_scale``.
    """
    cols = {name: k for k, name in enumerate(column_order)}
    missing = {"frame", "id", "x", "y"} - set(cols)
    if missing:
        raise ValueError(f"column_order lacks {sorted(missing)}")
    need = max(cols.values()) + 1
    rows: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split(delimiter)
            if len(parts) < max(need, 4):
                raise ParseError(f"{path}: line {lineno}: expected at least {max(need, 4)} fields, "
                                 f"got {len(parts)}")
            try:
                frame = _number(parts[cols["frame"]])
                agent = _number(parts[cols["id"]])
                x = float(parts[cols["x"]]) * unit_scale
                y = float(parts[cols["y"]]) * unit_scale
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            rows.setdefault(agent, ([], []))
            rows[agent][0].append(frame)
            rows[agent][1].append((x, y))
    tracks = {a: (np.asarray(f), np.asarray(p, dtype=float).reshape(-1, 2)) for a, (f, p) in rows.items()}
    try:
        return TrajectoryScene.from_tracks(scene_id or Path(path).stem, frame_dt, tracks, unit_scale)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


@dataclass
class ObservationWindow:
    """One target agent over ``T + H`` frames with its per-frame neighbours.

    Neighbour arrays are padded over every agent that is a neighbour in at
    least one frame; ``nb_mask[t, n]`` marks true membership at frame ``t``.
    ``nb_disp`` is the neighbour's displacement into frame ``t`` (zero when it
    was not tracked in the previous scene frame).
    """

    target_id: object
    scene_id: str
    start_frame: object
    positions: np.ndarray          # (T+H, 2)
    nb_ids: np.ndarray             # (N,)
    nb_pos: np.ndarray             # (T+H, N, 2)
    nb_disp: np.ndarray            # (T+H, N, 2)
    nb_mask: np.ndarray            # (T+H, N) bool
    obs_len: int = OBS_LEN
    frame_dt: float = 0.4

    @property
    def pred_len(self) -> int:
        return len(self.positions) - self.obs_len

    @property
    def obs_positions(self) -> np.ndarray:
        return self.positions[:self.obs_len]

    @property
    def fut_positions(self) -> np.ndarray:
        return self.positions[self.obs_len:]

    def target_displacements(self) -> np.ndarray:
        """(T+H, 2); row 0 is zero since the frame before the window is unknown."""
        d = np.zeros_like(self.positions)
        d[1:] = np.diff(self.positions, axis=0)
        return d

    def neighbor_states(self, t: int) -> np.ndarray:
        """(n_t, 4) relative states of the neighbours present at window frame ``t``."""
        m = self.nb_mask[t]
        d = self.target_displacements()[t]
        return np.concatenate([self.nb_pos[t, m] - self.positions[t], self.nb_disp[t, m] - d], axis=-1)


def make_windows(scene: TrajectoryScene, obs_len: int = OBS_LEN, pred_len: int = PRED_LEN,
                 stride: int = 1, radius: float = 8.0) -> list[ObservationWindow]:
    """Every window where a target is tracked over ``obs_len + pred_len`` consecutive frames."""
    if obs_len < 2 or pred_len < 1 or stride < 1:
        raise ValueError("need obs_len >= 2, pred_len >= 1, stride >= 1")
    L = obs_len + pred_len
    ids, pos = scene.dense()
    n_frames = len(scene.frames)
    if n_frames < L or not ids:
        return []
    present = ~np.isnan(pos[..., 0])
    disp = np.zeros_like(pos)
    disp[1:] = pos[1:] - pos[:-1]
    both = np.zeros_like(present)
    both[1:] = present[1:] & present[:-1]
    disp[~both] = 0.0
    ids_arr = np.asarray(ids, dtype=object)

    windows = []
    for s in range(0, n_frames - L + 1, stride):
        seg_present = present[s:s + L]
        full = np.flatnonzero(seg_present.all(axis=0))
        if len(full) == 0:
            continue
        seg_pos = pos[s:s + L]
        seg_disp = disp[s:s + L]
        for a in full:
            rel = seg_pos - seg_pos[:, a:a + 1]
            with np.errstate(invalid="ignore"):
                dist = np.hypot(rel[..., 0], rel[..., 1])
            near = seg_present & (dist < radius)
            near[:, a] = False
            cols = np.flatnonzero(near.any(axis=0))
            windows.append(ObservationWindow(
                target_id=ids[a],
                scene_id=scene.scene_id,
                start_frame=scene.frames[s].item(),
                positions=seg_pos[:, a].copy(),
                nb_ids=ids_arr[cols],
                nb_pos=np.where(near[:, cols, None], seg_pos[:, cols], 0.0),
                nb_disp=np.where(near[:, cols, None], seg_disp[:, cols], 0.0),
                nb_mask=near[:, cols].copy(),
                obs_len=obs_len,
                frame_dt=scene.frame_dt,
            ))
    return windows


@dataclass
class AugmentationConfig:
    enable_flip: bool = True
    enable_rotation: bool = True
    rng_seed: int = 0


def transform_window(window: ObservationWindow, matrix: np.ndarray,
                     center: np.ndarray | None = None) -> ObservationWindow:
    """Apply ``x -> (x - c) @ M.T + c`` to positions and ``d -> d @ M.T`` to displacements."""
    if center is None:
        center = window.positions[window.obs_len - 1]
    M = np.asarray(matrix, dtype=float)
    pos = (window.positions - center) @ M.T + center
    nb_pos = np.where(window.nb_mask[..., None], (window.nb_pos - center) @ M.T + center, 0.0)
    nb_disp = window.nb_disp @ M.T
    return replace(window, positions=pos, nb_pos=nb_pos, nb_disp=nb_disp)


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def augment(window: ObservationWindow, config: AugmentationConfig,
            rng: np.random.Generator) -> ObservationWindow:
    """Random mirror in x and/or y, then random rotation, about the last observed position."""
    if not (config.enable_flip or config.enable_rotation):
        return window
    M = np.eye(2)
    if config.enable_flip:
        fx, fy = rng.random(2) < 0.5
        M = np.diag([-1.0 if fx else 1.0, -1.0 if fy else 1.0])
    if config.enable_rotation:
        M = rotation_matrix(rng.uniform(0.0, 2.0 * math.pi)) @ M
    return transform_window(window, M)


@dataclass
class SplitSpec:
    train: list
    test: list
    mode: str = "fixed"

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"train and test overlap: {sorted(map(str, overlap))}")


def build_split(scenes: Sequence, mode: str = "leave-one-out",
                train: Sequence | None = None, test: Sequence | None = None) -> list[SplitSpec]:
    """Leave-one-out yields one split per held-out scene; ``fixed`` passes lists through."""
    names = [getattr(s, "scene_id", s) for s in scenes]
    if mode == "leave-one-out":
        if len(names) < 2:
            raise ValueError("leave-one-out needs at least 2 scenes")
        return [SplitSpec([n for n in names if n != held], [held], mode) for held in names]
    if mode == "fixed":
        if train is None or test is None:
            raise ValueError("fixed mode needs explicit train and test lists")
        return [SplitSpec(list(train), list(test), mode)]
    raise ValueError(f"unknown split mode {mode!r}")


@dataclass
class Batch:
    """Padded arrays for a list of windows (B windows, L = T + H frames, N neighbours)."""

    positions: np.ndarray   # (B, L, 2)
    nb_pos: np.ndarray      # (B, L, N, 2)
    nb_disp: np.ndarray     # (B, L, N, 2)
    nb_mask: np.ndarray     # (B, L, N)
    frame_dt: np.ndarray    # (B,)
    obs_len: int

    def __len__(self):
        return len(self.positions)

    @property
    def pred_len(self) -> int:
        return self.positions.shape[1] - self.obs_len

    def repeat(self, k: int) -> "Batch":
        """Each window repeated ``k`` times consecutively (for sampling)."""
        return Batch(*(np.repeat(a, k, axis=0) for a in
                       (self.positions, self.nb_pos, self.nb_disp, self.nb_mask, self.frame_dt)),
                     obs_len=self.obs_len)

    def observed(self) -> "Batch":
        L = self.obs_len
        return Batch(self.positions[:, :L], self.nb_pos[:, :L], self.nb_disp[:, :L],
                     self.nb_mask[:, :L], self.frame_dt, L)


def collate(windows: Sequence[ObservationWindow]) -> Batch:
    if not windows:
        raise ValueError("cannot collate an empty window list")
    obs_len = windows[0].obs_len
    L = len(windows[0].positions)
    if any(w.obs_len != obs_len or len(w.positions) != L for w in windows):
        raise ValueError("windows disagree on observation/prediction lengths")
    B = len(windows)
    N = max(1, max(len(w.nb_ids) for w in windows))
    nb_pos = np.zeros((B, L, N, 2))
    nb_disp = np.zeros((B, L, N, 2))
    nb_mask = np.zeros((B, L, N), dtype=bool)
    for b, w in enumerate(windows):
        n = len(w.nb_ids)
        nb_pos[b, :, :n] = w.nb_pos
        nb_disp[b, :, :n] = w.nb_disp
        nb_mask[b, :, :n] = w.nb_mask
    return Batch(np.stack([w.positions for w in windows]), nb_pos, nb_disp, nb_mask,
                 np.array([w.frame_dt for w in windows], dtype=float), obs_len)
