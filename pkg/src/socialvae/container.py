"""Binary record container shared by checkpoints and window caches.

Layout: ``b"SVAE"``, format version (u32), then records until EOF. Each
record is name length (u32), UTF-8 name, dtype tag (u8), rank (u32), dims
(u64 each) and the little-endian raw values.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SVAE"
FORMAT_VERSION = 1

_TAGS = {0: "<f4", 1: "<f8", 2: "<i8", 3: "u1", 4: "?"}


class ContainerError(ValueError):
    pass


def _tag(arr: np.ndarray) -> int:
    for code, name in _TAGS.items():
        if arr.dtype.newbyteorder("<") == np.dtype(name):
            return code
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def write_records(path, records: dict) -> None:
    """Write ``{name: array}`` in insertion order; ``bytes`` values are stored as u8 arrays."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name, value in records.items():
            if isinstance(value, (bytes, bytearray)):
                value = np.frombuffer(bytes(value), dtype=np.uint8)
            arr = np.asarray(value)
            tag = _tag(arr)
            raw = np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes()
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BI", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(raw)


def read_records(path) -> tuple[int, dict]:
    """Return ``(format_version, {name: array})``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: not an SVAE container")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    off = 8
    out = {}
    while off < len(data):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode("utf-8")
        off += n
        tag, rank = struct.unpack_from("<BI", data, off)
        off += 5
        dims = struct.unpack_from(f"<{rank}Q", data, off)
        off += 8 * rank
        dt = np.dtype(_TAGS[tag])
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(data, dtype=dt, count=size // dt.itemsize, offset=off).reshape(dims).copy()
        off += size
    return version, out


def text_record(text: str) -> bytes:
    return text.encode("utf-8")


def record_text(arr: np.ndarray) -> str:
    return arr.tobytes().decode("utf-8")


# window cache -------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def save_windows(path, windows) -> None:
    from .data import collate
    if not windows:
        raise ContainerError("refusing to cache an empty window list")
    batch = collate(windows)
    n_max = batch.nb_mask.shape[2]
    ids = np.full((len(windows), n_max), np.nan)
    for b, w in enumerate(windows):
        ids[b, :len(w.nb_ids)] = np.asarray(w.nb_ids, dtype=float)
    meta = {
        "target_id": [w.target_id for w in windows],
        "scene_id": [w.scene_id for w in windows],
        "start_frame": [w.start_frame for w in windows],
        "n_neighbors": [len(w.nb_ids) for w in windows],
        "obs_len": windows[0].obs_len,
    }
    write_records(path, {
        "windows/meta": text_record(json.dumps(meta, sort_keys=True, default=_plain)),
        "windows/positions": batch.positions,
        "windows/nb_ids": ids,
        "windows/nb_pos": batch.nb_pos,
        "windows/nb_disp": batch.nb_disp,
        "windows/nb_mask": batch.nb_mask,
        "windows/frame_dt": batch.frame_dt,
    })


def load_windows(path) -> list:
    from .data import ObservationWindow
    _, rec = read_records(path)
    meta = json.loads(record_text(rec["windows/meta"]))
    out = []
    for b, n in enumerate(meta["n_neighbors"]):
        ids = rec["windows/nb_ids"][b, :n]
        ids = np.array([int(i) if float(i).is_integer() else float(i) for i in ids], dtype=object)
        out.append(ObservationWindow(
            target_id=meta["target_id"][b], scene_id=meta["scene_id"][b],
            start_frame=meta["start_frame"][b],
            positions=rec["windows/positions"][b],
            nb_ids=ids,
            nb_pos=rec["windows/nb_pos"][b, :, :n],
            nb_disp=rec["windows/nb_disp"][b, :, :n],
            nb_mask=rec["windows/nb_mask"][b, :, :n],
            obs_len=meta["obs_len"],
            frame_dt=float(rec["windows/frame_dt"][b])))
    return out
