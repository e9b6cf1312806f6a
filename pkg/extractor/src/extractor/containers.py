"""Writers for the embedding-store wire formats the recognition engine reads.

Frame container: magic ``FSE1``, u32 version=1, u32 video count, u32 T,
u32 C; per video: u16 id length, UTF-8 id, u32 class id, T*C little-endian
float32.  Prompt container: magic ``FSP1``, u32 version=1, u32 class count,
u32 R, u32 C; per class: u32 class id, R*C float32.  Manifest: JSON with
classes[], videos[], T, C, R, splits{}.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FRAME_MAGIC = b"FSE1"
PROMPT_MAGIC = b"FSP1"
VERSION = 1


def write_frame_container(
    path: str | Path,
    records: list[tuple[str, int, np.ndarray]],
    frames_per_video: int,
    channels: int,
) -> None:
    """``records`` is a list of (video_id, class_id, [T, C] float array)."""
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<IIII", VERSION, len(records), frames_per_video, channels))
        for video_id, class_id, block in records:
            block = np.ascontiguousarray(block, dtype="<f4")
            if block.shape != (frames_per_video, channels):
                raise ValueError(
                    f"video {video_id!r}: block shape {block.shape} != "
                    f"{(frames_per_video, channels)}"
                )
            encoded = video_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", class_id))
            fh.write(block.tobytes())


def write_prompt_container(
    path: str | Path,
    records: list[tuple[int, np.ndarray]],
    templates_per_class: int,
    channels: int,
) -> None:
    """``records`` is a list of (class_id, [R, C] float array)."""
    with open(path, "wb") as fh:
        fh.write(PROMPT_MAGIC)
        fh.write(struct.pack("<IIII", VERSION, len(records), templates_per_class, channels))
        for class_id, block in records:
            block = np.ascontiguousarray(block, dtype="<f4")
            if block.shape != (templates_per_class, channels):
                raise ValueError(
                    f"class {class_id}: block shape {block.shape} != "
                    f"{(templates_per_class, channels)}"
                )
            fh.write(struct.pack("<I", class_id))
            fh.write(block.tobytes())


def write_manifest(
    path: str | Path,
    classes: list[tuple[int, str]],
    videos: list[tuple[str, int, str]],
    frames_per_video: int,
    channels: int,
    templates_per_class: int,
    splits: dict[str, list[int]],
) -> None:
    payload = {
        "classes": [{"id": cid, "name": name} for cid, name in classes],
        "videos": [
            {"id": vid, "class_id": cid, "split": split} for vid, cid, split in videos
        ],
        "T": frames_per_video,
        "C": channels,
        "R": templates_per_class,
        "splits": {name: list(members) for name, members in splits.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
