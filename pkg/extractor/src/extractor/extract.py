"""Frame sampling and embedding extraction over a per-class video corpus.

The input root holds one directory per class; each class directory holds
videos, where a video is either a directory of frame images or a video file
(decoded through OpenCV when available).  T frames are sampled uniformly
(segment centers), center-cropped, and embedded one C-vector per frame.
Prompt embeddings come from the template list crossed with class names.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .containers import write_frame_container, write_manifest, write_prompt_container
from .encoders import center_crop_square
from .templates import DEFAULT_TEMPLATES, fill_template

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mkv", ".mov", ".webm"}
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class ExtractionJob:
    input_root: Path
    out_frames: Path
    out_prompts: Path
    out_manifest: Path
    frames_per_video: int = 8
    templates: list[str] = field(default_factory=lambda: list(DEFAULT_TEMPLATES))
    splits_file: Path | None = None

    def __post_init__(self):
        self.input_root = Path(self.input_root)
        self.out_frames = Path(self.out_frames)
        self.out_prompts = Path(self.out_prompts)
        self.out_manifest = Path(self.out_manifest)
        if self.frames_per_video < 2:
            raise ValueError("frames_per_video must be >= 2")
        if not self.templates:
            raise ValueError("at least one prompt template is required")


def uniform_frame_indices(total: int, count: int) -> list[int]:
    """Segment-center sampling: one index from each of ``count`` equal spans."""
    if total < 1:
        raise ValueError("no frames to sample from")
    return [min(int((i + 0.5) * total / count), total - 1) for i in range(count)]


def _load_frame_folder(path: Path) -> list[Path]:
    frames = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return frames


def _decode_video_frames(path: Path, count: int) -> list[Image.Image]:
    try:
        import cv2
    except ImportError as exc:
        raise RuntimeError(f"decoding {path} needs opencv-python installed") from exc
    capture = cv2.VideoCapture(str(path))
    try:
        total = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
        if total < 1:
            raise RuntimeError(f"video {path} reports no frames")
        images = []
        for idx in uniform_frame_indices(total, count):
            capture.set(cv2.CAP_PROP_POS_FRAMES, idx)
            ok, frame = capture.read()
            if not ok:
                raise RuntimeError(f"failed to read frame {idx} of {path}")
            images.append(Image.fromarray(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)))
        return images
    finally:
        capture.release()


def sample_video_frames(path: Path, count: int) -> list[Image.Image]:
    """T center-cropped frames from a frame folder or a video file."""
    if path.is_dir():
        frames = _load_frame_folder(path)
        if len(frames) < 1:
            raise RuntimeError(f"frame folder {path} holds no images")
        picked = [frames[i] for i in uniform_frame_indices(len(frames), count)]
        images = [Image.open(p).convert("RGB") for p in picked]
    elif path.suffix.lower() in VIDEO_SUFFIXES:
        images = _decode_video_frames(path, count)
    else:
        raise RuntimeError(f"{path} is neither a frame folder nor a known video format")
    return [center_crop_square(img) for img in images]


def _load_splits(path: Path | None, class_names: list[str]) -> dict[str, list[str]]:
    if path is None:
        return {"train": [], "val": [], "test": list(class_names)}
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    splits = {name: list(raw.get(name, [])) for name in SPLIT_NAMES}
    assigned = [name for members in splits.values() for name in members]
    unknown = set(assigned) - set(class_names)
    if unknown:
        raise ValueError(f"splits file names unknown classes: {sorted(unknown)}")
    if len(assigned) != len(set(assigned)):
        raise ValueError("splits file assigns a class to more than one split")
    missing = set(class_names) - set(assigned)
    if missing:
        splits["test"].extend(sorted(missing))
    return splits


def discover_classes(input_root: Path) -> list[Path]:
    classes = sorted(p for p in Path(input_root).iterdir() if p.is_dir())
    if not classes:
        raise RuntimeError(f"input root {input_root} holds no class directories")
    return classes


def extract(job: ExtractionJob, encoder) -> dict:
    """Run the extraction; returns a small summary dict.

    Unreadable videos are skipped with a warning and excluded from the
    manifest; a class that ends up with zero videos is a hard error.
    """
    class_dirs = discover_classes(job.input_root)
    class_names = [p.name for p in class_dirs]
    splits_by_name = _load_splits(job.splits_file, class_names)
    split_of = {
        name: split for split, members in splits_by_name.items() for name in members
    }

    channels = encoder.dim
    frame_records: list[tuple[str, int, np.ndarray]] = []
    prompt_records: list[tuple[int, np.ndarray]] = []
    classes: list[tuple[int, str]] = []
    videos: list[tuple[str, int, str]] = []
    skipped = 0

    for class_id, class_dir in enumerate(class_dirs):
        class_name = class_dir.name
        classes.append((class_id, class_name))
        members = sorted(
            p
            for p in class_dir.iterdir()
            if p.is_dir() or p.suffix.lower() in VIDEO_SUFFIXES
        )
        kept = 0
        for member in members:
            video_id = f"{class_name}/{member.name}"
            try:
                images = sample_video_frames(member, job.frames_per_video)
            except RuntimeError as exc:
                logger.warning("skipping unreadable video %s: %s", video_id, exc)
                skipped += 1
                continue
            block = np.stack([encoder.encode_image(img) for img in images])
            frame_records.append((video_id, class_id, block))
            videos.append((video_id, class_id, split_of[class_name]))
            kept += 1
        if kept == 0:
            raise RuntimeError(f"class {class_name!r} has no readable videos")
        sentences = [fill_template(t, class_name) for t in job.templates]
        prompt_block = np.stack([encoder.encode_text(s) for s in sentences])
        prompt_records.append((class_id, prompt_block))

    name_to_id = {name: cid for cid, name in classes}
    splits_by_id = {
        split: sorted(name_to_id[name] for name in members)
        for split, members in splits_by_name.items()
    }

    write_frame_container(job.out_frames, frame_records, job.frames_per_video, channels)
    write_prompt_container(job.out_prompts, prompt_records, len(job.templates), channels)
    write_manifest(
        job.out_manifest,
        classes,
        videos,
        job.frames_per_video,
        channels,
        len(job.templates),
        splits_by_id,
    )
    return {
        "classes": len(classes),
        "videos": len(videos),
        "skipped": skipped,
        "channels": channels,
        "frames_per_video": job.frames_per_video,
        "templates": len(job.templates),
    }
