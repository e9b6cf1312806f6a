"""Embedding containers, manifests, synthetic data, and episode sampling.

On-disk layout (little-endian throughout):

* frame container  -- magic ``FSE1``, u32 version, u32 video count, u32 T,
  u32 C; then per video: u16 id length, UTF-8 id, u32 class id, T*C float32.
* prompt container -- magic ``FSP1``, u32 version, u32 class count, u32 R,
  u32 C; then per class: u32 class id, R*C float32.
* manifest         -- UTF-8 JSON with keys classes[], videos[], T, C, R,
  splits{} where splits maps split name to class ids.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    FormatError,
    IntegrityError,
    SamplingError,
    UnknownClassError,
)

FRAME_MAGIC = b"FSE1"
PROMPT_MAGIC = b"FSP1"
CONTAINER_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class ClassInfo:
    class_id: int
    name: str


@dataclass
class VideoInfo:
    video_id: str
    class_id: int
    split: str


@dataclass
class Manifest:
    """Index of classes, videos, split assignment, and embedding dimensions."""

    classes: list[ClassInfo]
    videos: list[VideoInfo]
    frames_per_video: int
    channels: int
    templates_per_class: int
    splits: dict[str, list[int]]

    def validate(self) -> None:
        ids = [c.class_id for c in self.classes]
        if sorted(ids) != list(range(len(ids))):
            raise IntegrityError(f"class ids must be dense 0..{len(ids) - 1}, got {sorted(ids)}")
        if self.frames_per_video < 2:
            raise IntegrityError(f"frames per video must be >= 2, got {self.frames_per_video}")
        if self.channels < 1 or self.templates_per_class < 1:
            raise IntegrityError("channels and templates per class must be >= 1")
        known = set(ids)
        seen_video_ids = set()
        split_of_class: dict[int, str] = {}
        for split, members in self.splits.items():
            if split not in SPLITS:
                raise IntegrityError(f"unknown split name {split!r}")
            for cid in members:
                if cid not in known:
                    raise IntegrityError(f"split {split!r} references unknown class {cid}")
                if cid in split_of_class:
                    raise IntegrityError(
                        f"class {cid} assigned to both {split_of_class[cid]!r} and {split!r}"
                    )
                split_of_class[cid] = split
        missing = known - set(split_of_class)
        if missing:
            raise IntegrityError(f"classes {sorted(missing)} are not assigned to any split")
        for v in self.videos:
            if v.class_id not in known:
                raise IntegrityError(f"video {v.video_id!r} references unknown class {v.class_id}")
            if v.video_id in seen_video_ids:
                raise IntegrityError(f"duplicate video id {v.video_id!r}")
            seen_video_ids.add(v.video_id)
            expected = split_of_class[v.class_id]
            if v.split != expected:
                raise IntegrityError(
                    f"video {v.video_id!r} claims split {v.split!r} but its class lives in {expected!r}"
                )

    def videos_by_class(self) -> dict[int, list[VideoInfo]]:
        table: dict[int, list[VideoInfo]] = {c.class_id: [] for c in self.classes}
        for v in self.videos:
            table[v.class_id].append(v)
        return table

    def to_dict(self) -> dict:
        return {
            "classes": [{"id": c.class_id, "name": c.name} for c in self.classes],
            "videos": [
                {"id": v.video_id, "class_id": v.class_id, "split": v.split} for v in self.videos
            ],
            "T": self.frames_per_video,
            "C": self.channels,
            "R": self.templates_per_class,
            "splits": {k: list(v) for k, v in self.splits.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Manifest":
        try:
            manifest = cls(
                classes=[ClassInfo(int(c["id"]), str(c["name"])) for c in raw["classes"]],
                videos=[
                    VideoInfo(str(v["id"]), int(v["class_id"]), str(v["split"]))
                    for v in raw["videos"]
                ],
                frames_per_video=int(raw["T"]),
                channels=int(raw["C"]),
                templates_per_class=int(raw["R"]),
                splits={str(k): [int(i) for i in v] for k, v in raw["splits"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc
        manifest.validate()
        return manifest


@dataclass
class EmbeddingStore:
    """Frame embeddings per video and prompt embeddings per class."""

    frames: dict[str, np.ndarray]  # video id -> [T, C] float32
    prompts: dict[int, np.ndarray]  # class id -> [R, C] float32


@dataclass
class Episode:
    """One N-way K-shot task with M queries per class."""

    n_way: int
    k_shot: int
    m_query: int
    support_frames: np.ndarray  # [N*K, T, C]
    support_labels: np.ndarray  # [N*K] in 0..N-1
    query_frames: np.ndarray  # [N*M, T, C]
    query_labels: np.ndarray  # [N*M] in 0..N-1
    class_prompts: np.ndarray  # [N, C] aggregated prompt per episode class
    class_ids: np.ndarray  # [N] global class ids behind each episode label

    @property
    def support_prompts(self) -> np.ndarray:
        """Aggregated class prompt for each support item, [N*K, 1, C]."""
        return self.class_prompts[self.support_labels][:, None, :]

    def query_prompts(self) -> np.ndarray:
        """Ground-truth class prompt per query, [N*M, 1, C] (training only)."""
        return self.class_prompts[self.query_labels][:, None, :]


# -- container I/O -----------------------------------------------------------


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated container while reading {what}")
    return raw


def write_store(
    manifest: Manifest,
    store: EmbeddingStore,
    frame_path: str | Path,
    prompt_path: str | Path,
    manifest_path: str | Path,
) -> None:
    manifest.validate()
    t, c, r = manifest.frames_per_video, manifest.channels, manifest.templates_per_class
    with open(frame_path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<IIII", CONTAINER_VERSION, len(manifest.videos), t, c))
        for video in manifest.videos:
            block = np.ascontiguousarray(store.frames[video.video_id], dtype="<f4")
            if block.shape != (t, c):
                raise IntegrityError(
                    f"frame block for {video.video_id!r} has shape {block.shape}, expected {(t, c)}"
                )
            vid = video.video_id.encode("utf-8")
            fh.write(struct.pack("<H", len(vid)))
            fh.write(vid)
            fh.write(struct.pack("<I", video.class_id))
            fh.write(block.tobytes())
    with open(prompt_path, "wb") as fh:
        fh.write(PROMPT_MAGIC)
        fh.write(struct.pack("<IIII", CONTAINER_VERSION, len(manifest.classes), r, c))
        for cls in manifest.classes:
            block = np.ascontiguousarray(store.prompts[cls.class_id], dtype="<f4")
            if block.shape != (r, c):
                raise IntegrityError(
                    f"prompt block for class {cls.class_id} has shape {block.shape}, expected {(r, c)}"
                )
            fh.write(struct.pack("<I", cls.class_id))
            fh.write(block.tobytes())
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")


def read_store(
    frame_path: str | Path,
    prompt_path: str | Path,
    manifest_path: str | Path,
) -> tuple[Manifest, EmbeddingStore]:
    """Load and fully validate a frame/prompt container pair."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    manifest = Manifest.from_dict(raw)
    t, c, r = manifest.frames_per_video, manifest.channels, manifest.templates_per_class

    frames: dict[str, np.ndarray] = {}
    with open(frame_path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != FRAME_MAGIC:
            raise FormatError(f"bad magic in frame container {frame_path}")
        version, count, file_t, file_c = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != CONTAINER_VERSION:
            raise FormatError(f"unsupported frame container version {version}")
        if count != len(manifest.videos):
            raise IntegrityError(
                f"frame container has {count} videos, manifest lists {len(manifest.videos)}"
            )
        if (file_t, file_c) != (t, c):
            raise IntegrityError(
                f"frame container dimensions {(file_t, file_c)} != manifest {(t, c)}"
            )
        class_of = {v.video_id: v.class_id for v in manifest.videos}
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "video id length"))
            video_id = _read_exact(fh, id_len, "video id").decode("utf-8")
            (class_id,) = struct.unpack("<I", _read_exact(fh, 4, "class id"))
            block = np.frombuffer(
                _read_exact(fh, 4 * t * c, f"frames of video {i}"), dtype="<f4"
            ).reshape(t, c)
            if video_id not in class_of:
                raise IntegrityError(f"frame container holds unknown video {video_id!r}")
            if class_of[video_id] != class_id:
                raise IntegrityError(
                    f"video {video_id!r}: container class {class_id} != manifest {class_of[video_id]}"
                )
            if not np.all(np.isfinite(block)):
                raise DataError(f"non-finite value in frame record {i} (video {video_id!r})")
            frames[video_id] = block.copy()
    if len(frames) != len(manifest.videos):
        raise IntegrityError("frame container repeats video ids")

    prompts: dict[int, np.ndarray] = {}
    with open(prompt_path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != PROMPT_MAGIC:
            raise FormatError(f"bad magic in prompt container {prompt_path}")
        version, count, file_r, file_c = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != CONTAINER_VERSION:
            raise FormatError(f"unsupported prompt container version {version}")
        if count != len(manifest.classes):
            raise IntegrityError(
                f"prompt container has {count} classes, manifest lists {len(manifest.classes)}"
            )
        if (file_r, file_c) != (r, c):
            raise IntegrityError(
                f"prompt container dimensions {(file_r, file_c)} != manifest {(r, c)}"
            )
        known = {cls.class_id for cls in manifest.classes}
        for i in range(count):
            (class_id,) = struct.unpack("<I", _read_exact(fh, 4, "class id"))
            block = np.frombuffer(
                _read_exact(fh, 4 * r * c, f"prompts of class {class_id}"), dtype="<f4"
            ).reshape(r, c)
            if class_id not in known:
                raise IntegrityError(f"prompt container holds unknown class {class_id}")
            if class_id in prompts:
                raise IntegrityError(f"prompt container repeats class {class_id}")
            if not np.all(np.isfinite(block)):
                raise DataError(f"non-finite value in prompt record {i} (class {class_id})")
            prompts[class_id] = block.copy()

    return manifest, EmbeddingStore(frames=frames, prompts=prompts)


# -- prompt aggregation -------------------------------------------------------


def aggregate_prompts(store: EmbeddingStore, class_id: int) -> np.ndarray:
    """Sum of the R template embeddings of a class, shape [C].

    The unnormalized sum is intentional; downstream normalization absorbs
    the scale.
    """
    if class_id not in store.prompts:
        raise UnknownClassError(f"class {class_id} has no prompt block")
    return store.prompts[class_id].sum(axis=0)


# -- episode sampling ---------------------------------------------------------


def sample_episode(
    manifest: Manifest,
    store: EmbeddingStore,
    split: str,
    n_way: int,
    k_shot: int,
    m_query: int,
    rng: np.random.Generator,
) -> Episode:
    """Draw one episode uniformly without replacement.

    Classes are drawn first (order is random, which also shuffles the episode
    labels), then K+M distinct videos per class.
    """
    if split not in manifest.splits:
        raise SamplingError(f"manifest has no split {split!r}")
    by_class = manifest.videos_by_class()
    need = k_shot + m_query
    eligible = [cid for cid in manifest.splits[split] if len(by_class[cid]) >= need]
    if len(eligible) < n_way:
        raise SamplingError(
            f"split {split!r} has {len(eligible)} classes with >= {need} videos, need {n_way}"
        )
    chosen = rng.choice(np.asarray(eligible), size=n_way, replace=False)

    support_frames, support_labels = [], []
    query_frames, query_labels = [], []
    class_prompts = []
    for label, cid in enumerate(chosen):
        videos = by_class[int(cid)]
        picks = rng.choice(len(videos), size=need, replace=False)
        for j in picks[:k_shot]:
            support_frames.append(store.frames[videos[j].video_id])
            support_labels.append(label)
        for j in picks[k_shot:]:
            query_frames.append(store.frames[videos[j].video_id])
            query_labels.append(label)
        class_prompts.append(aggregate_prompts(store, int(cid)))

    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        m_query=m_query,
        support_frames=np.stack(support_frames).astype(np.float32),
        support_labels=np.asarray(support_labels, dtype=np.int64),
        query_frames=np.stack(query_frames).astype(np.float32),
        query_labels=np.asarray(query_labels, dtype=np.int64),
        class_prompts=np.stack(class_prompts).astype(np.float32),
        class_ids=np.asarray(chosen, dtype=np.int64),
    )


# -- synthetic data -----------------------------------------------------------


def default_split_counts(n_classes: int) -> tuple[int, int, int]:
    n_test = max(min(5, n_classes), n_classes // 5)
    n_val = max(0, n_classes // 10)
    n_train = n_classes - n_test - n_val
    if n_train <= 0:
        n_train, n_val = max(1, n_classes - n_test), 0
        n_test = n_classes - n_train
    return n_train, n_val, n_test


def synth_dataset(
    n_classes: int,
    per_class: int,
    frames_per_video: int,
    channels: int,
    templates_per_class: int,
    appearance_sep: float = 1.0,
    motion_sep: float = 1.0,
    noise: float = 0.1,
    seed: int = 0,
    split_counts: tuple[int, int, int] | None = None,
    template_jitter: float = 0.02,
) -> tuple[Manifest, EmbeddingStore]:
    """Desk-scale synthetic embeddings with controllable class structure.

    Each class has a unit appearance mean and a unit per-step drift; frame t
    of a video is ``appearance_sep*mean + t*motion_sep*drift + noise*eps``.
    With motion_sep=0 classes differ only in appearance; with
    appearance_sep=0 only the drift separates them.  Prompt rows are the
    scaled appearance mean plus template jitter, so the text modality carries
    the same appearance signal the frames do.
    """
    if n_classes < 1 or per_class < 1 or frames_per_video < 2 or channels < 1:
        raise SamplingError("synth_dataset needs positive counts and T >= 2")
    if templates_per_class < 1:
        raise SamplingError("templates_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    counts = split_counts if split_counts is not None else default_split_counts(n_classes)
    if sum(counts) != n_classes or any(n < 0 for n in counts):
        raise SamplingError(f"split counts {counts} do not partition {n_classes} classes")

    def unit(vec: np.ndarray) -> np.ndarray:
        return vec / np.linalg.norm(vec)

    classes, videos = [], []
    frames: dict[str, np.ndarray] = {}
    prompts: dict[int, np.ndarray] = {}
    split_names = np.repeat(SPLITS, counts)
    splits: dict[str, list[int]] = {name: [] for name in SPLITS}
    steps = np.arange(frames_per_video, dtype=np.float64)[:, None]
    for cid in range(n_classes):
        split = str(split_names[cid])
        classes.append(ClassInfo(cid, f"class_{cid:03d}"))
        splits[split].append(cid)
        mean = appearance_sep * unit(rng.normal(size=channels))
        drift = motion_sep * unit(rng.normal(size=channels))
        for v in range(per_class):
            vid = f"c{cid:03d}_v{v:03d}"
            eps = rng.normal(size=(frames_per_video, channels))
            frames[vid] = (mean[None, :] + steps * drift[None, :] + noise * eps).astype(np.float32)
            videos.append(VideoInfo(vid, cid, split))
        jitter = rng.normal(size=(templates_per_class, channels))
        prompts[cid] = (mean[None, :] + template_jitter * jitter).astype(np.float32)

    manifest = Manifest(
        classes=classes,
        videos=videos,
        frames_per_video=frames_per_video,
        channels=channels,
        templates_per_class=templates_per_class,
        splits=splits,
    )
    manifest.validate()
    return manifest, EmbeddingStore(frames=frames, prompts=prompts)
