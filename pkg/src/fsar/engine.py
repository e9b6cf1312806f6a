"""Full-model assembly: episode forward pass, loss, training, evaluation,
and checkpoints.

The pipeline is frames -> motion refinement (when on, the refined frames
replace the raw ones) -> semantic modulation -> prototype/anchor modulation
-> combined distances -> class probabilities.  Toggled-off components pass
features through unchanged so every ablation row stays runnable.
"""

from __future__ import annotations

import concurrent.futures
import contextlib
import csv
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .anchor import PadmParams, init_padm_params, padm_distance, padm_forward
from .config import ModelConfig
from .data import EmbeddingStore, Episode, Manifest, sample_episode
from .distances import DistanceWeights, combined_distance, sequence_distance_matrix
from .errors import ConfigError, FormatError, IntegrityError, NumericError
from .fusion import SfParams, init_sf_params
from .motion import MfeParams, hsmr_forward, init_mfe_params, motion_consistency
from .optim import AdamState, adam_step
from .semantic import PgParams, init_pg_params, spm_forward, spm_prototypes
from . import tensor as T
from .tensor import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FSC1"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ["episode", "L_CE", "L_H", "L_S", "total", "accuracy"]


@dataclass
class ModelParams:
    """Every learnable tensor of the head, grouped by component."""

    frame_positional: Tensor  # [T, C], added once to frame tokens
    mfe_shallow: MfeParams
    mfe_deep: MfeParams
    sf_hsmr: SfParams
    sf_spm: SfParams
    pg: PgParams
    padm: PadmParams

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"frame_positional": self.frame_positional}
        for prefix, group in (
            ("mfe_shallow", self.mfe_shallow),
            ("mfe_deep", self.mfe_deep),
            ("sf_hsmr", self.sf_hsmr),
            ("sf_spm", self.sf_spm),
            ("pg", self.pg),
            ("padm", self.padm),
        ):
            for name, tensor in group.named_tensors().items():
                out[f"{prefix}.{name}"] = tensor
        return out

    def zero_grad(self) -> None:
        for tensor in self.named_tensors().values():
            tensor.grad = None


def np_dtype(config: ModelConfig):
    return np.float32 if config.dtype == "float32" else np.float64


def init_model_params(
    config: ModelConfig, rng: np.random.Generator, zero_residual: bool = True
) -> ModelParams:
    """Fresh parameters; with ``zero_residual`` every encoder starts as the
    identity, so an untrained model degrades to distance matching on the raw
    features instead of scrambling them."""
    dtype = np_dtype(config)
    c, heads, depth = config.channels, config.encoder_heads, config.encoder_depth
    positional = Tensor(
        rng.normal(0.0, 0.02, size=(config.frames, c)).astype(dtype), requires_grad=True
    )
    return ModelParams(
        frame_positional=positional,
        mfe_shallow=init_mfe_params(c, config.mfe_reduction, rng, dtype),
        mfe_deep=init_mfe_params(c, config.mfe_reduction, rng, dtype),
        sf_hsmr=init_sf_params(c, heads, depth, rng, dtype, zero_residual=zero_residual),
        sf_spm=init_sf_params(c, heads, depth, rng, dtype, zero_residual=zero_residual),
        pg=init_pg_params(c, config.pg_depth, rng, dtype),
        padm=init_padm_params(c, heads, depth, rng, dtype, zero_residual=zero_residual),
    )


@dataclass
class PredictionResult:
    distances: np.ndarray  # [NM, N] combined distances to the class prototypes
    probabilities: np.ndarray  # [NM, N]
    predicted: np.ndarray  # [NM]
    true_labels: np.ndarray  # [NM]
    accuracy: float


@dataclass
class EpisodeForward:
    prediction: PredictionResult
    loss_ce: Tensor
    loss_h: Tensor
    loss_s: Tensor
    total: Tensor


@contextlib.contextmanager
def _stage(name: str):
    """Attach the pipeline stage to numeric failures for diagnostics."""
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"{name}: {exc}") from exc


def _ensure_finite(name: str, value: Tensor) -> None:
    if not np.all(np.isfinite(value.data)):
        raise NumericError(f"loss component {name} is non-finite")


def forward_episode(
    episode: Episode,
    params: ModelParams,
    config: ModelConfig,
    mode: str = "train",
) -> EpisodeForward:
    """One episode through the full pipeline; returns prediction and losses."""
    dtype = np_dtype(config)
    nk = episode.support_frames.shape[0]
    nm = episode.query_frames.shape[0]
    support = Tensor(episode.support_frames.astype(dtype))
    query = Tensor(episode.query_frames.astype(dtype))

    # Temporal order enters here, once, before any fusion.
    support = T.add(support, params.frame_positional)
    query = T.add(query, params.frame_positional)

    loss_h = T.zeros((), dtype=dtype)
    if config.use_hsmr:
        with _stage("motion refinement (L_H)"):
            both = T.concat([support, query], axis=0)
            hsmr = hsmr_forward(
                both,
                params.mfe_shallow,
                params.mfe_deep,
                params.sf_hsmr,
                strategy=config.fusion,
                gate_on_inputs=config.gate_on_inputs,
                pre_sf_consistency=config.hsmr_pre_sf_consistency,
            )
            loss_h = T.tsum(motion_consistency(hsmr))
            _ensure_finite("L_H", loss_h)
            support, query = T.split(hsmr.refined, [nk, nm], axis=0)

    loss_s = T.zeros((), dtype=dtype)
    if config.use_spm:
        with _stage("semantic modulation (L_S)"):
            constraint = config.constraint if mode == "train" else "none"
            spm = spm_forward(
                support,
                query,
                Tensor(episode.support_prompts.astype(dtype)),
                Tensor(episode.query_prompts().astype(dtype)) if mode == "train" else None,
                params.sf_spm,
                params.pg,
                strategy=config.fusion,
                mode=mode,
                constraint=constraint,
                gate_on_inputs=config.gate_on_inputs,
            )
            support, query = spm.support, spm.query
            loss_s = spm.d_s_total
            _ensure_finite("L_S", loss_s)

    with _stage("semantic distance (d_spm)"):
        protos = spm_prototypes(support, episode.support_labels)
        d_spm = sequence_distance_matrix(
            T.standardize(protos), T.standardize(query), config.gamma, config.bidirectional
        )  # [NM, N]

    if config.use_padm:
        with _stage("prototype-anchor distance (d_padm)"):
            padm = padm_forward(
                support,
                episode.support_labels,
                query,
                params.padm,
                transductive=config.padm_transductive,
            )
            d_padm = padm_distance(
                padm, episode.support_labels, config.gamma, config.bidirectional
            )
    else:
        d_padm = d_spm

    weights = DistanceWeights(config.lambda1, config.lambda2)
    distances = combined_distance(d_padm, d_spm, weights)  # [NM, N]

    # Stable log-probabilities: log softmax(-d) over classes.
    neg = T.neg(distances)
    log_probs = T.sub(neg, T.logsumexp(neg, axis=-1, keepdims=True))
    onehot = np.zeros((nm, episode.n_way), dtype=dtype)
    onehot[np.arange(nm), episode.query_labels] = 1.0
    picked = T.tsum(T.mul(log_probs, Tensor(onehot)), axis=-1)  # [NM]
    loss_ce = T.neg(T.tmean(picked))

    total = T.add(
        loss_ce,
        T.add(
            T.mul(loss_h, T.scalar(config.lambda3, dtype)),
            T.mul(loss_s, T.scalar(config.lambda4, dtype)),
        ),
    )
    for name, term in (("L_CE", loss_ce), ("L_H", loss_h), ("L_S", loss_s), ("total", total)):
        _ensure_finite(name, term)

    probs = np.exp(log_probs.data)
    predicted = np.argmin(distances.data, axis=-1)
    accuracy = float(np.mean(predicted == episode.query_labels))
    prediction = PredictionResult(
        distances=distances.data.copy(),
        probabilities=probs,
        predicted=predicted,
        true_labels=episode.query_labels.copy(),
        accuracy=accuracy,
    )
    return EpisodeForward(prediction, loss_ce, loss_h, loss_s, total)


@dataclass
class TrainState:
    params: ModelParams
    optimizer: AdamState
    episode: int = 0
    accumulated: dict[str, np.ndarray] = field(default_factory=dict)
    accumulation_count: int = 0


@dataclass
class MetricsRow:
    episode: int
    loss_ce: float
    loss_h: float
    loss_s: float
    total: float
    accuracy: float

    def as_list(self) -> list:
        return [self.episode, self.loss_ce, self.loss_h, self.loss_s, self.total, self.accuracy]


def _rng_streams(seed: int) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    init, train, eval_ = root.spawn(3)
    return {
        "init": np.random.default_rng(init),
        "train": np.random.default_rng(train),
        "eval": np.random.default_rng(eval_),
    }


def _check_store_dims(config: ModelConfig, manifest: Manifest) -> None:
    pairs = (
        ("frames", config.frames, manifest.frames_per_video),
        ("channels", config.channels, manifest.channels),
        ("templates", config.templates, manifest.templates_per_class),
    )
    for name, from_config, from_store in pairs:
        if from_config != from_store:
            raise ConfigError(
                f"config {name}={from_config} does not match the store ({name}={from_store})"
            )


def train(
    manifest: Manifest,
    store: EmbeddingStore,
    config: ModelConfig,
    episodes: Optional[int] = None,
    params: Optional[ModelParams] = None,
    progress: Optional[Callable[[MetricsRow], None]] = None,
) -> tuple[TrainState, list[MetricsRow]]:
    """Episodic training with gradient accumulation.

    Deterministic for a fixed config seed.  Episodes whose loss goes
    non-finite are skipped and logged.  The optimizer fires every
    ``config.accumulation`` accumulated episodes; a trailing partial window
    is discarded.
    """
    config.validate()
    _check_store_dims(config, manifest)
    episodes = config.train_episodes if episodes is None else episodes
    streams = _rng_streams(config.seed)
    if params is None:
        params = init_model_params(config, streams["init"])
    named = params.named_tensors()
    state = TrainState(params=params, optimizer=AdamState())
    accum = {name: np.zeros_like(t.data) for name, t in named.items()}
    metrics: list[MetricsRow] = []

    for idx in range(1, episodes + 1):
        episode = sample_episode(
            manifest, store, "train", config.way, config.shot, config.queries, streams["train"]
        )
        params.zero_grad()
        try:
            fwd = forward_episode(episode, params, config, mode="train")
        except NumericError as exc:
            logger.warning("episode %d skipped: %s", idx, exc)
            state.episode = idx
            continue
        fwd.total.backward()
        for name, tensor in named.items():
            if tensor.grad is not None:
                accum[name] += tensor.grad
        state.accumulation_count += 1
        state.episode = idx

        if state.accumulation_count == config.accumulation:
            mean_grads = {
                name: g / config.accumulation for name, g in accum.items()
            }
            adam_step(
                named,
                mean_grads,
                state.optimizer,
                lr=config.lr,
                weight_decay=config.weight_decay,
            )
            for g in accum.values():
                g[...] = 0.0
            state.accumulation_count = 0

        row = MetricsRow(
            episode=idx,
            loss_ce=float(fwd.loss_ce.data),
            loss_h=float(fwd.loss_h.data),
            loss_s=float(fwd.loss_s.data),
            total=float(fwd.total.data),
            accuracy=fwd.prediction.accuracy,
        )
        metrics.append(row)
        if progress is not None:
            progress(row)

    state.accumulated = accum
    return state, metrics


def write_metrics(rows: list[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.as_list())


@dataclass
class EvalResult:
    accuracy: float
    ci95: Optional[float]
    per_episode: np.ndarray

    def format(self) -> str:
        if self.ci95 is None:
            return f"accuracy {self.accuracy:.4f} (CI NA, single episode)"
        return f"accuracy {self.accuracy:.4f} +/- {self.ci95:.4f} (95% CI)"


def evaluate(
    manifest: Manifest,
    store: EmbeddingStore,
    params: ModelParams,
    config: ModelConfig,
    n_episodes: Optional[int] = None,
    split: str = "test",
    threads: Optional[int] = None,
) -> EvalResult:
    """Frozen-parameter episodic evaluation with a normal-approximation CI.

    Episodes are sampled sequentially (deterministic under the config seed)
    and may be scored in parallel; FSAR_THREADS caps the worker count.
    """
    config.validate()
    _check_store_dims(config, manifest)
    n_episodes = config.eval_episodes if n_episodes is None else n_episodes
    streams = _rng_streams(config.seed)
    episodes = [
        sample_episode(
            manifest, store, split, config.way, config.shot, config.queries, streams["eval"]
        )
        for _ in range(n_episodes)
    ]

    def score(episode: Episode) -> float:
        return forward_episode(episode, params, config, mode="test").prediction.accuracy

    if threads is None:
        threads = int(os.environ.get("FSAR_THREADS", "1"))
    if threads > 1 and n_episodes > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            accs = np.asarray(list(pool.map(score, episodes)))
    else:
        accs = np.asarray([score(ep) for ep in episodes])

    mean = float(accs.mean())
    ci = None
    if n_episodes > 1:
        ci = float(1.96 * accs.std(ddof=1) / np.sqrt(n_episodes))
    return EvalResult(accuracy=mean, ci95=ci, per_episode=accs)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(params: ModelParams, config: ModelConfig, path: str | Path) -> None:
    named = params.named_tensors()
    digest = config.config_hash().encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<H", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<I", len(named)))
        for name, tensor in named.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            code = 0 if tensor.data.dtype == np.float32 else 1
            fh.write(struct.pack("<BB", code, tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data).astype("<f4" if code == 0 else "<f8").tobytes())


def load_checkpoint(
    path: str | Path, config: ModelConfig, strict_hash: bool = True
) -> ModelParams:
    """Rebuild params from a checkpoint; shapes must match the config."""
    streams = _rng_streams(config.seed)
    params = init_model_params(config, streams["init"])
    named = params.named_tensors()
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"bad magic in checkpoint {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (hash_len,) = struct.unpack("<H", fh.read(2))
        digest = fh.read(hash_len).decode("ascii")
        if strict_hash and digest != config.config_hash():
            raise IntegrityError(
                "checkpoint was written under a different config (hash mismatch)"
            )
        (count,) = struct.unpack("<I", fh.read(4))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            dtype = "<f4" if code == 0 else "<f8"
            n_bytes = int(np.prod(shape)) * (4 if code == 0 else 8)
            block = np.frombuffer(fh.read(n_bytes), dtype=dtype).reshape(shape)
            if name not in named:
                raise IntegrityError(f"checkpoint parameter {name!r} unknown to this config")
            if named[name].shape != shape:
                raise IntegrityError(
                    f"checkpoint parameter {name!r} has shape {shape}, expected {named[name].shape}"
                )
            named[name].data = block.astype(named[name].data.dtype)
            seen.add(name)
        missing = set(named) - seen
        if missing:
            raise IntegrityError(f"checkpoint is missing parameters: {sorted(missing)}")
    return params
