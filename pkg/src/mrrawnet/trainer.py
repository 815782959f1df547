"""Desk-scale speaker-classification training.

Batches mix full 3 s crops with random 1-3 s crops, waveforms are
pre-emphasised, the objective is additive angular margin softmax, and Adam
runs under a cosine-annealed learning rate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .engine import functional as F
from .engine.autograd import Parameter, Tape, Tensor, backward, clamped_sqrt, where
from .engine.layers import Module
from .errors import TrainingDiverged
from .model import Model, embed_waveforms, save_checkpoint

logger = logging.getLogger(__name__)

PREEMPHASIS = 0.97


def preemphasis(x: np.ndarray, coef: float = PREEMPHASIS) -> np.ndarray:
    """First-order high-pass ``y[n] = x[n] - coef * x[n-1]`` along the last axis."""
    if not 0 <= coef < 1:
        raise ValueError(f"pre-emphasis coefficient must be in [0, 1), got {coef}")
    x = np.asarray(x)
    y = x.copy()
    y[..., 1:] -= coef * x[..., :-1]
    return y


@dataclass
class BatchPolicy:
    full_len: float = 3.0
    min_len: float = 1.0
    p_full: float = 0.5
    sample_rate: int = 16000
    frame_stride: int = 160

    @property
    def full_samples(self) -> int:
        return self._floor(int(round(self.full_len * self.sample_rate)))

    @property
    def min_samples(self) -> int:
        return self._floor(int(round(self.min_len * self.sample_rate)))

    def _floor(self, n: int) -> int:
        return n // self.frame_stride * self.frame_stride

    def draw_length(self, rng: np.random.Generator) -> int:
        if rng.random() < self.p_full:
            return self.full_samples
        n = int(rng.integers(self.min_samples, self.full_samples + 1))
        return max(self._floor(n), self.frame_stride)


@dataclass
class Batch:
    waveforms: np.ndarray
    labels: np.ndarray
    keys: list
    wrapped: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.waveforms.shape[-1]


def make_batch(utterances: list, policy: BatchPolicy, rng: np.random.Generator,
               batch_size: int, coef: float = PREEMPHASIS,
               augment: Optional[Callable] = None) -> Batch:
    """Sample one rectangular batch: shared crop length, random crop offsets.

    Utterances shorter than the crop are tiled by repetition and listed in
    ``Batch.wrapped``. ``augment(waveforms, rng)`` is an optional hook applied
    after pre-emphasis.
    """
    length = policy.draw_length(rng)
    picks = rng.choice(len(utterances), size=batch_size, replace=len(utterances) < batch_size)
    waves = np.empty((batch_size, 1, length), dtype=np.float64)
    labels, keys, wrapped = [], [], []
    for row, idx in enumerate(picks):
        utt = utterances[int(idx)]
        wav = utt.waveform
        if wav.size < length:
            wav = np.resize(wav, length)
            wrapped.append(utt.key)
            start = 0
        else:
            start = int(rng.integers(0, wav.size - length + 1))
        waves[row, 0] = wav[start:start + length]
        labels.append(utt.speaker)
        keys.append(utt.key)
    waves = preemphasis(waves, coef)
    if augment is not None:
        waves = augment(waves, rng)
    return Batch(waves, np.asarray(labels, dtype=np.int64), keys, wrapped)


class AAMHead(Module):
    """Class centres for additive angular margin softmax."""

    def __init__(self, num_classes: int, embed_dim: int, margin: float = 0.3, scale: float = 30.0,
                 *, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.margin, self.scale = margin, scale
        std = math.sqrt(2.0 / (num_classes + embed_dim))
        self.weight = Parameter(rng.normal(0, std, size=(num_classes, embed_dim)).astype(dtype))

    def cosine(self, emb: Tensor) -> Tensor:
        return F.l2_normalize(emb, axis=1) @ F.l2_normalize(self.weight, axis=1).transpose()


def aam_logits(cosine: Tensor, labels, margin: float, scale: float) -> Tensor:
    """Scaled logits with ``cos(theta + m)`` on the target class.

    Beyond ``theta > pi - m`` the target logit falls back to
    ``cos(theta) - m sin(m)`` so it keeps decreasing in ``theta``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    cos_m, sin_m = math.cos(margin), math.sin(margin)
    threshold = math.cos(math.pi - margin)
    fallback = math.sin(math.pi - margin) * margin
    sine = clamped_sqrt(1.0 - cosine * cosine)
    phi = cosine * cos_m - sine * sin_m
    phi = where(cosine.data > threshold, phi, cosine - fallback)
    onehot = np.zeros(cosine.shape, dtype=cosine.dtype)
    onehot[np.arange(labels.size), labels] = 1.0
    return (cosine + onehot * (phi - cosine)) * scale


def aam_softmax_loss(emb: Tensor, labels, head: AAMHead) -> tuple[Tensor, Tensor]:
    """Mean AAM-softmax cross-entropy and the margin-free cosine matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= head.weight.shape[0]:
        raise ValueError("label out of range for the classification head")
    cosine = head.cosine(emb)
    logits = aam_logits(cosine, labels, head.margin, head.scale)
    return F.cross_entropy(logits, labels), cosine


def cosine_lr(step: int, total_steps: int, lr_max: float = 5e-4, lr_min: float = 3e-6) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == 0:
        return lr_max
    if step == total_steps:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimState:
    """Adam moments plus decoupled weight decay.

    The decay shrinks parameters by ``weight_decay * lr / lr_ref`` before each
    Adam update, i.e. it follows the learning-rate schedule's shape.
    ``lr_scale`` optionally multiplies the step size per parameter.
    """

    params: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-5
    lr_ref: float = 5e-4
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    lr_scale: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]
        if not self.lr_scale:
            self.lr_scale = [1.0] * len(self.params)
        if len(self.lr_scale) != len(self.params):
            raise ValueError("lr_scale needs one entry per parameter")


def adam_step(state: OptimState, lr: float) -> None:
    """Apply one update in place using each parameter's ``.grad``."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    shrink = 1 - state.weight_decay * lr / state.lr_ref
    for p, m, v, scale in zip(state.params, state.m, state.v, state.lr_scale):
        g = p.grad
        if state.weight_decay:
            p.data *= shrink
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p.data -= (scale * lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 1
    steps_per_epoch: Optional[int] = None
    lr_max: float = 5e-4
    lr_min: float = 3e-6
    weight_decay: float = 5e-5
    margin: float = 0.3
    scale: float = 30.0
    preemphasis: float = PREEMPHASIS
    full_len: float = 3.0
    min_len: float = 1.0
    p_full: float = 0.5
    # step-size multiplier for the AAM class centres; they are normalised in the
    # forward pass, so their angular speed under Adam is ~lr/|w|
    head_lr_scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    metrics: list
    head: AAMHead
    train_accuracy: float
    checkpoints: list


def classification_accuracy(model: Model, head: AAMHead, utterances: list, policy: BatchPolicy,
                            coef: float = PREEMPHASIS) -> float:
    """Eval-mode accuracy on centred full-length crops, nearest class centre."""
    model.eval()
    correct = 0
    n = policy.full_samples
    for utt in utterances:
        wav = utt.waveform if utt.waveform.size >= n else np.resize(utt.waveform, n)
        start = (wav.size - n) // 2
        emb = embed_waveforms(model, preemphasis(wav[start:start + n], coef)[None, None, :])
        correct += int(head.cosine(emb).data.argmax() == utt.speaker)
    return correct / len(utterances)


def train_loop(model: Model, corpus, cfg: TrainConfig, seed: int = 0,
               out_dir: Optional[Path] = None, augment: Optional[Callable] = None) -> TrainResult:
    """Train ``model`` on ``corpus`` speaker labels; deterministic given ``seed``.

    Writes ``metrics.jsonl`` and one checkpoint per epoch when ``out_dir`` is
    set. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    head_seq, batch_seq = np.random.SeedSequence(seed).spawn(2)
    dtype = model.config.np_dtype
    head = AAMHead(corpus.num_speakers, model.config.embed_dim, cfg.margin, cfg.scale,
                   rng=np.random.default_rng(head_seq), dtype=dtype)
    head.name_parameters()
    rng = np.random.default_rng(batch_seq)
    policy = BatchPolicy(cfg.full_len, cfg.min_len, cfg.p_full,
                         frame_stride=model.config.frame_stride)
    steps_per_epoch = cfg.steps_per_epoch or math.ceil(len(corpus) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    params = model.parameters() + head.parameters()
    scales = [1.0] * len(model.parameters()) + [cfg.head_lr_scale] * len(head.parameters())
    state = OptimState(params, weight_decay=cfg.weight_decay, lr_ref=cfg.lr_max, lr_scale=scales)
    utterances = corpus.utterances

    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "metrics.jsonl", "w")
    metrics, checkpoints = [], []
    try:
        step = 0
        for epoch in range(cfg.epochs):
            model.train()
            for _ in range(steps_per_epoch):
                lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)
                batch = make_batch(utterances, policy, rng, cfg.batch_size, cfg.preemphasis, augment)
                with Tape() as tape:
                    emb = embed_waveforms(model, batch.waveforms)
                    loss, cosine = aam_softmax_loss(emb, batch.labels, head)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss at step {step}", {
                        "step": step, "length": batch.length, "keys": batch.keys,
                        "wave_mean": float(batch.waveforms.mean()),
                        "wave_std": float(batch.waveforms.std()),
                        "wave_absmax": float(np.abs(batch.waveforms).max()),
                        "emb_finite": bool(np.isfinite(emb.data).all()),
                    })
                for p in params:
                    p.grad[...] = 0
                backward(loss, tape)
                adam_step(state, lr)
                acc = float(np.mean(cosine.data.argmax(axis=1) == batch.labels))
                record = {"step": step, "loss": value, "lr": lr, "acc": acc}
                metrics.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                logger.debug("step %d loss %.4f acc %.3f lr %.2e", step, value, acc, lr)
                step += 1
            if out_dir is not None:
                path = out_dir / f"epoch{epoch + 1:03d}.mrrw"
                save_checkpoint(path, model, {"epoch": epoch + 1, "seed": seed})
                checkpoints.append(path)
    finally:
        if log_file is not None:
            log_file.close()
    accuracy = classification_accuracy(model, head, utterances, policy, cfg.preemphasis)
    model.eval()
    return TrainResult(metrics, head, accuracy, checkpoints)
