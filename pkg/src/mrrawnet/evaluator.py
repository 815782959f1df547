"""Variable-duration verification: trials, centre crops, cosine scoring, EER, minDCF."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .model import Model, embed_waveforms
from .trainer import PREEMPHASIS, preemphasis

logger = logging.getLogger(__name__)

Duration = Optional[float]  # None means the uncropped utterance
DEFAULT_DURATIONS: tuple = (None, 5.0, 2.0, 1.0)


@dataclass(frozen=True)
class Trial:
    target: bool
    enroll: str
    test: str


def duration_label(duration: Duration) -> str:
    return "full" if duration is None else f"{duration:g}s"


def parse_duration(text: str) -> Duration:
    text = text.strip().lower()
    if text == "full":
        return None
    value = float(text.rstrip("s"))
    if value <= 0:
        raise ValueError(f"duration must be positive, got {text!r}")
    return value


def center_crop(x: np.ndarray, duration: Duration, sample_rate: int = 16000,
                frame_stride: int = 160) -> tuple[np.ndarray, bool]:
    """Keep the centred window of ``duration`` seconds, floored to whole frames.

    Returns the crop and a flag that is set when the utterance was shorter
    than requested (the whole utterance, floored to whole frames, is kept).
    ``duration=None`` keeps the whole utterance.
    """
    x = np.asarray(x)
    whole = x.size // frame_stride * frame_stride
    short = False
    if duration is None:
        n = whole
    else:
        n = int(round(duration * sample_rate)) // frame_stride * frame_stride
        if n > x.size:
            short, n = True, whole
    start = (x.size - n) // 2
    return x[start:start + n], short


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise ValueError("cannot score a zero embedding")
    return float(np.dot(e1, e2) / (n1 * n2))


def _split_classes(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    tar, non = scores[labels], scores[~labels]
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one non-target trial")
    return tar, non


def error_rates(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Miss and false-alarm rates at every distinct score and at +inf.

    A trial is accepted when its score is ``>= threshold``. Thresholds are
    returned in increasing order, so miss rates rise and false-alarm rates
    fall along the arrays.
    """
    tar, non = _split_classes(scores, labels)
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    tar_sorted, non_sorted = np.sort(tar), np.sort(non)
    p_miss = np.searchsorted(tar_sorted, thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(non_sorted, thresholds, side="left") / non.size
    return thresholds, p_miss, p_fa


def eer_from_rates(thresholds, p_miss, p_fa) -> tuple[float, float]:
    """Crossing of the miss and false-alarm curves, linearly interpolated."""
    diff = p_miss - p_fa
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(p_miss[k]), float(thresholds[k])
    lam = -diff[k - 1] / (diff[k] - diff[k - 1])
    eer = p_miss[k - 1] + lam * (p_miss[k] - p_miss[k - 1])
    return float(eer), float(thresholds[k])


def eer(scores, labels) -> tuple[float, float]:
    """Equal error rate as a fraction, and the threshold where the curves meet."""
    return eer_from_rates(*error_rates(scores, labels))


def min_dcf(scores, labels, p_target: float = 0.05, c_miss: float = 1.0,
            c_fa: float = 1.0) -> float:
    """Minimum detection cost over all thresholds, normalised by the best trivial system."""
    _, p_miss, p_fa = error_rates(scores, labels)
    cost = c_miss * p_target * p_miss + c_fa * (1 - p_target) * p_fa
    return float(cost.min() / min(c_miss * p_target, c_fa * (1 - p_target)))


def parse_trials(path: Union[str, Path]) -> list[Trial]:
    """Read ``<0|1> <enroll> <test>`` lines; ``1`` marks a target trial."""
    trials = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: malformed trial line {line!r}")
        trials.append(Trial(parts[0] == "1", parts[1], parts[2]))
    return trials


def write_trials(path: Union[str, Path], trials: Iterable[Trial]) -> None:
    Path(path).write_text("".join(f"{int(t.target)} {t.enroll} {t.test}\n" for t in trials))


def all_pair_trials(utterances: Sequence) -> list[Trial]:
    """Every unordered pair of utterances, labelled by speaker identity."""
    trials = []
    for i, a in enumerate(utterances):
        for b in utterances[i + 1:]:
            trials.append(Trial(a.speaker == b.speaker, a.key, b.key))
    return trials


@dataclass
class DurationResult:
    duration: str
    eer_percent: float
    min_dcf: float
    threshold: float
    n_trials: int
    short_utterances: int = 0


@dataclass
class ScoreReport:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def row(self, duration: Duration) -> DurationResult:
        label = duration_label(duration)
        for r in self.rows:
            if r.duration == label:
                return r
        raise KeyError(label)

    def to_records(self) -> list[dict]:
        return [asdict(r) for r in self.rows]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def to_table(self) -> str:
        lines = [f"{'duration':>8}  {'EER(%)':>8}  {'minDCF':>8}  {'trials':>7}"]
        for r in self.rows:
            lines.append(f"{r.duration:>8}  {r.eer_percent:8.3f}  {r.min_dcf:8.4f}  {r.n_trials:7d}")
        return "\n".join(lines) + "\n"


def parallel_map(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Ordered map, threaded up to ``MRRW_THREADS`` workers (default 1)."""
    if workers is None:
        workers = max(1, int(os.environ.get("MRRW_THREADS", "1")))
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class EmbeddingCache:
    """Embeddings keyed by (utterance, duration), computed once each."""

    def __init__(self, model: Model, store: Mapping[str, np.ndarray],
                 coef: float = PREEMPHASIS, sample_rate: int = 16000):
        self.model = model
        self.store = store
        self.coef = coef
        self.sample_rate = sample_rate
        self.cache: dict = {}
        self.short: set = set()

    def compute(self, key: str, duration: Duration) -> np.ndarray:
        try:
            wav = self.store[key]
        except KeyError:
            raise KeyError(f"unknown trial key {key!r}") from None
        crop, short = center_crop(wav, duration, self.sample_rate, self.model.config.frame_stride)
        if short:
            self.short.add((key, duration))
            logger.info("%s shorter than %s; using the whole utterance", key,
                        duration_label(duration))
        x = preemphasis(crop.astype(np.float64), self.coef)[None, None, :]
        return embed_waveforms(self.model, x).data[0].astype(np.float64)

    def fill(self, keys: Iterable[str], duration: Duration) -> None:
        todo = sorted({k for k in keys if (k, duration) not in self.cache})
        for key, emb in zip(todo, parallel_map(lambda k: self.compute(k, duration), todo)):
            self.cache[(key, duration)] = emb

    def __call__(self, key: str, duration: Duration) -> np.ndarray:
        if (key, duration) not in self.cache:
            self.cache[(key, duration)] = self.compute(key, duration)
        return self.cache[(key, duration)]


def score_trials(cache: EmbeddingCache, trials: Sequence[Trial], duration: Duration) -> np.ndarray:
    cache.fill([k for t in trials for k in (t.enroll, t.test)], duration)
    return np.array([cosine_score(cache(t.enroll, duration), cache(t.test, duration))
                     for t in trials])


def evaluate(model: Model, trials: Sequence[Trial], store: Mapping[str, np.ndarray],
             durations: Sequence[Duration] = DEFAULT_DURATIONS,
             coef: float = PREEMPHASIS) -> ScoreReport:
    """Score every trial at each duration and report EER and minDCF per duration."""
    model.eval()
    cache = EmbeddingCache(model, store, coef)
    labels = np.array([t.target for t in trials])
    report = ScoreReport()
    for duration in durations:
        scores = score_trials(cache, trials, duration)
        rate, threshold = eer(scores, labels)
        shorts = sum(1 for k, d in cache.short if d == duration)
        report.rows.append(DurationResult(duration_label(duration), 100.0 * rate,
                                          min_dcf(scores, labels), threshold, len(trials), shorts))
    return report
