"""Seeded synthetic speakers for desk-scale training and verification.

Every speaker has a fixed recipe: a fundamental frequency on a 24 Hz grid, a
three-resonator "vocal tract", a spectral tilt and a noise floor. Utterances
are chains of syllables whose pitch and resonances jitter around the recipe,
separated by short pauses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

F0_BASE_HZ = 90.0
F0_SPACING_HZ = 24.0


@dataclass(frozen=True)
class SpeakerRecipe:
    speaker: int
    seed: tuple
    f0: float
    formants: tuple
    bandwidths: tuple
    tilt: float
    noise_db: float


@dataclass
class Utterance:
    key: str
    speaker: int
    waveform: np.ndarray


@dataclass
class SynthCorpus:
    recipes: list
    utterances: list
    sample_rate: int = 16000
    seed: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {u.key: u for u in self.utterances}

    @property
    def num_speakers(self) -> int:
        return len(self.recipes)

    def __len__(self):
        return len(self.utterances)

    def __getitem__(self, key: str) -> np.ndarray:
        return self._index[key].waveform

    def by_speaker(self) -> dict[int, list]:
        out: dict[int, list] = {}
        for u in self.utterances:
            out.setdefault(u.speaker, []).append(u)
        return out

    def split(self, n_first: int) -> tuple["SynthCorpus", "SynthCorpus"]:
        """First ``n_first`` utterances of every speaker vs. the rest."""
        head, tail = [], []
        for utts in self.by_speaker().values():
            head.extend(utts[:n_first])
            tail.extend(utts[n_first:])
        return (SynthCorpus(self.recipes, head, self.sample_rate, self.seed),
                SynthCorpus(self.recipes, tail, self.sample_rate, self.seed))


def _make_recipe(speaker: int, f0_slot: int, seq: np.random.SeedSequence) -> SpeakerRecipe:
    rng = np.random.default_rng(seq)
    formants = (rng.uniform(300, 850), rng.uniform(900, 2300), rng.uniform(2400, 3500))
    bandwidths = tuple(rng.uniform(50, 130, size=3))
    return SpeakerRecipe(
        speaker=speaker,
        seed=(seq.entropy, *seq.spawn_key),
        f0=F0_BASE_HZ + F0_SPACING_HZ * f0_slot + rng.uniform(-2.0, 2.0),
        formants=tuple(float(f) for f in formants),
        bandwidths=tuple(float(b) for b in bandwidths),
        tilt=float(rng.uniform(0.3, 0.9)),
        noise_db=float(rng.uniform(-35, -25)),
    )


def _resonate(x: np.ndarray, freq: float, bandwidth: float, sr: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2 * np.pi * freq / sr
    return lfilter([1 - r], [1.0, -2 * r * np.cos(theta), r * r], x)


def synth_utterance(recipe: SpeakerRecipe, rng: np.random.Generator, duration: float,
                    sample_rate: int = 16000) -> np.ndarray:
    n = int(duration * sample_rate)
    out = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.08) * sample_rate)
    while pos < n:
        seg = min(int(rng.uniform(0.15, 0.4) * sample_rate), n - pos)
        t = np.arange(seg) / sample_rate
        f0 = recipe.f0 * rng.uniform(0.95, 1.05) * (1 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 6) * t))
        phase = np.cumsum(f0) / sample_rate + rng.uniform()
        source = 2 * (phase % 1.0) - 1
        source = lfilter([1.0], [1.0, -recipe.tilt], source)
        source += 0.05 * rng.standard_normal(seg)
        for f, bw in zip(recipe.formants, recipe.bandwidths):
            source = _resonate(source, f * rng.uniform(0.93, 1.07), bw, sample_rate)
        envelope = np.sin(np.pi * np.arange(seg) / seg) ** 2
        out[pos:pos + seg] += source * envelope * rng.uniform(0.6, 1.0)
        pos += seg + int(rng.uniform(0.03, 0.15) * sample_rate)
    peak = np.abs(out).max()
    if peak > 0:
        out *= 0.5 / peak
    out += 10 ** (recipe.noise_db / 20) * 0.5 * rng.standard_normal(n)
    return out.astype(np.float32)


def synth_corpus(num_speakers: int, utts_per_speaker: int, seed: int = 0,
                 sample_rate: int = 16000, min_duration: float = 2.0,
                 max_duration: float = 6.0) -> SynthCorpus:
    """Generate a deterministic corpus; the same arguments give identical audio."""
    if num_speakers < 2:
        raise ValueError("a speaker corpus needs at least two speakers")
    root = np.random.SeedSequence(seed)
    speaker_seqs = root.spawn(num_speakers)
    slots = np.random.default_rng(root.spawn(1)[0]).permutation(num_speakers)
    recipes, utterances = [], []
    for spk, seq in enumerate(speaker_seqs):
        recipe_seq, utt_seq = seq.spawn(2)
        recipe = _make_recipe(spk, int(slots[spk]), recipe_seq)
        recipes.append(recipe)
        for j, useq in enumerate(utt_seq.spawn(utts_per_speaker)):
            rng = np.random.default_rng(useq)
            duration = rng.uniform(min_duration, max_duration)
            utterances.append(Utterance(f"spk{spk:03d}/utt{j:03d}", spk,
                                        synth_utterance(recipe, rng, duration, sample_rate)))
    return SynthCorpus(recipes, utterances, sample_rate, seed)


def mel_statistics(waveform: np.ndarray, sample_rate: int = 16000, n_mels: int = 40) -> np.ndarray:
    """Mean and standard deviation of log-mel energies (25 ms / 10 ms frames)."""
    from .frontend import hz_to_mel, mel_to_hz

    win, hop, n_fft = 400, 160, 512
    frames = np.lib.stride_tricks.sliding_window_view(waveform.astype(np.float64), win)[::hop]
    power = np.abs(np.fft.rfft(frames * np.hamming(win), n_fft)) ** 2
    edges = mel_to_hz(np.linspace(hz_to_mel(0), hz_to_mel(sample_rate / 2), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1 / sample_rate)
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m:m + 3]
        fb[m] = np.clip(np.minimum((bins - lo) / (mid - lo), (hi - bins) / (hi - mid)), 0, None)
    logmel = np.log(power @ fb.T + 1e-10)
    return np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])


def probe_accuracy(corpus: SynthCorpus, n_train: int, ridge: float = 1e-2) -> float:
    """Held-out accuracy of a ridge linear probe on mel statistics.

    The probe fits the first ``n_train`` utterances of each speaker and is
    scored on the rest.
    """
    train, test = corpus.split(n_train)

    def design(c):
        return (np.stack([mel_statistics(u.waveform, c.sample_rate) for u in c.utterances]),
                np.array([u.speaker for u in c.utterances]))

    xtr, ytr = design(train)
    xte, yte = design(test)
    mu, sd = xtr.mean(axis=0), xtr.std(axis=0) + 1e-8
    xtr, xte = (xtr - mu) / sd, (xte - mu) / sd
    xtr = np.hstack([xtr, np.ones((len(xtr), 1))])
    xte = np.hstack([xte, np.ones((len(xte), 1))])
    targets = np.eye(corpus.num_speakers)[ytr]
    w = np.linalg.solve(xtr.T @ xtr + ridge * np.eye(xtr.shape[1]), xtr.T @ targets)
    return float(np.mean((xte @ w).argmax(axis=1) == yte))
