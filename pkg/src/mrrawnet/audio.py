"""16 kHz mono PCM-16 WAV input/output (no resampling)."""

from __future__ import annotations

import wave
from pathlib import Path
from typing import Union

import numpy as np

SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    pass


def read_wav(path: Union[str, Path], sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a mono PCM-16 WAV as float32 in [-1, 1). Other formats are rejected."""
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, frames = (f.getnchannels(), f.getsampwidth(),
                                             f.getframerate(), f.getnframes())
            raw = f.readframes(frames)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: {exc}") from None
    if rate != sample_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if channels != 1:
        raise AudioFormatError(f"{path}: {channels} channels, expected mono")
    if width != 2:
        raise AudioFormatError(f"{path}: {8 * width}-bit samples, expected 16-bit PCM")
    return (np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0)


def write_wav(path: Union[str, Path], waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as mono PCM-16; values outside are clipped."""
    pcm = np.clip(np.round(np.asarray(waveform, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.astype("<i2").tobytes())


class WavStore:
    """Read-only mapping from trial keys to waveforms under a root directory.

    Keys are paths relative to ``root``; a missing ``.wav`` suffix is added.
    """

    def __init__(self, root: Union[str, Path], sample_rate: int = SAMPLE_RATE):
        self.root = Path(root)
        self.sample_rate = sample_rate

    def path(self, key: str) -> Path:
        p = self.root / key
        return p if p.suffix == ".wav" else p.with_name(p.name + ".wav")

    def __getitem__(self, key: str) -> np.ndarray:
        p = self.path(key)
        if not p.is_file():
            raise KeyError(key)
        return read_wav(p, self.sample_rate)

    def __contains__(self, key: str) -> bool:
        return self.path(key).is_file()
