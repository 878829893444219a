"""Waveform loading and log-mel feature extraction.

Pipeline constants: 16 kHz mono PCM16 input, 25 ms Hann window (400 samples),
10 ms hop (160 samples), 512-point FFT, 80 triangular HTK-mel filters spanning
0..8000 Hz, natural log with a 1e-6 floor. No pre-emphasis, no centering, no
normalization; frame count is 1 + floor((N - 400) / 160).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, WaveTooShortError

SAMPLE_RATE = 16000
WINDOW = 400
HOP = 160
N_FFT = 512
N_MELS = 80
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-6
PCM_SCALE = 32768.0


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate_hz: int


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (frames, N_MELS) float64

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def load_wav(path) -> Waveform:
    """Read a mono PCM16 RIFF file; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise FormatError("wav compression type %r not supported" % (w.getcomptype(),))
            if w.getnchannels() != 1:
                raise FormatError("wav channels: expected 1, got %d" % (w.getnchannels(),))
            if w.getsampwidth() != 2:
                raise FormatError(
                    "wav bit depth: expected 16-bit, got %d-bit" % (8 * w.getsampwidth(),)
                )
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FormatError("not a RIFF/WAVE file: %s" % (exc,)) from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return Waveform(samples=samples, sample_rate_hz=rate)


def save_wav(wave_out: Waveform, path):
    """Write mono PCM16; values are clipped to [-1, 32767/32768]."""
    pcm = np.clip(np.round(wave_out.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(wave_out.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_matrix(n_mels: int = N_MELS, n_fft: int = N_FFT,
                          sample_rate: int = SAMPLE_RATE,
                          f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters, peak weight 1 each.

    Filter centers are equally spaced on the HTK mel scale between f_min and
    f_max; filter i rises from edge i-1 to center i and falls to edge i+1.
    """
    if n_mels < 1 or f_max <= f_min or f_max > sample_rate / 2.0:
        raise InvalidArgumentError("bad filterbank parameters")
    n_bins = n_fft // 2 + 1
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_hz = np.arange(n_bins) * (sample_rate / n_fft)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        left, center, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


_FILTERBANK_CACHE: dict = {}


def _filterbank() -> np.ndarray:
    key = (N_MELS, N_FFT, SAMPLE_RATE)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank_matrix()
    return _FILTERBANK_CACHE[key]


def log_mel(wave_in: Waveform) -> MelSpectrogram:
    """Frame, window, FFT, mel-project, and log a 16 kHz waveform."""
    if wave_in.sample_rate_hz != SAMPLE_RATE:
        raise InvalidArgumentError(
            "expected %d Hz input, got %d Hz" % (SAMPLE_RATE, wave_in.sample_rate_hz)
        )
    x = np.asarray(wave_in.samples, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError("waveform must be 1-D")
    if x.size < WINDOW:
        raise WaveTooShortError(
            "waveform has %d samples; need at least %d" % (x.size, WINDOW)
        )
    n_frames = 1 + (x.size - WINDOW) // HOP
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(WINDOW)
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    mel = power @ _filterbank().T
    return MelSpectrogram(values=np.log(mel + LOG_FLOOR))
