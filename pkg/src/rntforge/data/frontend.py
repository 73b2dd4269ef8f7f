"""Log-mel filterbank features and frame stacking."""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, DomainError


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    win_length: int = 400  # 25 ms
    hop_length: int = 160  # 10 ms
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 20.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    stack: int = 8
    stack_shift: int = 3  # 30 ms in raw hops


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Center frequency (Hz) of every mel bin."""
    pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(pts[1:-1])


def mel_filterbank(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1), peak weight 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(n_samples: int, cfg: FrontendConfig = FrontendConfig()) -> int:
    return (n_samples - cfg.win_length) // cfg.hop_length + 1


def logmel(waveform, cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """(T_raw, n_mels) natural-log mel energies of a mono waveform."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size < cfg.win_length:
        raise DomainError(f"waveform needs at least {cfg.win_length} samples, got {x.size}")
    T = num_frames(x.size, cfg)
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(T)[:, None]
    frames = x[idx] * np.hanning(cfg.win_length)
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))


def stack_frames(frames, stack: int = 8, shift: int = 3) -> np.ndarray:
    """Concatenate ``stack`` consecutive frames every ``shift`` frames.

    Incomplete trailing windows are dropped.
    """
    frames = np.asarray(frames, dtype=np.float64)
    T_raw = frames.shape[0]
    if T_raw < stack:
        raise DomainError(f"need at least {stack} frames to stack, got {T_raw}")
    T = (T_raw - stack) // shift + 1
    idx = np.arange(stack)[None, :] + shift * np.arange(T)[:, None]
    return frames[idx].reshape(T, stack * frames.shape[1])


def stacked_length(T_raw: int, stack: int = 8, shift: int = 3) -> int:
    return (T_raw - stack) // shift + 1


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM WAV as float samples in [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise DataError(f"{path}: only mono 16-bit PCM is supported")
        rate = wf.getframerate()
        data = np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2")
    return data.astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate: int = 16000) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())
