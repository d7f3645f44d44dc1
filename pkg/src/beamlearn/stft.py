"""Multichannel STFT analysis/synthesis and WAV file handling.

Default analysis setting is a 512-point FFT, 400-sample Hann window and a
160-sample shift at 16 kHz, used for both training and inference.  Synthesis
uses the biorthogonal window so that stft -> istft reconstructs the interior
of the signal.
"""

from __future__ import annotations

import dataclasses
import pathlib

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window


@dataclasses.dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    window_size: int = 400
    shift: int = 160
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.shift <= self.window_size <= self.fft_size):
            raise ValueError(
                f"need shift <= window_size <= fft_size, got "
                f"({self.fft_size}, {self.window_size}, {self.shift})"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self):
        return self.fft_size // 2 + 1


@dataclasses.dataclass(frozen=True)
class AudioClip:
    """Multichannel time-domain audio; samples has shape (D, N)."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def num_channels(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]


def _analysis_window(cfg: StftConfig) -> np.ndarray:
    return get_window(cfg.window, cfg.window_size, fftbins=True)


def num_frames(num_samples: int, cfg: StftConfig) -> int:
    return 1 + (num_samples - cfg.window_size) // cfg.shift


def stft(clip, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """STFT of a clip (or a (D, N) / (N,) array) -> (D, T, F) complex.

    The windowed frame is zero-padded symmetrically to fft_size.
    """
    if isinstance(clip, AudioClip):
        x = clip.samples
    else:
        x = np.atleast_2d(np.asarray(clip, dtype=np.float64))
    n = x.shape[-1]
    if n < cfg.window_size:
        raise ValueError(
            f"signal of {n} samples is shorter than one window "
            f"({cfg.window_size} samples)"
        )
    t = num_frames(n, cfg)
    win = _analysis_window(cfg)
    idx = np.arange(cfg.window_size)[None, :] + cfg.shift * np.arange(t)[:, None]
    frames = x[:, idx] * win  # (D, T, W)
    pad_left = (cfg.fft_size - cfg.window_size) // 2
    pad_right = cfg.fft_size - cfg.window_size - pad_left
    frames = np.pad(frames, [(0, 0), (0, 0), (pad_left, pad_right)])
    return np.fft.rfft(frames, n=cfg.fft_size, axis=-1)


def istft(spec: np.ndarray, cfg: StftConfig = StftConfig(),
          sample_rate: int = 16000) -> AudioClip:
    """Overlap-add synthesis; spec is (D, T, F) or (T, F)."""
    spec = np.asarray(spec)
    if spec.ndim == 2:
        spec = spec[None]
    if spec.shape[-1] != cfg.num_bins:
        raise ValueError(
            f"{spec.shape[-1]} frequency bins inconsistent with fft_size "
            f"{cfg.fft_size} (expected {cfg.num_bins})"
        )
    d, t, _ = spec.shape
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=-1)
    pad_left = (cfg.fft_size - cfg.window_size) // 2
    frames = frames[..., pad_left:pad_left + cfg.window_size]
    win = _analysis_window(cfg)
    n = (t - 1) * cfg.shift + cfg.window_size
    out = np.zeros((d, n))
    wsum = np.zeros(n)
    for i in range(t):
        sl = slice(i * cfg.shift, i * cfg.shift + cfg.window_size)
        out[:, sl] += frames[:, i] * win
        wsum[sl] += win * win
    # biorthogonal synthesis: divide by the overlapped squared window
    nz = wsum > 1e-10 * wsum.max()
    out[:, nz] /= wsum[nz]
    return AudioClip(out, sample_rate)


# ---------------------------------------------------------------------------
# WAV I/O (RIFF, 16-bit PCM and 32-bit float)


def read_wav(path) -> AudioClip:
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    return AudioClip(samples.T, rate)


def read_wavs(paths) -> AudioClip:
    """Stack a per-channel set of mono WAV files into one clip."""
    clips = [read_wav(p) for p in paths]
    rate = clips[0].sample_rate
    if any(c.sample_rate != rate for c in clips):
        raise ValueError("channel files have mismatching sample rates")
    n = min(c.num_samples for c in clips)
    return AudioClip(np.concatenate([c.samples[:, :n] for c in clips]), rate)


def write_wav(path, clip: AudioClip, dtype: str = "float32"):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = clip.samples.T
    if dtype == "float32":
        wavfile.write(str(path), clip.sample_rate, data.astype(np.float32))
    elif dtype == "float64":
        wavfile.write(str(path), clip.sample_rate, np.ascontiguousarray(data))
    elif dtype == "int16":
        scaled = np.clip(np.round(data * 32768.0), -32768, 32767)
        wavfile.write(str(path), clip.sample_rate, scaled.astype(np.int16))
    else:
        raise ValueError(f"unsupported output format {dtype!r}")
