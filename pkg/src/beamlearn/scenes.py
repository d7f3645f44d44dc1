"""Synthetic multichannel scenes with a known speech/noise decomposition.

The mixture is y = x + n where x is the source image at the array (after
anechoic far-field steering or a synthetic exponential-decay room response)
and n is white or spatially diffuse noise.  Keeping both components allows
oracle masks and exact SNR bookkeeping.
"""

from __future__ import annotations

import dataclasses
import json
import math
import pathlib

import numpy as np
from scipy.signal import fftconvolve

from .beamformer import apply_beamformer
from .stft import AudioClip, StftConfig, stft, write_wav

SPEED_OF_SOUND = 343.0
DIFFUSE_WAVES = 64


@dataclasses.dataclass
class SceneSpec:
    num_channels: int = 6
    duration_sec: float = 3.0
    sample_rate: int = 16000
    snr_db: float = 0.0
    seed: int = 0
    source: str = "bursts"  # "bursts" or path to a mono WAV
    propagation: str = "anechoic"  # or "rir"
    direction_deg: float | None = None  # None -> drawn from seed
    t60: float = 0.3  # seconds, rir mode only
    noise_model: str = "diffuse"  # or "white"
    spacing: float = 0.04  # uniform linear array, meters

    def __post_init__(self):
        if self.num_channels < 2:
            raise ValueError("scenes need at least two channels")
        if not math.isfinite(self.snr_db):
            raise ValueError("requested SNR must be finite")
        if self.propagation not in ("anechoic", "rir"):
            raise ValueError(f"unknown propagation {self.propagation!r}")
        if self.noise_model not in ("white", "diffuse"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        if not 0.0 <= self.t60 <= 0.7:
            raise ValueError("t60 must lie in [0, 0.7] seconds")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class SceneBundle:
    spec: SceneSpec
    mixture: AudioClip
    speech_image: AudioClip  # x, per channel
    noise: AudioClip  # n, per channel
    oracle_mask: np.ndarray  # (2, T, F) binary, class 0 = speech
    direction_deg: float


def _burst_source(rng, n, rate):
    """Amplitude-modulated, spectrally tilted noise bursts with gaps."""
    sig = np.zeros(n)
    pos = 0
    while pos < n:
        burst_len = int(rng.uniform(0.2, 0.5) * rate)
        gap_len = int(rng.uniform(0.05, 0.2) * rate)
        stop = min(pos + burst_len, n)
        length = stop - pos
        if length > 0:
            white = rng.standard_normal(length)
            # one-pole lowpass gives the downward spectral tilt
            tilted = np.empty(length)
            acc = 0.0
            for i in range(length):
                acc = 0.72 * acc + white[i]
                tilted[i] = acc
            t = np.arange(length) / rate
            env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t
                                     + rng.uniform(0, 2 * np.pi))
            fade = np.minimum(1.0, np.minimum(np.arange(length),
                                              length - 1 - np.arange(length))
                              / max(1, int(0.01 * rate)))
            sig[pos:stop] = tilted * env * fade
        pos = stop + gap_len
    peak = np.max(np.abs(sig))
    if peak > 0:
        sig = sig / peak
    return sig


def _steer(source, delays, rate):
    """Fractional-delay steering: per-channel e^{-j omega tau} in the
    full-signal frequency domain.  source (N,), delays (D,) seconds."""
    n = source.shape[0]
    spec = np.fft.rfft(source)
    if n % 2 == 0:
        spec[-1] = 0.0  # the Nyquist bin cannot carry a fractional delay
    omega = 2 * np.pi * np.fft.rfftfreq(n, d=1.0 / rate)
    shifted = spec[None, :] * np.exp(-1j * omega[None, :] * delays[:, None])
    return np.fft.irfft(shifted, n=n, axis=-1)


def _array_delays(direction_deg, num_channels, spacing):
    theta = math.radians(direction_deg)
    positions = np.arange(num_channels) * spacing
    return positions * math.sin(theta) / SPEED_OF_SOUND


def _rir_bank(rng, spec: SceneSpec):
    """Exponential-decay random-phase room responses, one per channel.

    The direct path keeps the far-field inter-channel delays (rounded to
    samples); t60 = 0 degenerates to the direct path only.
    """
    rate = spec.sample_rate
    delays = _array_delays(_draw_direction(rng, spec), spec.num_channels,
                           spec.spacing)
    base = int(round(0.002 * rate))  # small bulk delay keeps taps causal
    if spec.t60 <= 0.0:
        length = base + int(np.ceil(np.abs(delays).max() * rate)) + 1
        h = np.zeros((spec.num_channels, length))
        for d in range(spec.num_channels):
            h[d, base + int(round(delays[d] * rate))] = 1.0
        return h
    length = base + int(spec.t60 * rate)
    decay = np.exp(-3.0 * math.log(10.0) * np.arange(length) / (spec.t60 * rate))
    h = rng.standard_normal((spec.num_channels, length)) * decay
    for d in range(spec.num_channels):
        tap = base + int(round(delays[d] * rate))
        h[d, :tap] = 0.0
        h[d, tap] = 2.0 * decay[tap]  # dominant direct path
    return h


def _draw_direction(rng, spec: SceneSpec):
    if spec.direction_deg is not None:
        return float(spec.direction_deg)
    return float(rng.uniform(-60.0, 60.0))


def _diffuse_noise(rng, n, spec: SceneSpec):
    """Superposition of plane waves from random directions; coherence
    between adjacent microphones falls off with frequency."""
    omega = 2 * np.pi * np.fft.rfftfreq(n, d=1.0 / spec.sample_rate)
    out = np.zeros((spec.num_channels, omega.shape[0]), dtype=np.complex128)
    positions = np.arange(spec.num_channels) * spec.spacing
    for _ in range(DIFFUSE_WAVES):
        theta = rng.uniform(-np.pi, np.pi)
        tau = positions * math.sin(theta) / SPEED_OF_SOUND
        s = np.fft.rfft(rng.standard_normal(n))
        out += s[None, :] * np.exp(-1j * omega[None, :] * tau[:, None])
    return np.fft.irfft(out, n=n, axis=-1) / math.sqrt(DIFFUSE_WAVES)


def synth_scene(spec: SceneSpec, stft_cfg: StftConfig = StftConfig()):
    """Build one scene; deterministic given spec.seed.

    The noise is scaled so the broadband SNR on channel 0 matches
    spec.snr_db exactly.  Raises when the source image or the noise has
    zero power on channel 0.
    """
    rng = np.random.default_rng(spec.seed)
    rate = spec.sample_rate
    n = int(round(spec.duration_sec * rate))

    if spec.source == "bursts":
        source = _burst_source(rng, n, rate)
    else:
        from .stft import read_wav

        clip = read_wav(spec.source)
        source = clip.samples[0]
        if source.shape[0] < n:
            source = np.pad(source, (0, n - source.shape[0]))
        source = source[:n]

    direction = _draw_direction(np.random.default_rng(spec.seed + 1), spec)
    if spec.propagation == "anechoic":
        delays = _array_delays(direction, spec.num_channels, spec.spacing)
        x = _steer(source, delays, rate)
    else:
        h = _rir_bank(rng, spec)
        x = np.stack([fftconvolve(source, h[d])[:n]
                      for d in range(spec.num_channels)])

    if spec.noise_model == "white":
        noise = rng.standard_normal((spec.num_channels, n))
    else:
        noise = _diffuse_noise(rng, n, spec)

    px = float(np.sum(x[0] ** 2))
    pn = float(np.sum(noise[0] ** 2))
    if px <= 0.0:
        raise ValueError("source image has zero power on channel 0")
    if pn <= 0.0:
        raise ValueError("noise has zero power on channel 0")
    noise = noise * math.sqrt(px / (pn * 10.0 ** (spec.snr_db / 10.0)))

    mixture = x + noise
    noise = mixture - x  # keep y = x + n exact in float arithmetic
    spec_x = stft(x, stft_cfg)
    spec_n = stft(noise, stft_cfg)
    speech_wins = (np.abs(spec_x[0]) ** 2 > np.abs(spec_n[0]) ** 2)
    oracle = np.stack([speech_wins, ~speech_wins]).astype(np.float64)

    return SceneBundle(
        spec=spec,
        mixture=AudioClip(mixture, rate),
        speech_image=AudioClip(x, rate),
        noise=AudioClip(noise, rate),
        oracle_mask=oracle,
        direction_deg=direction,
    )


def snr_metrics(bundle: SceneBundle, weights,
                stft_cfg: StftConfig = StftConfig()):
    """SNR report in the STFT domain.

    Input SNR per channel and the output SNR of beamforming the speech and
    noise components separately with ``weights`` (F, D).  Gains in dB are
    reported against channel 0 and against the best input channel.
    """
    spec_x = stft(bundle.speech_image, stft_cfg)
    spec_n = stft(bundle.noise, stft_cfg)
    px = np.sum(np.abs(spec_x) ** 2, axis=(1, 2))
    pn = np.sum(np.abs(spec_n) ** 2, axis=(1, 2))
    if np.any(pn <= 0.0):
        raise ValueError("noise component has zero energy on some channel")
    input_snr_db = 10.0 * np.log10(px / pn)

    xhat = apply_beamformer(spec_x, weights)
    nhat = apply_beamformer(spec_n, weights)
    out_pn = float(np.sum(np.abs(nhat) ** 2))
    if out_pn <= 0.0:
        raise ValueError("beamformed noise has zero energy")
    output_snr_db = 10.0 * math.log10(float(np.sum(np.abs(xhat) ** 2)) / out_pn)

    best = float(np.max(input_snr_db))
    return {
        "input_snr_db": [float(v) for v in input_snr_db],
        "output_snr_db": output_snr_db,
        "gain_vs_ref_db": output_snr_db - float(input_snr_db[0]),
        "gain_vs_best_db": output_snr_db - best,
    }


def save_scene(bundle: SceneBundle, out_dir, name):
    """Write mixture/components as float64 WAVs plus a JSON sidecar.

    Returns a manifest record for the trainer.
    """
    out_dir = pathlib.Path(out_dir)
    paths = {}
    for key, clip in (("mixture", bundle.mixture),
                      ("speech_image", bundle.speech_image),
                      ("noise", bundle.noise)):
        rel = f"{name}_{key}.wav"
        write_wav(out_dir / rel, clip, dtype="float64")
        paths[key] = rel
    sidecar = {
        "scene": bundle.spec.to_dict(),
        "direction_deg": bundle.direction_deg,
        "files": paths,
    }
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return {
        "id": name,
        "wav": paths["mixture"],
        "oracle": {"speech_image": paths["speech_image"],
                   "noise": paths["noise"]},
    }
