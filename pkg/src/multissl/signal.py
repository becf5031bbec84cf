"""Binaural signal processing: waveforms, spectrograms, slicing, spatial rendering.

All functions here are pure (any randomness comes in through an explicit
numpy Generator), so they are safe to call from any number of workers.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEED_OF_SOUND_M_S = 343.0
HEAD_SPACING_M = 0.18

DEFAULT_SAMPLE_RATE = 16_000
DEFAULT_WINDOW = 512
DEFAULT_HOP = 256

# int16 scale chosen so that read(write(x)) is a fixed point of the codec
# (re-encoding a decoded waveform is bit-exact).
_PCM_SCALE = 32768.0


class SignalError(ValueError):
    """Raised when a signal operation is handed invalid input."""


@dataclass(frozen=True)
class Waveform:
    """Two-channel (binaural) audio clip.

    samples: float array of shape (2, L), amplitudes in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] != 2:
            raise SignalError("binaural required: expected samples of shape (2, L)")
        if s.shape[1] < 1:
            raise SignalError("waveform must contain at least one sample")
        if not np.all(np.isfinite(s)):
            raise SignalError("waveform contains non-finite samples")
        if float(np.max(np.abs(s))) > 1.0:
            raise SignalError("waveform amplitudes must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise SignalError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def slice(self, spec: "SliceSpec") -> "Waveform":
        """Extract the sample range covered by a SliceSpec."""
        n = int(round(spec.length * self.sample_rate))
        i0 = int(round(spec.t_start * self.sample_rate))
        i0 = min(i0, self.num_samples - n)  # guard sample-rounding at the clip end
        if i0 < 0:
            raise SignalError("slice extends past end of waveform")
        return Waveform(self.samples[:, i0 : i0 + n], self.sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """Two-channel log-magnitude time-frequency grid of shape (2, F, T)."""

    values: np.ndarray
    window: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[0] != 2:
            raise SignalError("spectrogram values must have shape (2, F, T)")
        if v.shape[1] != self.window // 2 + 1:
            raise SignalError(
                f"freq bins {v.shape[1]} inconsistent with window {self.window}"
            )
        if not np.all(np.isfinite(v)):
            raise SignalError("spectrogram contains non-finite values")
        if np.any(v < 0):
            raise SignalError("log1p magnitudes must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def freq_bins(self) -> int:
        return self.values.shape[1]

    @property
    def time_frames(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SliceSpec:
    """A [t_start, t_start + length) window inside a clip of parent_length seconds."""

    t_start: float
    length: float
    parent_length: float

    def __post_init__(self):
        if self.length <= 0:
            raise SignalError("slice length must be positive")
        if self.t_start < 0 or self.t_start > self.parent_length - self.length + 1e-9:
            raise SignalError("slice does not fit inside its parent clip")


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def stft_spectrogram(
    w: Waveform, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP
) -> Spectrogram:
    """Per-channel magnitude STFT with a Hann window and log(1+x) compression.

    No padding: T = 1 + floor((L - window) / hop). log1p avoids the -inf of a
    dB scale at silence without needing a floor constant.
    """
    samples = np.asarray(w.samples, dtype=np.float64)
    if samples.shape[0] != 2:
        raise SignalError("binaural required")
    n = samples.shape[1]
    if window <= 0 or (window & (window - 1)) != 0:
        raise SignalError("window must be a power of two")
    if hop <= 0 or hop > window:
        raise SignalError("hop must satisfy 0 < hop <= window")
    if n < window:
        raise SignalError("waveform too short: need at least one full window")

    t = 1 + (n - window) // hop
    idx = np.arange(t)[:, None] * hop + np.arange(window)[None, :]
    frames = samples[:, idx] * hann_window(window)  # (2, T, window)
    mag = np.abs(np.fft.rfft(frames, axis=-1))  # (2, T, F)
    values = np.log1p(mag).transpose(0, 2, 1).astype(np.float32)
    return Spectrogram(values, window=window, hop=hop, sample_rate=w.sample_rate)


def normalize_spectrogram(spec: Spectrogram, eps: float = 1e-6) -> np.ndarray:
    """Standardize jointly over both channels (zero mean, unit variance).

    Joint (not per-channel) statistics keep the interaural level difference
    between the two channels intact.
    """
    v = spec.values.astype(np.float32)
    return (v - v.mean()) / (v.std() + eps)


def slice_pair(
    clip_length: float, slice_length: float, rng: np.random.Generator
) -> tuple[SliceSpec, SliceSpec, float]:
    """Draw an unordered pair of equal-length slices from one clip.

    The gap between the slice starts is drawn uniformly from
    [0, clip_length - slice_length], then the pair is placed uniformly and
    randomly swapped so neither slice is distinguished as "first". Returns
    the two slices and the normalized gap delta in [0, 1].
    """
    if slice_length <= 0:
        raise SignalError("slice length must be positive")
    if slice_length >= clip_length:
        raise SignalError("clip too short for two distinct slices")
    span = clip_length - slice_length
    gap = float(rng.uniform(0.0, span))
    lo = float(rng.uniform(0.0, span - gap))
    first = SliceSpec(lo, slice_length, clip_length)
    second = SliceSpec(lo + gap, slice_length, clip_length)
    if rng.random() < 0.5:
        first, second = second, first
    return first, second, gap / span


def wrap_azimuth(theta_deg: float) -> float:
    """Wrap an angle in degrees to [-180, 180). Idempotent."""
    return ((theta_deg + 180.0) % 360.0) - 180.0


def itd_seconds(theta_deg: float) -> float:
    """Signed interaural time delay for a source at the given azimuth."""
    return HEAD_SPACING_M / SPEED_OF_SOUND_M_S * np.sin(np.radians(theta_deg))


def _delayed(x: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return x
    out = np.zeros_like(x)
    out[n:] = x[: x.shape[0] - n]
    return out


def render_binaural(
    sources: list[tuple[float, np.ndarray]],
    mic_rotation: float = 0.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Constant-power pan plus integer-sample interaural delay, summed over sources.

    Each source is a (azimuth_degrees, mono_samples) pair with azimuths in
    [-180, 180). Gains are sqrt((1 -/+ sin(theta'))/2) for left/right with
    theta' the azimuth relative to the rotated microphone; the far channel is
    delayed by round(|ITD| * sample_rate) whole samples (no fractional
    interpolation, so rendering is exactly repeatable). The mix is clipped
    to [-1, 1].
    """
    if not sources:
        raise SignalError("render_binaural requires at least one source")
    lengths = {len(np.asarray(m)) for _, m in sources}
    if len(lengths) != 1:
        raise SignalError("all source waveforms must share the same length")
    n = lengths.pop()
    if n < 1:
        raise SignalError("source waveforms must be non-empty")

    # Reducing the rotation modulo 360 first makes full-turn rotations
    # bit-exact no-ops.
    rot = mic_rotation % 360.0
    mix = np.zeros((2, n), dtype=np.float64)
    for azimuth, mono in sources:
        if not (-180.0 <= azimuth < 180.0):
            raise SignalError("source azimuths must lie in [-180, 180)")
        mono = np.asarray(mono, dtype=np.float64)
        if mono.ndim != 1:
            raise SignalError("sources must be mono (1-D) waveforms")
        theta = wrap_azimuth(azimuth - rot)
        s = np.sin(np.radians(theta))
        left = np.sqrt((1.0 - s) / 2.0) * mono
        right = np.sqrt((1.0 + s) / 2.0) * mono
        delay = int(round(abs(itd_seconds(theta)) * sample_rate))
        if s > 0:  # source on the right: left ear is farther
            left = _delayed(left, delay)
        elif s < 0:
            right = _delayed(right, delay)
        mix[0] += left
        mix[1] += right
    np.clip(mix, -1.0, 1.0, out=mix)
    return Waveform(mix.astype(np.float32), sample_rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write as 2-channel 16-bit PCM WAV."""
    q = np.clip(np.round(w.samples * _PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(q.T.tobytes())


def read_wav(path: str | Path) -> Waveform:
    """Read a 2-channel 16-bit PCM WAV written by write_wav."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 2:
            raise SignalError("binaural required: WAV must have 2 channels")
        if f.getsampwidth() != 2:
            raise SignalError("expected 16-bit PCM WAV")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    q = np.frombuffer(raw, dtype="<i2").reshape(-1, 2).T
    return Waveform((q / _PCM_SCALE).astype(np.float32), rate)
