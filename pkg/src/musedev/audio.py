"""Mono audio containers, WAV I/O, framing/STFT, mixing, and energy utilities."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

CANONICAL_RATE = 16000
PCM_SCALE = 32768  # symmetric scale keeps PCM16 -> float -> PCM16 lossless


class WavFormatError(ValueError):
    """Raised for malformed RIFF/WAVE data."""


class UnsupportedWavError(ValueError):
    """Raised for well-formed WAV files we do not handle (stereo, non-PCM16)."""


class SampleRateMismatchError(ValueError):
    """Raised when an operation combines signals of different sample rates."""


@dataclass(frozen=True)
class AudioSignal:
    """Mono PCM samples (dimensionless amplitudes) plus a sample rate.

    Valid playback waveforms keep every sample inside [-1, 1]; intermediate
    material (e.g. SNR-scaled noise before mixing) may exceed that, so range
    is enforced where signals are rendered or written, not here.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def energy(self) -> float:
        return float(np.sum(self.samples * self.samples))

    def in_amplitude_range(self) -> bool:
        return bool(np.all(np.abs(self.samples) <= 1.0))


@dataclass(frozen=True)
class FramePlan:
    """Analysis framing: frame_len samples per frame, advancing by hop."""

    frame_len: int
    hop: int

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len):
            raise ValueError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")

    def num_frames(self, total_samples: int) -> int:
        if total_samples < self.frame_len:
            raise ValueError(f"signal of {total_samples} samples is shorter than one frame ({self.frame_len})")
        return (total_samples - self.frame_len) // self.hop + 1


# 16 ms frames with 50% overlap at the canonical rate.
DEFAULT_PLAN = FramePlan(frame_len=256, hop=128)


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude spectrogram, rows = frames, columns = frequency bins."""

    magnitudes: np.ndarray
    frame_hop: int
    window_len: int
    sample_rate: int

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if mags.ndim != 2:
            raise ValueError("magnitudes must be 2-D (frames x bins)")
        if mags.shape[1] != self.window_len // 2 + 1:
            raise ValueError("bin count must equal window_len/2 + 1")
        if mags.size and mags.min() < 0:
            raise ValueError("magnitudes must be non-negative")
        mags.setflags(write=False)
        object.__setattr__(self, "magnitudes", mags)

    @property
    def num_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.window_len


def frame_signal(samples: np.ndarray, plan: FramePlan) -> np.ndarray:
    """Slice samples into a (num_frames, frame_len) view (no copy)."""
    samples = np.ascontiguousarray(samples)
    n = plan.num_frames(samples.size)
    stride = samples.strides[0]
    return np.lib.stride_tricks.as_strided(
        samples, shape=(n, plan.frame_len), strides=(plan.hop * stride, stride), writeable=False
    )


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (the spectral-analysis variant)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clip to [-1, 1] and quantize to int16 at the symmetric +/-32768 scale."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    ints = np.rint(clipped * PCM_SCALE)
    return np.clip(ints, -32768, 32767).astype("<i2")


def read_wav(path) -> AudioSignal:
    """Read a mono PCM16 WAV file; samples come back in [-1, 1] (divide by 32768)."""
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            n = wav.getnframes()
            raw = wav.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise UnsupportedWavError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise UnsupportedWavError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if n < 1:
        raise WavFormatError(f"{path}: empty audio payload")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioSignal(pcm.astype(np.float64) / PCM_SCALE, rate)


def write_wav(signal: AudioSignal, path) -> None:
    """Write mono PCM16; samples are clipped to [-1, 1] before quantization."""
    pcm = quantize_pcm16(signal.samples)
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(signal.sample_rate)
        wav.writeframes(pcm.tobytes())


def _fit_length(addend: np.ndarray, length: int) -> np.ndarray:
    if addend.size == length:
        return addend
    if addend.size > length:
        return addend[:length]
    return np.concatenate([addend, np.zeros(length - addend.size)])


def mix(base: AudioSignal, addend: AudioSignal, weight: float) -> AudioSignal:
    """Return clamp(base + weight * addend); addend is padded/truncated to base length."""
    if base.sample_rate != addend.sample_rate:
        raise SampleRateMismatchError(
            f"cannot mix {base.sample_rate} Hz with {addend.sample_rate} Hz"
        )
    if weight < 0:
        raise ValueError("mix weight must be non-negative")
    add = _fit_length(addend.samples, len(base))
    out = np.clip(base.samples + weight * add, -1.0, 1.0)
    return AudioSignal(out, base.sample_rate)


def stft(signal: AudioSignal, plan: FramePlan) -> Spectrogram:
    """Hann-windowed magnitude STFT; frame count = floor((T - frame_len)/hop) + 1."""
    spec = stft_complex(signal.samples, plan)
    return Spectrogram(np.abs(spec), plan.hop, plan.frame_len, signal.sample_rate)


def stft_complex(samples: np.ndarray, plan: FramePlan) -> np.ndarray:
    """Complex STFT used where linear combination of spectra matters."""
    frames = frame_signal(np.asarray(samples, dtype=np.float64), plan)
    return np.fft.rfft(frames * hann_window(plan.frame_len), axis=1)


def istft(spectrum: np.ndarray, plan: FramePlan, length: int | None = None) -> np.ndarray:
    """Overlap-add inverse of stft_complex with Hann synthesis weighting."""
    window = hann_window(plan.frame_len)
    frames = np.fft.irfft(spectrum, n=plan.frame_len, axis=1) * window
    n = spectrum.shape[0]
    total = (n - 1) * plan.hop + plan.frame_len
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n):
        start = i * plan.hop
        out[start : start + plan.frame_len] += frames[i]
        norm[start : start + plan.frame_len] += window * window
    out /= np.maximum(norm, 1e-12)
    if length is not None:
        out = _fit_length(out, length)
    return out


def measure_snr_db(reference: AudioSignal, noise: AudioSignal) -> float:
    """10*log10(E_ref / E_noise)."""
    e_ref = reference.energy()
    e_noise = noise.energy()
    if e_noise <= 0.0:
        return float("inf")
    return 10.0 * np.log10(e_ref / e_noise)


def scale_to_snr(noise: AudioSignal, reference: AudioSignal, snr_db: float) -> AudioSignal:
    """Scale noise so that 10*log10(E_ref/E_noise) equals snr_db."""
    if noise.sample_rate != reference.sample_rate:
        raise SampleRateMismatchError("noise and reference sample rates differ")
    e_ref = reference.energy()
    e_noise = noise.energy()
    if e_ref <= 0.0:
        raise ValueError("reference signal is silent")
    if e_noise <= 0.0:
        raise ValueError("noise signal is silent")
    target = e_ref / (10.0 ** (snr_db / 10.0))
    factor = np.sqrt(target / e_noise)
    return AudioSignal(noise.samples * factor, noise.sample_rate)
