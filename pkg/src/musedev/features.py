"""Frame-wise feature streams, DTW alignment, and the four-component deviation vector.

Given an original/perturbed signal pair the pipeline measures how far apart
they are in pitch, rhythm, timbre, and loudness; the four aggregates form a
FeatureDeviationVector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dct, rfft
from scipy.spatial.distance import cdist

from musedev.audio import DEFAULT_PLAN, AudioSignal, FramePlan, frame_signal, hann_window

PITCH_MIN_HZ = 27.5  # A0
PITCH_MAX_HZ = 4186.01  # C8, the top of the 88-note span


@dataclass(frozen=True)
class PitchConfig:
    """Harmonic-sum pitch search over a semitone-spaced candidate grid."""

    pitch_min: float = PITCH_MIN_HZ
    pitch_max: float = PITCH_MAX_HZ
    harmonic_count: int = 5
    fft_size: int = 4096
    silence_energy: float = 1e-6

    def candidate_grid(self) -> np.ndarray:
        n = int(np.floor(12.0 * np.log2(self.pitch_max / self.pitch_min))) + 1
        return self.pitch_min * 2.0 ** (np.arange(n) / 12.0)


@dataclass(frozen=True)
class FeatureConfig:
    plan: FramePlan = DEFAULT_PLAN
    pitch: PitchConfig = field(default_factory=PitchConfig)
    n_coeffs: int = 13
    n_mel_filters: int = 26
    power_mean_exponent: float = 6.0
    log_energy_floor: float = 1e-10
    # ambience level below which a mel band reads as silent; keeps the log-mel
    # from treating the synthetic-signal void under real-world noise floors
    # as meaningful timbre
    mel_floor: float = 0.3


DEFAULT_CONFIG = FeatureConfig()


@dataclass(frozen=True)
class PitchEstimate:
    omega0: float  # Hz; 0 encodes an unvoiced/silent frame
    salience: float


@dataclass(frozen=True)
class FeatureSeries:
    kind: str  # pitch | timbre | loudness
    values: np.ndarray  # (frames,) for pitch/loudness, (frames, coeffs) for timbre

    def __post_init__(self):
        if self.kind not in ("pitch", "timbre", "loudness"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("feature series cannot be empty")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DtwResult:
    path: np.ndarray  # (steps, 2) index pairs
    frame_deviations: np.ndarray  # per-step metric values
    total_cost: float


@dataclass(frozen=True)
class FeatureDeviationVector:
    d_p: float
    d_r: float
    d_t: float
    d_l: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_p, self.d_r, self.d_t, self.d_l])

    def to_json(self) -> str:
        return json.dumps({"d_p": self.d_p, "d_r": self.d_r, "d_t": self.d_t, "d_l": self.d_l})

    @classmethod
    def from_json(cls, text: str) -> "FeatureDeviationVector":
        obj = json.loads(text)
        return cls(float(obj["d_p"]), float(obj["d_r"]), float(obj["d_t"]), float(obj["d_l"]))


FEATURE_NAMES = ("d_p", "d_r", "d_t", "d_l")


# ---------------------------------------------------------------------------
# pitch


@lru_cache(maxsize=32)
def _harmonic_lookup(config: PitchConfig, sample_rate: int, n_bins: int):
    grid = config.candidate_grid()
    m = np.arange(1, config.harmonic_count + 1)
    positions = grid[:, None] * m[None, :] * config.fft_size / sample_rate
    idx = np.floor(positions).astype(int)
    frac = positions - idx
    valid = idx < n_bins - 1
    idx = np.clip(idx, 0, n_bins - 2)
    return grid, 1.0 / m, idx, frac, valid


def _harmonic_scores(spectra: np.ndarray, sample_rate: int, config: PitchConfig) -> np.ndarray:
    """Score every candidate for every frame: sum_m |X(m*f)| / m.

    The 1/m taper breaks the octave tie a flat sum has on quasi-pure tones
    (the half-frequency candidate sees the same bins through its even
    harmonics).
    """
    _, weights, idx, frac, valid = _harmonic_lookup(config, sample_rate, spectra.shape[1])
    scores = np.zeros((spectra.shape[0], idx.shape[0]))
    # one harmonic at a time keeps the gather temporaries cache-sized
    for m in range(idx.shape[1]):
        gathered = spectra[:, idx[:, m]] * (1.0 - frac[:, m])
        gathered += spectra[:, idx[:, m] + 1] * frac[:, m]
        scores += (weights[m] * valid[:, m]) * gathered
    return scores


def _refine_parabolic(scores: np.ndarray, best: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Shift each winning semitone candidate by the parabola vertex of its neighbors."""
    freqs = grid[best]
    interior = (best > 0) & (best < len(grid) - 1)
    if not interior.any():
        return freqs
    rows = np.nonzero(interior)[0]
    k = best[rows]
    s_prev = scores[rows, k - 1]
    s_mid = scores[rows, k]
    s_next = scores[rows, k + 1]
    denom = s_prev - 2.0 * s_mid + s_next
    offset = np.zeros(rows.size)
    ok = np.abs(denom) > 1e-30
    offset[ok] = 0.5 * (s_prev[ok] - s_next[ok]) / denom[ok]
    offset = np.clip(offset, -0.5, 0.5)
    freqs = freqs.copy()
    freqs[rows] = grid[k] * 2.0 ** (offset / 12.0)
    return freqs


def pitch_track(frames: np.ndarray, sample_rate: int, config: PitchConfig = PitchConfig()):
    """Pitch and salience for a (frames, frame_len) matrix. Returns (omega0s, saliences)."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    window = hann_window(frames.shape[1])
    spectra = np.abs(rfft(frames * window, n=config.fft_size, axis=1, workers=-1))
    scores = _harmonic_scores(spectra, sample_rate, config)
    best = scores.argmax(axis=1)
    grid = _harmonic_lookup(config, sample_rate, spectra.shape[1])[0]
    freqs = _refine_parabolic(scores, best, grid)
    freqs = np.clip(freqs, config.pitch_min, config.pitch_max)
    salience = scores[np.arange(len(best)), best]
    silent = np.sum(frames * frames, axis=1) < config.silence_energy
    freqs[silent] = 0.0
    salience[silent] = 0.0
    return freqs, salience


def estimate_pitch(frame, sample_rate: int, config: PitchConfig = PitchConfig()) -> PitchEstimate:
    """Fundamental frequency of one frame via the harmonic-sum argmax."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise ValueError("empty frame")
    freqs, salience = pitch_track(frame[None, :], sample_rate, config)
    return PitchEstimate(float(freqs[0]), float(salience[0]))


def pitch_series(signal: AudioSignal, plan: FramePlan = DEFAULT_PLAN,
                 config: PitchConfig = PitchConfig()) -> FeatureSeries:
    frames = frame_signal(signal.samples, plan)
    freqs, _ = pitch_track(frames, signal.sample_rate, config)
    return FeatureSeries("pitch", freqs)


# ---------------------------------------------------------------------------
# timbre (MFCC)


def mel_from_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def hz_from_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(n_filters: int, frame_len: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the mel scale from 0 to sample_rate/2, each
    normalized to unit weight so a band reports mean bin power (wide top
    bands would otherwise amplify broadband content). (n_filters, bins)."""
    n_bins = frame_len // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / frame_len
    edges = hz_from_mel(np.linspace(mel_from_hz(0.0), mel_from_hz(sample_rate / 2.0), n_filters + 2))
    bank = np.zeros((n_filters, n_bins))
    for j in range(n_filters):
        left, center, right = edges[j], edges[j + 1], edges[j + 2]
        rising = (bin_hz >= left) & (bin_hz <= center)
        falling = (bin_hz > center) & (bin_hz <= right)
        if center > left:
            bank[j, rising] = (bin_hz[rising] - left) / (center - left)
        if right > center:
            bank[j, falling] = (right - bin_hz[falling]) / (right - center)
        total = bank[j].sum()
        if total > 0:
            bank[j] /= total
    bank.setflags(write=False)
    return bank


def mfcc_frames(frames: np.ndarray, sample_rate: int, n_coeffs: int = 13,
                n_mel_filters: int = 26, floor: float = 0.3) -> np.ndarray:
    """MFCC matrix for pre-framed samples: Hann -> power spectrum -> mel -> log -> DCT-II."""
    if n_coeffs > n_mel_filters:
        raise ValueError(f"n_coeffs ({n_coeffs}) cannot exceed n_mel_filters ({n_mel_filters})")
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    window = hann_window(frames.shape[1])
    power = np.abs(rfft(frames * window, axis=1, workers=-1)) ** 2
    bank = mel_filterbank(n_mel_filters, frames.shape[1], sample_rate)
    mel_energy = power @ bank.T
    logmel = np.log(mel_energy + floor)
    return dct(logmel, type=2, axis=1, norm="ortho")[:, :n_coeffs]


def mfcc_series(signal: AudioSignal, plan: FramePlan = DEFAULT_PLAN, n_coeffs: int = 13,
                n_mel_filters: int = 26, floor: float = 0.3) -> FeatureSeries:
    frames = frame_signal(signal.samples, plan)
    return FeatureSeries(
        "timbre", mfcc_frames(frames, signal.sample_rate, n_coeffs, n_mel_filters, floor)
    )


# ---------------------------------------------------------------------------
# loudness


def loudness_frames(frames: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    return np.log10(floor + np.sum(frames * frames, axis=1))


def loudness_series(signal: AudioSignal, plan: FramePlan = DEFAULT_PLAN,
                    floor: float = 1e-10) -> FeatureSeries:
    frames = frame_signal(signal.samples, plan)
    return FeatureSeries("loudness", loudness_frames(frames, floor))


# ---------------------------------------------------------------------------
# DTW


def _dtw_accumulate(cost: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = cost[i - 1, j - 1] + best
    return acc


try:  # the DP is a tight scalar loop; numba takes it from ~ms to ~us
    from numba import njit

    _dtw_accumulate = njit(cache=True)(_dtw_accumulate)
except ImportError:  # pragma: no cover
    pass


def pairwise_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-frame distance grid: absolute difference for scalars, Euclidean for vectors."""
    if a.ndim == 1:
        return np.abs(a[:, None] - b[None, :])
    return cdist(a, b)


def dtw_align(a: FeatureSeries, b: FeatureSeries) -> DtwResult:
    """Classic DTW with steps {(1,0),(0,1),(1,1)} and no window constraint."""
    if a.kind != b.kind:
        raise ValueError(f"cannot align {a.kind} with {b.kind}")
    if a.values.ndim != b.values.ndim or (
        a.values.ndim == 2 and a.values.shape[1] != b.values.shape[1]
    ):
        raise ValueError("feature dimensions differ")
    return dtw_align_values(a.values, b.values)


def dtw_align_values(a: np.ndarray, b: np.ndarray) -> DtwResult:
    cost = pairwise_cost(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    acc = _dtw_accumulate(cost)
    i, j = cost.shape[0] - 1, cost.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i, j], acc[i, j + 1], acc[i + 1, j]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    path_arr = np.array(path, dtype=np.intp)
    deviations = cost[path_arr[:, 0], path_arr[:, 1]]
    # sequential sum matches the DP accumulator bit for bit
    return DtwResult(path_arr, deviations, float(sum(deviations.tolist())))


def rhythm_deviations(pitch_dtw: DtwResult) -> np.ndarray:
    """Absolute residuals of the OLS line fitted through the DTW path indices."""
    path = pitch_dtw.path
    i = path[:, 0].astype(np.float64)
    j = path[:, 1].astype(np.float64)
    if len(path) < 2:
        return np.zeros(len(path))
    i_mean = i.mean()
    j_mean = j.mean()
    var = np.sum((i - i_mean) ** 2)
    if var < 1e-30:
        return np.abs(j - j_mean)
    slope = np.sum((i - i_mean) * (j - j_mean)) / var
    intercept = j_mean - slope * i_mean
    return np.abs(j - (slope * i + intercept))


# ---------------------------------------------------------------------------
# aggregation


def aggregate(frame_deviations, kind: str, power_mean_exponent: float = 6.0) -> float:
    """Collapse per-step deviations: power mean for pitch/rhythm, sum for timbre/loudness."""
    values = np.asarray(frame_deviations, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty deviation sequence")
    if kind in ("pitch", "rhythm"):
        p = power_mean_exponent
        peak = values.max()
        if peak <= 0.0:
            return 0.0
        # factor out the peak so values**p cannot overflow
        return float(peak * np.mean((values / peak) ** p) ** (1.0 / p))
    if kind in ("timbre", "loudness"):
        return float(values.sum())
    raise ValueError(f"unknown aggregation kind {kind!r}")


# ---------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class SignalFeatures:
    """The three frame-wise series of one signal, reusable across comparisons."""

    pitch: np.ndarray
    mfcc: np.ndarray
    loudness: np.ndarray


def signal_features(signal: AudioSignal, config: FeatureConfig = DEFAULT_CONFIG) -> SignalFeatures:
    frames = frame_signal(signal.samples, config.plan)
    pitch, _ = pitch_track(frames, signal.sample_rate, config.pitch)
    mfcc = mfcc_frames(frames, signal.sample_rate, config.n_coeffs, config.n_mel_filters,
                       config.mel_floor)
    loud = loudness_frames(frames, config.log_energy_floor)
    return SignalFeatures(pitch, mfcc, loud)


def deviation_between(a: SignalFeatures, b: SignalFeatures,
                      config: FeatureConfig = DEFAULT_CONFIG) -> FeatureDeviationVector:
    p = config.power_mean_exponent
    pitch_dtw = dtw_align_values(a.pitch, b.pitch)
    d_p = aggregate(pitch_dtw.frame_deviations, "pitch", p)
    d_r = aggregate(rhythm_deviations(pitch_dtw), "rhythm", p)
    d_t = aggregate(dtw_align_values(a.mfcc, b.mfcc).frame_deviations, "timbre", p)
    d_l = aggregate(dtw_align_values(a.loudness, b.loudness).frame_deviations, "loudness", p)
    return FeatureDeviationVector(d_p, d_r, d_t, d_l)


def feature_deviation(original: AudioSignal, perturbed: AudioSignal,
                      config: FeatureConfig = DEFAULT_CONFIG) -> FeatureDeviationVector:
    """The (d_p, d_r, d_t, d_l) deviation vector between two signals."""
    if original.sample_rate != perturbed.sample_rate:
        raise ValueError("sample rates differ")
    return deviation_between(
        signal_features(original, config), signal_features(perturbed, config), config
    )
