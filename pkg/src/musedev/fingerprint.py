"""Constellation-map fingerprinting and the surrogate copyright detector.

Spectral peaks become (anchor, target) hash pairs; matching builds per-track
histograms of database-vs-query anchor offsets, and the best histogram bin
over the query hash count is the similarity score. Per-genre thresholds turn
scores into verdicts; calibrate_threshold fits a threshold so the surrogate
agrees with an external oracle on a probe set.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from musedev.audio import AudioSignal, FramePlan, Spectrogram, mix, stft

DB_MAGIC = b"QFPD"
DB_VERSION = 1

# the eight genre labels the detector ships thresholds for
GENRES = ("pop", "hip-hop", "rock", "classical", "jazz", "rnb", "country", "disco")

_ANCHOR_SHIFT = 22
_TARGET_SHIFT = 12
_DELTA_MASK = (1 << 12) - 1
_BIN_MASK = (1 << 10) - 1


class FingerprintDbError(ValueError):
    """Raised for malformed or version-mismatched database files."""


class CalibrationError(RuntimeError):
    """Raised when threshold calibration cannot separate oracle verdicts."""


@dataclass(frozen=True)
class FingerprintConfig:
    plan: FramePlan = FramePlan(1024, 512)
    neighborhood_frames: int = 15
    neighborhood_bins: int = 15
    density_max: float = 30.0  # peaks per second, enforced per one-second bucket
    fanout: int = 5
    target_frames: int = 64
    target_bins: int = 128
    # keeps numerical leakage and PCM quantization noise out of the map
    min_magnitude: float = 0.01


DEFAULT_FP_CONFIG = FingerprintConfig()


@dataclass(frozen=True)
class Peak:
    frame_index: int
    bin_index: int
    magnitude: float


@dataclass(frozen=True)
class FingerprintHash:
    hash: int
    anchor_frame: int


@dataclass(frozen=True)
class DetectorVerdict:
    best_track: str | None
    similarity: float
    flagged: bool
    threshold_used: float


@dataclass(frozen=True)
class MatchResult:
    """Per-track similarity scores before thresholding."""

    scores: dict
    best_track: str | None
    best_score: float
    query_hash_count: int


@dataclass(frozen=True)
class GenreThresholds:
    by_genre: dict

    def __post_init__(self):
        missing = [g for g in GENRES if g not in self.by_genre]
        if missing:
            raise ValueError(f"thresholds missing for genres: {missing}")
        for genre, value in self.by_genre.items():
            if not (0.0 < value < 1.0):
                raise ValueError(f"threshold for {genre!r} must lie in (0,1), got {value}")

    def __getitem__(self, genre: str) -> float:
        if genre not in self.by_genre:
            raise KeyError(f"unknown genre {genre!r}")
        return self.by_genre[genre]

    def __contains__(self, genre: str) -> bool:
        return genre in self.by_genre


def uniform_thresholds(value: float, extra: dict | None = None) -> GenreThresholds:
    table = {genre: value for genre in GENRES}
    table.update(extra or {})
    return GenreThresholds(table)


def pack_hash(anchor_bin: int, target_bin: int, delta_frames: int) -> int:
    if not (0 <= anchor_bin <= _BIN_MASK and 0 <= target_bin <= _BIN_MASK):
        raise ValueError("bin values must fit in 10 bits")
    if not (0 < delta_frames <= _DELTA_MASK):
        raise ValueError("frame delta must lie in (0, 4096)")
    return (anchor_bin << _ANCHOR_SHIFT) | (target_bin << _TARGET_SHIFT) | delta_frames


def unpack_hash(value: int):
    return (value >> _ANCHOR_SHIFT) & _BIN_MASK, (value >> _TARGET_SHIFT) & _BIN_MASK, value & _DELTA_MASK


# ---------------------------------------------------------------------------
# peaks and hashes


def thin_peaks(fr: np.ndarray, bn: np.ndarray, values: np.ndarray, hop: int,
               sample_rate: int, config: FingerprintConfig = DEFAULT_FP_CONFIG):
    """Cap peak density per one-second bucket by magnitude rank (ties broken
    by ascending frame then bin); returns arrays sorted by (frame, bin)."""
    if fr.size == 0:
        return fr.astype(np.int64), bn.astype(np.int64), values
    frames_per_bucket = max(1, round(sample_rate / hop))
    cap = max(1, int(round(config.density_max * frames_per_bucket * hop / sample_rate)))
    buckets = fr // frames_per_bucket
    order = np.lexsort((bn, fr, -values, buckets))
    keep = np.zeros(fr.size, dtype=bool)
    ordered_buckets = buckets[order]
    boundaries = np.flatnonzero(np.diff(ordered_buckets)) + 1
    for start, stop in zip(np.concatenate([[0], boundaries]),
                           np.concatenate([boundaries, [fr.size]])):
        keep[order[start : start + min(cap, stop - start)]] = True
    fr, bn, values = fr[keep], bn[keep], values[keep]
    final = np.lexsort((bn, fr))
    return fr[final].astype(np.int64), bn[final].astype(np.int64), values[final]


def peak_arrays(magnitudes: np.ndarray, hop: int, sample_rate: int,
                config: FingerprintConfig = DEFAULT_FP_CONFIG,
                local_max: np.ndarray | None = None):
    """(frames, bins, mags) of the thinned local maxima, sorted by (frame, bin).

    local_max may carry a precomputed neighborhood-maximum grid (callers that
    batch many spectrograms filter them in one pass).
    """
    mags = np.asarray(magnitudes)
    if mags.size == 0:
        return (np.empty(0, dtype=np.int64),) * 2 + (np.empty(0),)
    if local_max is None:
        size = (2 * config.neighborhood_frames + 1, 2 * config.neighborhood_bins + 1)
        local_max = maximum_filter(mags, size=size, mode="constant", cval=0.0)
    fr, bn = np.nonzero((mags >= local_max) & (mags > max(config.min_magnitude, 0.0)))
    if fr.size == 0:
        return fr.astype(np.int64), bn.astype(np.int64), np.empty(0)
    return thin_peaks(fr, bn, mags[fr, bn], hop, sample_rate, config)


def extract_peaks(spec: Spectrogram, config: FingerprintConfig = DEFAULT_FP_CONFIG):
    """Thinned spectral peaks of a spectrogram as Peak objects."""
    fr, bn, values = peak_arrays(spec.magnitudes, spec.frame_hop, spec.sample_rate, config)
    return [Peak(int(f), int(b), float(v)) for f, b, v in zip(fr, bn, values)]


def _hash_kernel(frames, bins, fanout, target_frames, target_bins,
                 out_hashes, out_anchors):
    count = 0
    n = frames.size
    for i in range(n):
        taken = 0
        j = i + 1
        while j < n and frames[j] - frames[i] <= target_frames:
            if frames[j] > frames[i]:
                diff = bins[j] - bins[i]
                if -target_bins <= diff <= target_bins:
                    out_hashes[count] = (bins[i] << 22) | (bins[j] << 12) | (frames[j] - frames[i])
                    out_anchors[count] = frames[i]
                    count += 1
                    taken += 1
                    if taken >= fanout:
                        break
            j += 1
    return count


try:
    from numba import njit as _njit

    _hash_kernel = _njit(cache=True)(_hash_kernel)
except ImportError:  # pragma: no cover
    pass


def hash_arrays(frames: np.ndarray, bins: np.ndarray,
                config: FingerprintConfig = DEFAULT_FP_CONFIG):
    """(hashes, anchor_frames) pairing each anchor with up to fanout targets
    inside the (0, target_frames] x [-target_bins, target_bins] window."""
    frames = np.ascontiguousarray(frames, dtype=np.int64)
    bins = np.ascontiguousarray(bins, dtype=np.int64)
    capacity = max(1, frames.size * config.fanout)
    out_hashes = np.empty(capacity, dtype=np.int64)
    out_anchors = np.empty(capacity, dtype=np.int64)
    count = _hash_kernel(frames, bins, config.fanout, config.target_frames,
                         config.target_bins, out_hashes, out_anchors)
    return out_hashes[:count].copy(), out_anchors[:count].copy()


def hash_peaks(peaks, config: FingerprintConfig = DEFAULT_FP_CONFIG):
    """FingerprintHash list for peaks already sorted by (frame, bin)."""
    frames = np.array([p.frame_index for p in peaks], dtype=np.int64)
    bins = np.array([p.bin_index for p in peaks], dtype=np.int64)
    hashes, anchors = hash_arrays(frames, bins, config)
    return [FingerprintHash(int(h), int(a)) for h, a in zip(hashes, anchors)]


def signal_hashes(signal: AudioSignal, config: FingerprintConfig = DEFAULT_FP_CONFIG):
    spec = stft(signal, config.plan)
    fr, bn, _ = peak_arrays(spec.magnitudes, config.plan.hop, signal.sample_rate, config)
    return hash_arrays(fr, bn, config)


# ---------------------------------------------------------------------------
# database


@dataclass
class TrackInfo:
    track_id: str
    title: str
    genre: str
    hash_count: int


@dataclass
class FingerprintDB:
    tracks: list = field(default_factory=list)
    # parallel posting arrays sorted by hash for O(log n) lookups
    hashes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    track_refs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    anchor_frames: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.tracks)

    def track_ids(self):
        return [t.track_id for t in self.tracks]

    def has_track(self, track_id: str) -> bool:
        return any(t.track_id == track_id for t in self.tracks)


def index_track(db: FingerprintDB, track_id: str, signal: AudioSignal,
                config: FingerprintConfig = DEFAULT_FP_CONFIG,
                title: str = "", genre: str = "") -> FingerprintDB:
    """Insert one track's hashes; the track_id must be new."""
    if db.has_track(track_id):
        raise ValueError(f"track {track_id!r} already indexed")
    hashes, anchors = signal_hashes(signal, config)
    idx = len(db.tracks)
    db.tracks.append(TrackInfo(track_id, title, genre, int(hashes.size)))
    refs = np.full(hashes.size, idx, dtype=np.int64)
    merged = np.concatenate([db.hashes, hashes])
    order = np.argsort(merged, kind="stable")
    db.hashes = merged[order]
    db.track_refs = np.concatenate([db.track_refs, refs])[order]
    db.anchor_frames = np.concatenate([db.anchor_frames, anchors])[order]
    return db


_OFFSET_BIAS = 1 << 20


def match_hashes(db: FingerprintDB, query_hashes: np.ndarray,
                 query_anchors: np.ndarray) -> MatchResult:
    """Score every track against a prepared query hash set."""
    if len(db.tracks) == 0:
        raise ValueError("cannot match against an empty database")
    total = int(query_hashes.size)
    if total == 0:
        raise ValueError("query produced no fingerprint hashes")
    lo = np.searchsorted(db.hashes, query_hashes, side="left")
    hi = np.searchsorted(db.hashes, query_hashes, side="right")
    counts = hi - lo
    hits = np.flatnonzero(counts)
    best_count = np.zeros(len(db.tracks), dtype=np.int64)
    if hits.size:
        counts_h = counts[hits]
        csum = np.cumsum(counts_h)
        posting_idx = (
            np.repeat(lo[hits], counts_h) + np.arange(csum[-1]) - np.repeat(csum - counts_h, counts_h)
        )
        q_anchor = np.repeat(query_anchors[hits], counts_h)
        tracks = db.track_refs[posting_idx]
        offsets = db.anchor_frames[posting_idx] - q_anchor
        keys = tracks * (2 * _OFFSET_BIAS) + (offsets + _OFFSET_BIAS)
        uniq, cnt = np.unique(keys, return_counts=True)
        np.maximum.at(best_count, uniq // (2 * _OFFSET_BIAS), cnt)
    scores = {
        t.track_id: float(min(1.0, best_count[i] / total)) for i, t in enumerate(db.tracks)
    }
    best_track = min(scores, key=lambda tid: (-scores[tid], tid))
    return MatchResult(scores, best_track, scores[best_track], total)


def match(db: FingerprintDB, query: AudioSignal,
          config: FingerprintConfig = DEFAULT_FP_CONFIG) -> MatchResult:
    return match_hashes(db, *signal_hashes(query, config))


def detect(db: FingerprintDB, query: AudioSignal, thresholds: GenreThresholds,
           genre: str, config: FingerprintConfig = DEFAULT_FP_CONFIG) -> DetectorVerdict:
    """Flag the query iff its best similarity reaches the genre threshold."""
    threshold = thresholds[genre]
    if len(db.tracks) == 0:
        return DetectorVerdict(None, 0.0, False, threshold)
    result = match(db, query, config)
    return DetectorVerdict(
        result.best_track, result.best_score, result.best_score >= threshold, threshold
    )


# ---------------------------------------------------------------------------
# oracle detectors and calibration


class SurrogateOracle:
    """The surrogate detector itself, usable as a calibration oracle."""

    def __init__(self, db, thresholds: GenreThresholds, genre: str,
                 config: FingerprintConfig = DEFAULT_FP_CONFIG):
        self.db = db
        self.thresholds = thresholds
        self.genre = genre
        self.config = config

    def flagged(self, signal: AudioSignal) -> bool:
        return detect(self.db, signal, self.thresholds, self.genre, self.config).flagged


class MockOracle:
    """Black-box stand-in that flags once surrogate similarity reaches a hidden
    threshold, with optional seeded verdict noise."""

    def __init__(self, db, hidden_threshold: float,
                 config: FingerprintConfig = DEFAULT_FP_CONFIG,
                 flip_probability: float = 0.0, seed: int = 0):
        self.db = db
        self.hidden_threshold = hidden_threshold
        self.config = config
        self.flip_probability = flip_probability
        self._rng = np.random.default_rng(seed)

    def flagged(self, signal: AudioSignal) -> bool:
        result = match(self.db, signal, self.config)
        verdict = result.best_score >= self.hidden_threshold
        if self.flip_probability > 0.0 and self._rng.random() < self.flip_probability:
            verdict = not verdict
        return verdict


def combine_stems(stems) -> AudioSignal:
    """Average instrument tracks into one probe signal, peak-normalized to 0.9.

    Accepts AudioSignals or anything carrying one under .signal."""
    signals = [getattr(s, "signal", s) for s in stems]
    if not signals:
        raise ValueError("no stems supplied")
    rate = signals[0].sample_rate
    length = max(len(s) for s in signals)
    acc = np.zeros(length)
    for s in signals:
        if s.sample_rate != rate:
            raise ValueError("stem sample rates differ")
        acc[: len(s)] += s.samples
    acc /= len(signals)
    peak = np.max(np.abs(acc))
    if peak > 0:
        acc *= 0.9 / peak
    return AudioSignal(acc, rate)


def calibrate_threshold(oracle, clip: AudioSignal, stems, db: FingerprintDB,
                        genre: str, energy_grid,
                        config: FingerprintConfig = DEFAULT_FP_CONFIG) -> float:
    """Probe the oracle with increasingly energetic perturbations of the clip
    and return the surrogate-similarity midpoint separating its verdicts."""
    probe_base = combine_stems(stems)
    flagged_sims = []
    unflagged_sims = []
    for energy in energy_grid:
        probe = mix(clip, probe_base, float(energy))
        similarity = match(db, probe, config).best_score
        if oracle.flagged(probe):
            flagged_sims.append(similarity)
        else:
            unflagged_sims.append(similarity)
    if not flagged_sims or not unflagged_sims:
        raise CalibrationError(
            "oracle verdict constant over the energy grid; widen the grid"
        )
    low = min(flagged_sims)
    high = max(unflagged_sims)
    if high < low:
        return (low + high) / 2.0
    # verdicts are not separable by similarity; pick the midpoint that
    # minimizes disagreement over the probe set
    sims = sorted(set(flagged_sims + unflagged_sims))
    candidates = [0.0] + [(a + b) / 2.0 for a, b in zip(sims, sims[1:])] + [1.0]
    flagged_arr = np.array(flagged_sims)
    unflagged_arr = np.array(unflagged_sims)
    return min(
        candidates,
        key=lambda thr: int(np.sum(flagged_arr < thr)) + int(np.sum(unflagged_arr >= thr)),
    )


# ---------------------------------------------------------------------------
# persistence


def _write_str(fh, text: str):
    raw = text.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def save_db(db: FingerprintDB, path) -> None:
    """Binary layout: magic, version u32, track table, posting triples sorted by hash."""
    with open(path, "wb") as fh:
        fh.write(DB_MAGIC)
        fh.write(struct.pack("<I", DB_VERSION))
        fh.write(struct.pack("<I", len(db.tracks)))
        for track in db.tracks:
            _write_str(fh, track.track_id)
            _write_str(fh, track.title)
            _write_str(fh, track.genre)
            fh.write(struct.pack("<I", track.hash_count))
        fh.write(struct.pack("<Q", int(db.hashes.size)))
        triples = np.empty((db.hashes.size, 3), dtype="<u4")
        triples[:, 0] = db.hashes
        triples[:, 1] = db.track_refs
        triples[:, 2] = db.anchor_frames
        fh.write(triples.tobytes())


def load_db(path) -> FingerprintDB:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != DB_MAGIC:
                raise FingerprintDbError(f"{path}: bad magic {magic!r}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != DB_VERSION:
                raise FingerprintDbError(f"{path}: unsupported version {version}")
            (n_tracks,) = struct.unpack("<I", fh.read(4))
            tracks = []
            for _ in range(n_tracks):
                track_id = _read_str(fh)
                title = _read_str(fh)
                genre = _read_str(fh)
                (hash_count,) = struct.unpack("<I", fh.read(4))
                tracks.append(TrackInfo(track_id, title, genre, hash_count))
            (n_postings,) = struct.unpack("<Q", fh.read(8))
            raw = fh.read(n_postings * 12)
            if len(raw) != n_postings * 12:
                raise FingerprintDbError(f"{path}: truncated posting table")
            triples = np.frombuffer(raw, dtype="<u4").reshape(-1, 3)
    except struct.error as exc:
        raise FingerprintDbError(f"{path}: truncated database file") from exc
    return FingerprintDB(
        tracks,
        triples[:, 0].astype(np.int64),
        triples[:, 1].astype(np.int64),
        triples[:, 2].astype(np.int64),
    )
