"""Perception-aware perturbation search: weight-lattice enumeration, dynamic
clipping, per-clip optimization against the detector, the random-noise
baseline, and signal-distance measures."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from musedev.audio import AudioSignal, FramePlan, hann_window
from musedev.features import (
    DEFAULT_CONFIG,
    FeatureConfig,
    FeatureDeviationVector,
    PitchConfig,
    deviation_between,
    mfcc_series,
    pitch_track,
    signal_features,
)
from musedev.fingerprint import (
    DEFAULT_FP_CONFIG,
    DetectorVerdict,
    FingerprintConfig,
    FingerprintDB,
    GenreThresholds,
    hash_arrays,
    match_hashes,
    peak_arrays,
    thin_peaks,
)
from musedev.perturb import InstrumentTrack

# coarser frames than the metric default keep the per-candidate cost of the
# inner search loop manageable; reported deviations always use the caller's
# metric config
ATTACK_FEATURE_CONFIG = FeatureConfig(
    plan=FramePlan(1024, 512), pitch=PitchConfig(fft_size=1024)
)


@dataclass(frozen=True)
class WeightVector:
    """Non-negative stem weights on the step lattice, summing to the budget."""

    weights: tuple
    epsilon: float
    step: float

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        if any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(weights) - self.epsilon) > 1e-9:
            raise ValueError(f"weights sum {sum(weights)} != budget {self.epsilon}")
        if self.step > 0:
            for w in weights:
                ratio = w / self.step
                if abs(ratio - round(ratio)) > 1e-9:
                    raise ValueError(f"weight {w} is not a multiple of step {self.step}")
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class ClipPlan:
    boundaries: tuple  # sample indices, strictly increasing, exclusive of 0 and T
    n_clips: int

    def __post_init__(self):
        bounds = tuple(int(b) for b in self.boundaries)
        if len(bounds) != self.n_clips - 1:
            raise ValueError("need exactly n_clips - 1 boundaries")
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", bounds)

    def slices(self, total: int):
        edges = (0,) + self.boundaries + (total,)
        return [slice(a, b) for a, b in zip(edges, edges[1:])]


@dataclass
class AttackResult:
    perturbed: AudioSignal
    per_clip_weights: list
    qdev: float
    verdict: DetectorVerdict
    candidates_evaluated: int
    success: bool
    per_clip_qdevs: list = field(default_factory=list)
    infeasible_clips: list = field(default_factory=list)
    escalations: int = 0
    epsilon: float = 0.0

    @property
    def mean_clip_qdev(self) -> float:
        return float(np.mean(self.per_clip_qdevs)) if self.per_clip_qdevs else self.qdev


@dataclass(frozen=True)
class LpMeasures:
    l2: float
    linf: float
    snr_db: float


class DetectorContext:
    """Read-only bundle of the surrogate database, thresholds, and genre."""

    def __init__(self, db: FingerprintDB, thresholds: GenreThresholds, genre: str,
                 config: FingerprintConfig = DEFAULT_FP_CONFIG):
        self.db = db
        self.thresholds = thresholds
        self.genre = genre
        self.config = config
        self.threshold = thresholds[genre]

    def _score_magnitudes(self, mags: np.ndarray, sample_rate: int, local_max=None) -> float:
        fr, bn, _ = peak_arrays(mags, self.config.plan.hop, sample_rate, self.config, local_max)
        hashes, anchors = hash_arrays(fr, bn, self.config)
        if hashes.size == 0:
            return 0.0
        return match_hashes(self.db, hashes, anchors).best_score

    def similarity(self, samples: np.ndarray, sample_rate: int) -> float:
        """Best-track similarity of raw samples; audio with nothing to
        fingerprint scores 0."""
        if len(self.db.tracks) == 0 or samples.size < self.config.plan.frame_len:
            return 0.0
        # float32 is plenty for peak ranking and halves the fft/filter cost
        mags = _batched_magnitudes(samples[None, :].astype(np.float32), self.config.plan)[0]
        return self._score_magnitudes(mags, sample_rate)

    def flagged(self, samples: np.ndarray, sample_rate: int) -> bool:
        return self.similarity(samples, sample_rate) >= self.threshold

    def flagged_batch(self, rows: np.ndarray, sample_rate: int) -> np.ndarray:
        """Verdicts for a (batch, samples) matrix; one filter pass for all rows."""
        from scipy.ndimage import maximum_filter

        if len(self.db.tracks) == 0 or rows.shape[1] < self.config.plan.frame_len:
            return np.zeros(rows.shape[0], dtype=bool)
        mags = _batched_magnitudes(rows.astype(np.float32), self.config.plan)
        size = (1, 2 * self.config.neighborhood_frames + 1, 2 * self.config.neighborhood_bins + 1)
        local = maximum_filter(mags, size=size, mode="constant", cval=0.0)
        return np.array([
            self._score_magnitudes(mags[i], sample_rate, local[i]) >= self.threshold
            for i in range(rows.shape[0])
        ])

    def verdict(self, signal: AudioSignal) -> DetectorVerdict:
        from musedev.fingerprint import detect

        if len(self.db.tracks) == 0:
            return DetectorVerdict(None, 0.0, False, self.threshold)
        return detect(self.db, signal, self.thresholds, self.genre, self.config)


def _batched_magnitudes(rows: np.ndarray, plan: FramePlan) -> np.ndarray:
    """Magnitude spectrograms for a (batch, samples) matrix in one rfft call."""
    from scipy.fft import rfft

    windows = sliding_window_view(rows, plan.frame_len, axis=1)[:, :: plan.hop]
    window = hann_window(plan.frame_len).astype(rows.dtype)
    return np.abs(rfft(windows * window, axis=2, workers=-1))


class SpliceEvaluator:
    """Detector verdicts for candidate clip replacements spliced into the full
    working signal, on the exact frame grid the database was indexed with.

    Feasibility is scored on the query hashes anchored in the clip's own
    column range. Ownership ranges partition the whole query, so if every
    clip's share stays under the threshold, the final whole-signal score
    cannot exceed it either (hashes reaching into still-original neighbors
    are counted while their targets are intact, which only overestimates).

    Only the spectrogram columns overlapping the clip change per candidate;
    everything else (magnitudes, neighborhood maxima, out-of-zone peaks) is
    computed once.
    """

    def __init__(self, detector: "DetectorContext", working: np.ndarray,
                 start: int, stop: int, sample_rate: int):
        self.detector = detector
        config = detector.config
        plan = config.plan
        self.sample_rate = sample_rate
        self.start, self.stop = start, stop
        base = working.astype(np.float32)
        self.mags = _batched_magnitudes(base[None, :], plan)[0]
        n_frames = self.mags.shape[0]
        # spectrogram columns whose windows overlap the replaced range
        self.col0 = max(0, -(-(start - plan.frame_len + 1) // plan.hop))
        self.col1 = min(n_frames - 1, max((stop - 1) // plan.hop, self.col0))
        # ownership: anchors whose column starts inside [start, stop)
        self.own0 = -(-start // plan.hop)
        self.own1 = -(-stop // plan.hop) - 1
        a = config.neighborhood_frames
        self.zone0 = max(0, self.col0 - a)
        self.zone1 = min(n_frames - 1, self.col1 + a)
        from scipy.ndimage import maximum_filter

        size = (2 * a + 1, 2 * config.neighborhood_bins + 1)
        self._filter_size = size
        base_local = maximum_filter(self.mags, size=size, mode="constant", cval=0.0)
        floor = max(config.min_magnitude, 0.0)
        candidate = (self.mags >= base_local) & (self.mags > floor)
        fr, bn = np.nonzero(candidate)
        outside = (fr < self.zone0) | (fr > self.zone1)
        self.out_fr = fr[outside]
        self.out_bn = bn[outside]
        self.out_val = self.mags[self.out_fr, self.out_bn]
        # sample span feeding the affected columns, aligned to the hop grid
        self.span0 = self.col0 * plan.hop
        self.span1 = min(self.col1 * plan.hop + plan.frame_len, working.size)
        self.prefix = base[self.span0 : start]
        self.suffix = base[stop : self.span1]

    def _verdict_one(self, mags_zone: np.ndarray, local_zone: np.ndarray) -> bool:
        config = self.detector.config
        floor = max(config.min_magnitude, 0.0)
        fr_z, bn_z = np.nonzero((mags_zone >= local_zone) & (mags_zone > floor))
        fr = np.concatenate([self.out_fr, fr_z + self.zone0])
        bn = np.concatenate([self.out_bn, bn_z])
        val = np.concatenate([self.out_val, mags_zone[fr_z, bn_z]])
        fr, bn, _ = thin_peaks(fr, bn, val, config.plan.hop, self.sample_rate, config)
        hashes, anchors = hash_arrays(fr, bn, config)
        owned = (anchors >= self.own0) & (anchors <= self.own1)
        if not owned.any():
            return False
        score = match_hashes(self.detector.db, hashes[owned], anchors[owned]).best_score
        return score >= self.detector.threshold

    def flagged_batch(self, cands: np.ndarray, sample_rate: int) -> np.ndarray:
        from scipy.ndimage import maximum_filter

        config = self.detector.config
        plan = config.plan
        b = cands.shape[0]
        width = self.span1 - self.span0
        p = self.prefix.size
        rows = np.empty((b, width), dtype=np.float32)
        rows[:, :p] = self.prefix
        take = min(cands.shape[1], width - p)  # tail past the last full frame is unused
        rows[:, p : p + take] = cands[:, :take]
        if p + take < width:
            rows[:, p + take :] = self.suffix
        col_mags = _batched_magnitudes(rows, plan)  # (b, col1-col0+1, bins)
        a = config.neighborhood_frames
        # context rows so the zone's neighborhood maxima are exact
        ctx0 = max(0, self.zone0 - a)
        ctx1 = min(self.mags.shape[0] - 1, self.zone1 + a)
        ctx_batch = np.broadcast_to(
            self.mags[ctx0 : ctx1 + 1], (b, ctx1 - ctx0 + 1, self.mags.shape[1])
        ).copy()
        ctx_batch[:, self.col0 - ctx0 : self.col1 - ctx0 + 1] = col_mags
        local_batch = maximum_filter(
            ctx_batch, size=(1,) + self._filter_size, mode="constant", cval=0.0
        )
        lo = self.zone0 - ctx0
        hi = self.zone1 - ctx0
        flags = np.empty(b, dtype=bool)
        for i in range(b):
            flags[i] = self._verdict_one(ctx_batch[i, lo : hi + 1], local_batch[i, lo : hi + 1])
        return flags


def _batch_signal_features(rows: np.ndarray, sample_rate: int, config: FeatureConfig):
    """SignalFeatures for every row of a (batch, samples) matrix; the three
    pipelines each run as one vectorized call over all rows' frames."""
    from musedev.features import SignalFeatures, loudness_frames, mfcc_frames

    plan = config.plan
    frames = sliding_window_view(rows, plan.frame_len, axis=1)[:, :: plan.hop]
    b, f, length = frames.shape
    stacked = frames.reshape(b * f, length)
    pitch, _ = pitch_track(stacked, sample_rate, config.pitch)
    mfcc = mfcc_frames(stacked, sample_rate, config.n_coeffs, config.n_mel_filters,
                       config.mel_floor)
    loud = loudness_frames(stacked, config.log_energy_floor)
    return [
        SignalFeatures(pitch[i * f : (i + 1) * f], mfcc[i * f : (i + 1) * f],
                       loud[i * f : (i + 1) * f])
        for i in range(b)
    ]


# ---------------------------------------------------------------------------
# lattice


def lattice_size(K: int, n: int) -> int:
    return math.comb(n + K - 1, K - 1)


def enumerate_lattice(K: int, epsilon: float, step: float):
    """Every composition of epsilon/step into K non-negative multiples of
    step, in ascending lexicographic order."""
    if K < 1:
        raise ValueError("need at least one stem weight")
    if epsilon < 0 or step < 0:
        raise ValueError("budget and step must be non-negative")
    if epsilon == 0:
        yield WeightVector((0.0,) * K, 0.0, step)
        return
    if step <= 0:
        raise ValueError("step must be positive for a non-zero budget")
    n_float = epsilon / step
    n = round(n_float)
    if abs(n_float - n) > 1e-9 * max(1.0, n_float):
        raise ValueError(f"budget {epsilon} is not a multiple of step {step}")

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    for combo in compositions(n, K):
        weights = tuple((c * step if c else 0.0) for c in combo)
        # re-anchor the sum exactly on the budget to avoid fp drift
        yield WeightVector(weights, float(sum(weights)), step)


# ---------------------------------------------------------------------------
# dynamic clipping


def adjacent_timbre_deviations(signal: AudioSignal, config: FeatureConfig = DEFAULT_CONFIG):
    series = mfcc_series(signal, config.plan, config.n_coeffs, config.n_mel_filters,
                         config.mel_floor)
    return np.linalg.norm(np.diff(series.values, axis=0), axis=1)


def dynamic_clipping(signal: AudioSignal, n_clips: int,
                     config: FeatureConfig = DEFAULT_CONFIG) -> ClipPlan:
    """Split at the n_clips-1 largest adjacent-frame timbre jumps (ties to the
    earlier frame), boundaries placed at the start of the later frame."""
    if n_clips < 1:
        raise ValueError("n_clips must be at least 1")
    if n_clips == 1:
        return ClipPlan((), 1)
    deviations = adjacent_timbre_deviations(signal, config)
    if n_clips - 1 > deviations.size:
        raise ValueError(
            f"cannot split into {n_clips} clips: only {deviations.size + 1} frames"
        )
    order = np.lexsort((np.arange(deviations.size), -deviations))
    chosen = np.sort(order[: n_clips - 1])
    boundaries = tuple(int((i + 1) * config.plan.hop) for i in chosen)
    return ClipPlan(boundaries, n_clips)


# ---------------------------------------------------------------------------
# pitch coverage


def semitone_set(pitch_values: np.ndarray, min_frames: int = 1) -> frozenset:
    """Voiced pitch estimates quantized to semitone numbers (zeros dropped).

    min_frames > 1 drops semitones seen on fewer frames, which filters the
    one-frame transients note boundaries produce."""
    voiced = pitch_values[pitch_values > 0]
    if voiced.size == 0:
        return frozenset()
    semis = np.round(12.0 * np.log2(voiced / 440.0) + 69.0).astype(int)
    values, counts = np.unique(semis, return_counts=True)
    return frozenset(int(v) for v, c in zip(values, counts) if c >= min_frames)


def signal_semitone_set(samples: np.ndarray, sample_rate: int,
                        config: FeatureConfig = DEFAULT_CONFIG,
                        min_frames: int = 1) -> frozenset:
    plan = config.plan
    if samples.size < plan.frame_len:
        return frozenset()
    frames = sliding_window_view(samples, plan.frame_len)[:: plan.hop]
    freqs, _ = pitch_track(frames, sample_rate, config.pitch)
    return semitone_set(freqs, min_frames)


def pitch_coverage_ok(original_pitch_set: frozenset, stem: InstrumentTrack,
                      config: FeatureConfig = DEFAULT_CONFIG) -> bool:
    """True iff the stem's semitone set covers the original's."""
    if not original_pitch_set:
        return True
    stem_set = signal_semitone_set(stem.signal.samples, stem.signal.sample_rate, config)
    return original_pitch_set <= stem_set


# ---------------------------------------------------------------------------
# per-clip optimization


@dataclass(frozen=True)
class ClipOptimum:
    """Search outcome for one clip; weights is None when no candidate bypassed."""

    weights: WeightVector | None
    qdev: float | None
    lattice_index: int
    candidates_evaluated: int
    candidates_bypassing: int

    @property
    def feasible(self) -> bool:
        return self.weights is not None


def _fit_rows(stems, length: int) -> np.ndarray:
    rows = np.zeros((len(stems), length))
    for i, stem in enumerate(stems):
        samples = stem.signal.samples if isinstance(stem, InstrumentTrack) else stem.samples
        n = min(len(samples), length)
        rows[i, :n] = samples[:n]
    return rows


def optimize_clip(clip: AudioSignal, stems, qdev_model, detector: DetectorContext,
                  epsilon: float, step: float,
                  feature_config: FeatureConfig = ATTACK_FEATURE_CONFIG,
                  batch: int = 64, evaluator=None) -> ClipOptimum:
    """Exhaustive lattice search over stem weights: among candidates the
    detector does not flag, return the one with the lowest predicted
    deviation rating (ties go to the earliest lattice vector). The result is
    infeasible (weights None) when nothing bypasses.

    Stems whose pitch sets fail to cover the clip's are frozen at weight zero
    before enumeration. When an evaluator is given (candidates spliced into a
    full surrounding signal), it supplies the verdicts; the deviation rating
    is always clip-local.
    """
    rate = clip.sample_rate
    stem_rows = _fit_rows(stems, len(clip))
    K = len(stems)
    # two-frame persistence keeps boundary transients out of the coverage set
    clip_pitch = signal_semitone_set(clip.samples, rate, feature_config, min_frames=2)
    eligible = []
    for k, stem in enumerate(stems):
        # plain AudioSignal stems carry no pitch identity and are never filtered
        if isinstance(stem, InstrumentTrack) and not pitch_coverage_ok(
            clip_pitch, stem, feature_config
        ):
            continue
        eligible.append(k)
    if epsilon > 0 and not eligible:
        return ClipOptimum(None, None, -1, 0, 0)
    clip_feats = signal_features(clip, feature_config)

    lattice = enumerate_lattice(max(len(eligible), 1), epsilon, step)
    eligible_rows = stem_rows[eligible] if eligible else np.zeros((1, len(clip)))

    best: tuple | None = None  # (qdev, lattice_index, weights_tuple)
    evaluated = 0
    bypassed = 0
    done = False
    while not done:
        chunk = []
        for vec in lattice:
            chunk.append(vec.weights)
            if len(chunk) >= batch:
                break
        else:
            done = True
        if not chunk:
            break
        thetas = np.asarray(chunk)
        cands = np.clip(clip.samples[None, :] + thetas @ eligible_rows, -1.0, 1.0)
        verdicts = evaluator if evaluator is not None else detector
        if hasattr(verdicts, "flagged_batch"):
            flags = verdicts.flagged_batch(cands, rate)
        else:
            flags = np.array([verdicts.flagged(cands[i], rate) for i in range(len(cands))])
        base_index = evaluated
        evaluated += cands.shape[0]
        through = np.flatnonzero(~flags)
        if through.size == 0:
            continue
        bypassed += int(through.size)
        cand_feats = _batch_signal_features(cands[through], rate, feature_config)
        for local, row_idx in enumerate(through):
            index = base_index + int(row_idx)
            vec = deviation_between(clip_feats, cand_feats[local], feature_config)
            rating = float(np.clip(qdev_model.predict_vector(vec), 0.0, 5.0))
            if best is None or (rating, index) < (best[0], best[1]):
                best = (rating, index, tuple(thetas[row_idx]))
    if best is None:
        return ClipOptimum(None, None, -1, evaluated, 0)
    full = [0.0] * K
    for slot, k in enumerate(eligible):
        full[k] = best[2][slot]
    weights = WeightVector(tuple(full), float(sum(full)), step)
    return ClipOptimum(weights, best[0], best[1], evaluated, bypassed)


# ---------------------------------------------------------------------------
# whole-signal attacks


def _zero_weights(K: int, step: float) -> WeightVector:
    return WeightVector((0.0,) * K, 0.0, step)


def perception_aware_attack(signal: AudioSignal, stems, qdev_model,
                            detector: DetectorContext, epsilon: float, step_fraction: float = 0.1,
                            n_clips: int = 6,
                            feature_config: FeatureConfig = ATTACK_FEATURE_CONFIG,
                            metric_config: FeatureConfig = DEFAULT_CONFIG,
                            escalation_factor: float = 1.5,
                            max_escalations: int = 3) -> AttackResult:
    """Dynamic clipping, per-clip lattice optimization with budget escalation,
    then a whole-signal verdict and deviation rating.

    step_fraction expresses the lattice step as a fraction of the (possibly
    escalated) per-clip budget.
    """
    K = len(stems)
    if epsilon == 0.0:
        verdict = detector.verdict(signal)
        zero = predict_rating(qdev_model, signal, signal, metric_config)
        return AttackResult(signal, [], zero, verdict, 0, not verdict.flagged, [], [],
                            0, 0.0)
    plan = dynamic_clipping(signal, n_clips, metric_config)
    clip_slices = plan.slices(len(signal))
    perturbed = signal.samples.copy()
    per_clip_weights = []
    per_clip_qdevs = []
    infeasible = []
    evaluated = 0
    escalations_used = 0
    splice_capable = getattr(detector, "config", None) is not None
    for clip_no, sl in enumerate(clip_slices):
        clip = AudioSignal(signal.samples[sl], signal.sample_rate)
        if len(clip) < feature_config.plan.frame_len:
            # clustered boundaries can leave sub-frame slivers; there is
            # nothing to analyze or remix in them, so they pass through
            per_clip_weights.append(_zero_weights(K, epsilon * step_fraction))
            per_clip_qdevs.append(0.0)
            continue
        clip_stems = [
            InstrumentTrack(s.instrument, AudioSignal(s.signal.samples[sl], signal.sample_rate),
                            s.pitch_set)
            if isinstance(s, InstrumentTrack)
            else AudioSignal(s.samples[sl], signal.sample_rate)
            for s in stems
        ]
        # verdicts come from the candidate spliced into the working signal
        # (clips optimized so far perturbed, the rest still original)
        evaluator = None
        if splice_capable:
            evaluator = SpliceEvaluator(detector, perturbed, sl.start, sl.stop,
                                        signal.sample_rate)
        optimum = None
        eps = epsilon
        for attempt in range(max_escalations + 1):
            optimum = optimize_clip(clip, clip_stems, qdev_model, detector, eps,
                                    eps * step_fraction, feature_config,
                                    evaluator=evaluator)
            evaluated += optimum.candidates_evaluated
            if optimum.feasible:
                escalations_used = max(escalations_used, attempt)
                break
            if attempt < max_escalations:
                eps *= escalation_factor
        if not optimum.feasible:
            infeasible.append(clip_no)
            per_clip_weights.append(_zero_weights(K, epsilon * step_fraction))
            per_clip_qdevs.append(0.0)
            continue
        stem_rows = _fit_rows(clip_stems, len(clip))
        perturbed[sl] = np.clip(
            clip.samples + np.asarray(optimum.weights.weights) @ stem_rows, -1.0, 1.0
        )
        per_clip_weights.append(optimum.weights)
        per_clip_qdevs.append(optimum.qdev)
    out = AudioSignal(perturbed, signal.sample_rate)
    verdict = detector.verdict(out)
    qdev = predict_rating(qdev_model, signal, out, metric_config)
    success = (not verdict.flagged) and not infeasible
    return AttackResult(out, per_clip_weights, qdev, verdict, evaluated, success,
                        per_clip_qdevs, infeasible, escalations_used, epsilon)


def predict_rating(qdev_model, original: AudioSignal, perturbed: AudioSignal,
                   config: FeatureConfig = DEFAULT_CONFIG) -> float:
    vec = deviation_between(
        signal_features(original, config), signal_features(perturbed, config), config
    )
    return float(np.clip(qdev_model.predict_vector(vec), 0.0, 5.0))


def noise_attack(signal: AudioSignal, detector: DetectorContext, epsilon_grid,
                 seed: int = 0, metric_config: FeatureConfig = DEFAULT_CONFIG,
                 qdev_model=None) -> AttackResult:
    """Baseline: raise white-noise energy along the grid until the detector
    stops flagging."""
    rng = np.random.default_rng(seed)
    unit = rng.standard_normal(len(signal))
    unit *= 0.9 / np.max(np.abs(unit))
    evaluated = 0
    chosen = None
    chosen_eps = 0.0
    for eps in epsilon_grid:
        candidate = np.clip(signal.samples + float(eps) * unit, -1.0, 1.0)
        evaluated += 1
        if not detector.flagged(candidate, signal.sample_rate):
            chosen = candidate
            chosen_eps = float(eps)
            break
    success = chosen is not None
    if chosen is None:
        chosen = np.clip(signal.samples + float(epsilon_grid[-1]) * unit, -1.0, 1.0)
        chosen_eps = float(epsilon_grid[-1])
    out = AudioSignal(chosen, signal.sample_rate)
    verdict = detector.verdict(out)
    qdev = predict_rating(qdev_model, signal, out, metric_config) if qdev_model else 0.0
    return AttackResult(out, [], qdev, verdict, evaluated, success, [], [], 0, chosen_eps)


def lp_measures(original: AudioSignal, perturbed: AudioSignal) -> LpMeasures:
    """L2, L-infinity, and SNR of the perturbation between two signals."""
    if len(original) != len(perturbed):
        raise ValueError("signals must have equal length")
    delta = perturbed.samples - original.samples
    e_delta = float(np.sum(delta * delta))
    if e_delta == 0.0:
        return LpMeasures(0.0, 0.0, float("inf"))
    e_sig = float(np.sum(original.samples**2))
    return LpMeasures(
        float(np.sqrt(e_delta)),
        float(np.max(np.abs(delta))),
        10.0 * math.log10(e_sig / e_delta) if e_sig > 0 else float("-inf"),
    )


# ---------------------------------------------------------------------------
# randomized feature-manipulation generators (pitch shift / tempo warp)


def _phase_vocoder_stretch(samples: np.ndarray, rate: float, plan: FramePlan) -> np.ndarray:
    """Time-stretch by 1/rate with per-bin phase propagation (rate > 1 is faster)."""
    from musedev.audio import istft, stft_complex

    spectrum = stft_complex(samples, plan)
    n_frames, n_bins = spectrum.shape
    positions = np.arange(0, n_frames - 1, rate)
    omega = 2.0 * np.pi * np.arange(n_bins) * plan.hop / plan.frame_len
    out = np.empty((len(positions), n_bins), dtype=complex)
    phase = np.angle(spectrum[0])
    for j, pos in enumerate(positions):
        k = int(pos)
        frac = pos - k
        mag = (1.0 - frac) * np.abs(spectrum[k]) + frac * np.abs(spectrum[k + 1])
        out[j] = mag * np.exp(1j * phase)
        dphi = np.angle(spectrum[k + 1]) - np.angle(spectrum[k]) - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase += omega + dphi
    return istft(out, plan)


def pitch_shift_perturbation(signal: AudioSignal, semitones: float,
                             plan: FramePlan = FramePlan(1024, 256)) -> AudioSignal:
    """Shift all spectral content by a semitone factor, preserving duration
    (resample for pitch, then phase-vocoder stretch back)."""
    factor = 2.0 ** (semitones / 12.0)
    t_source = np.arange(int(len(signal) / factor)) * factor
    resampled = np.interp(t_source, np.arange(len(signal)), signal.samples)
    out = _phase_vocoder_stretch(resampled, 1.0 / factor, plan)
    out = _fit_length_local(out, len(signal))
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out /= peak
    return AudioSignal(out, signal.sample_rate)


def tempo_warp_perturbation(signal: AudioSignal, rate: float,
                            plan: FramePlan = FramePlan(1024, 256)) -> AudioSignal:
    """Speed music up or down without moving pitch, padded back to length."""
    if not (0.5 <= rate <= 2.0):
        raise ValueError("tempo rate outside the supported range")
    out = _phase_vocoder_stretch(signal.samples, rate, plan)
    out = _fit_length_local(out, len(signal))
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out /= peak
    return AudioSignal(out, signal.sample_rate)


def _fit_length_local(samples: np.ndarray, length: int) -> np.ndarray:
    if samples.size >= length:
        return samples[:length]
    return np.concatenate([samples, np.zeros(length - samples.size)])
