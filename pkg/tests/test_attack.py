import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from musedev.attack import (
    ATTACK_FEATURE_CONFIG,
    ClipPlan,
    DetectorContext,
    WeightVector,
    adjacent_timbre_deviations,
    dynamic_clipping,
    enumerate_lattice,
    lattice_size,
    lp_measures,
    noise_attack,
    optimize_clip,
    perception_aware_attack,
    pitch_coverage_ok,
    pitch_shift_perturbation,
    semitone_set,
    signal_semitone_set,
    tempo_warp_perturbation,
)
from musedev.audio import AudioSignal, FramePlan
from musedev.features import DEFAULT_CONFIG, FeatureConfig, PitchConfig
from musedev.perturb import InstrumentTrack, Note, Score, render_stem

RATE = 16000


def sig(samples):
    return AudioSignal(np.asarray(samples, dtype=np.float64), RATE)


def tone(freq, seconds, amp=0.4):
    t = np.arange(int(seconds * RATE)) / RATE
    return amp * np.sin(2 * np.pi * freq * t)


class NeverFlags:
    threshold = 0.5

    def flagged(self, samples, rate):
        return False

    def verdict(self, signal):
        from musedev.fingerprint import DetectorVerdict

        return DetectorVerdict(None, 0.0, False, self.threshold)


class AlwaysFlags(NeverFlags):
    def flagged(self, samples, rate):
        return True

    def verdict(self, signal):
        from musedev.fingerprint import DetectorVerdict

        return DetectorVerdict("x", 1.0, True, self.threshold)


class ConstantModel:
    def predict_vector(self, vec):
        return 2.0


class LoudnessModel:
    """Deterministic stand-in scoring by the loudness deviation component."""

    def predict_vector(self, vec):
        return float(np.clip(vec.d_l / 100.0, 0.0, 5.0))


class TestLattice:
    def test_paper_scale_count(self):
        count = sum(1 for _ in enumerate_lattice(10, 1.0, 0.1))
        assert count == 92378 == math.comb(19, 9)

    def test_single_stem(self):
        vecs = list(enumerate_lattice(1, 0.7, 0.1))
        assert len(vecs) == 1
        assert vecs[0].weights == (pytest.approx(0.7),)

    def test_small_example_count(self):
        vecs = list(enumerate_lattice(3, 1.0, 0.5))
        assert len(vecs) == 6 == math.comb(4, 2)

    @given(K=st.integers(1, 6), n=st.integers(0, 8))
    @settings(max_examples=40, deadline=None)
    def test_matches_bruteforce(self, K, n):
        step = 0.125
        got = [tuple(round(w / step) for w in v.weights) for v in enumerate_lattice(K, n * step, step)]
        expected = sorted(
            combo for combo in itertools.product(range(n + 1), repeat=K) if sum(combo) == n
        )
        assert got == expected
        assert len(got) == lattice_size(K, n)

    @given(K=st.integers(1, 5), n=st.integers(1, 9))
    @settings(max_examples=30, deadline=None)
    def test_weights_sum_to_budget(self, K, n):
        step = 0.1
        for vec in enumerate_lattice(K, n * step, step):
            assert abs(sum(vec.weights) - vec.epsilon) <= 1e-9

    def test_budget_not_multiple_of_step(self):
        with pytest.raises(ValueError):
            list(enumerate_lattice(3, 1.0, 0.3))

    def test_zero_budget(self):
        vecs = list(enumerate_lattice(4, 0.0, 0.1))
        assert vecs == [WeightVector((0.0, 0.0, 0.0, 0.0), 0.0, 0.1)]

    def test_weight_vector_validation(self):
        with pytest.raises(ValueError):
            WeightVector((0.1, 0.2), 0.5, 0.1)
        with pytest.raises(ValueError):
            WeightVector((0.15, 0.15), 0.3, 0.1)


class TestDynamicClipping:
    def test_single_clip(self):
        plan = dynamic_clipping(sig(tone(440, 1.0)), 1)
        assert plan.boundaries == () and plan.n_clips == 1
        assert plan.slices(16000) == [slice(0, 16000)]

    def test_splice_detection(self):
        score_a = Score((Note(0.0, 1.0, 330.0),), 1.0)
        score_b = Score((Note(0.0, 1.0, 330.0),), 1.0)
        a = render_stem(score_a, "clarinet", RATE).signal.samples
        b = render_stem(score_b, "trumpet", RATE).signal.samples
        spliced = sig(np.concatenate([a, b]))
        plan = dynamic_clipping(spliced, 2)
        hop = DEFAULT_CONFIG.plan.hop
        assert abs(plan.boundaries[0] - len(a)) <= DEFAULT_CONFIG.plan.frame_len + hop

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            samples = rng.uniform(-0.5, 0.5, 8000)
            signal = sig(samples)
            n_clips = int(rng.integers(2, 6))
            plan = dynamic_clipping(signal, n_clips)
            devs = adjacent_timbre_deviations(signal)
            ranked = sorted(range(devs.size), key=lambda i: (-devs[i], i))
            expected = tuple(sorted((i + 1) * DEFAULT_CONFIG.plan.hop for i in ranked[: n_clips - 1]))
            assert plan.boundaries == expected

    def test_too_many_clips(self):
        with pytest.raises(ValueError):
            dynamic_clipping(sig(tone(440, 0.05)), 50)

    def test_clip_plan_validation(self):
        with pytest.raises(ValueError):
            ClipPlan((100, 100), 3)
        with pytest.raises(ValueError):
            ClipPlan((100,), 3)


class TestPitchCoverage:
    def test_own_transcription_covers(self):
        score = Score((Note(0.0, 0.5, 294.0), Note(0.5, 0.5, 440.0)), 1.0)
        stem = render_stem(score, "piano", RATE)
        original = signal_semitone_set(stem.signal.samples, RATE)
        assert pitch_coverage_ok(original, stem)

    def test_missing_pitch_fails(self):
        stem = render_stem(Score((Note(0.0, 0.5, 294.0),), 0.5), "piano", RATE)
        a440 = semitone_set(np.array([440.0]))
        assert not pitch_coverage_ok(a440, stem)

    def test_empty_original_vacuous(self):
        stem = render_stem(Score((Note(0.0, 0.5, 294.0),), 0.5), "piano", RATE)
        assert pitch_coverage_ok(frozenset(), stem)

    def test_semitone_quantization(self):
        assert semitone_set(np.array([440.0])) == {69}
        assert semitone_set(np.array([0.0])) == frozenset()
        assert semitone_set(np.array([261.6, 262.0])) == {60}


def toy_clip_and_stems(seconds=0.6):
    clip = sig(tone(440, seconds, 0.3))
    stems = [
        sig(tone(550, seconds, 0.5)),
        sig(tone(660, seconds, 0.5)),
        sig(tone(770, seconds, 0.5)),
    ]
    return clip, stems


FAST = FeatureConfig(plan=FramePlan(512, 512), pitch=PitchConfig(fft_size=1024))


class TestOptimizeClip:
    def test_tie_rule_first_lattice_vector(self):
        clip, stems = toy_clip_and_stems()
        result = optimize_clip(clip, stems, ConstantModel(), NeverFlags(), 0.4, 0.2, FAST)
        assert result.feasible
        assert result.lattice_index == 0
        assert result.weights.weights == (0.0, 0.0, pytest.approx(0.4))

    def test_always_flagging_is_infeasible(self):
        clip, stems = toy_clip_and_stems()
        result = optimize_clip(clip, stems, ConstantModel(), AlwaysFlags(), 0.4, 0.2, FAST)
        assert not result.feasible
        assert result.candidates_evaluated == lattice_size(3, 2)

    def test_matches_exhaustive_oracle(self):
        clip, stems = toy_clip_and_stems()
        model = LoudnessModel()
        detector = NeverFlags()
        result = optimize_clip(clip, stems, model, detector, 0.4, 0.2, FAST)

        # oracle: evaluate every candidate independently
        from musedev.features import deviation_between, signal_features

        clip_feats = signal_features(clip, FAST)
        best = None
        for idx, vec in enumerate(enumerate_lattice(3, 0.4, 0.2)):
            mixed = np.clip(
                clip.samples + sum(w * s.samples for w, s in zip(vec.weights, stems)), -1, 1
            )
            feats = signal_features(sig(mixed), FAST)
            rating = model.predict_vector(deviation_between(clip_feats, feats, FAST))
            if best is None or rating < best[0] - 1e-15:
                best = (rating, idx, vec.weights)
        assert result.lattice_index == best[1]
        assert result.weights.weights == pytest.approx(best[2])
        assert result.qdev == pytest.approx(best[0])
        assert result.candidates_evaluated == lattice_size(3, 2)

    def test_monotone_feasibility(self):
        # the optimizer's qdev is never above any feasible candidate's qdev
        clip, stems = toy_clip_and_stems()

        class FlagEven(NeverFlags):
            def __init__(self):
                self.calls = 0

            def flagged(self, samples, rate):
                self.calls += 1
                return self.calls % 2 == 0

        model = LoudnessModel()
        detector = FlagEven()
        result = optimize_clip(clip, stems, model, detector, 0.4, 0.2, FAST)
        assert result.feasible
        from musedev.features import deviation_between, signal_features

        clip_feats = signal_features(clip, FAST)
        for idx, vec in enumerate(enumerate_lattice(3, 0.4, 0.2)):
            if idx % 2 == 1:  # the candidates FlagEven let through (1-based evens flag)
                mixed = np.clip(
                    clip.samples + sum(w * s.samples for w, s in zip(vec.weights, stems)), -1, 1
                )
                feats = signal_features(sig(mixed), FAST)
                rating = model.predict_vector(deviation_between(clip_feats, feats, FAST))
                assert result.qdev <= rating + 1e-12


class TestWholeSignalAttack:
    def test_zero_budget_degenerate(self):
        signal = sig(tone(440, 1.0))
        result = perception_aware_attack(
            signal, toy_clip_and_stems(1.0)[1], ConstantModel(), NeverFlags(), 0.0,
            feature_config=FAST, metric_config=FAST,
        )
        assert np.array_equal(result.perturbed.samples, signal.samples)
        assert result.success

    def test_always_flagged_zero_budget_fails(self):
        signal = sig(tone(440, 1.0))
        result = perception_aware_attack(
            signal, toy_clip_and_stems(1.0)[1], ConstantModel(), AlwaysFlags(), 0.0,
            feature_config=FAST, metric_config=FAST,
        )
        assert not result.success

    def test_single_clip_equals_optimize_clip(self):
        signal = sig(tone(440, 1.0, 0.3))
        stems = [sig(tone(550, 1.0, 0.5)), sig(tone(660, 1.0, 0.5))]
        model = LoudnessModel()
        whole = perception_aware_attack(
            signal, stems, model, NeverFlags(), 0.4, 0.5, n_clips=1,
            feature_config=FAST, metric_config=FAST,
        )
        direct = optimize_clip(signal, stems, model, NeverFlags(), 0.4, 0.2, FAST)
        assert whole.per_clip_weights[0].weights == direct.weights.weights
        mixed = np.clip(
            signal.samples
            + np.asarray(direct.weights.weights) @ np.stack([s.samples for s in stems]),
            -1.0, 1.0,
        )
        assert np.array_equal(whole.perturbed.samples, mixed)

    def test_infeasible_reported(self):
        signal = sig(tone(440, 1.0, 0.3))
        stems = [sig(tone(550, 1.0, 0.5))]
        result = perception_aware_attack(
            signal, stems, ConstantModel(), AlwaysFlags(), 0.4, 0.5, n_clips=2,
            feature_config=FAST, metric_config=FAST, max_escalations=1,
        )
        assert not result.success
        assert result.infeasible_clips == [0, 1]


class TestNoiseAttack:
    def test_never_flagging_takes_first_grid_point(self):
        signal = sig(tone(440, 0.5, 0.3))
        result = noise_attack(signal, NeverFlags(), [0.05, 0.1, 0.2], seed=3)
        assert result.success
        assert result.epsilon == pytest.approx(0.05)
        assert result.candidates_evaluated == 1

    def test_grid_exhausted_reports_failure(self):
        signal = sig(tone(440, 0.5, 0.3))
        result = noise_attack(signal, AlwaysFlags(), [0.05, 0.1], seed=3)
        assert not result.success
        assert result.candidates_evaluated == 2

    def test_deterministic(self):
        signal = sig(tone(440, 0.5, 0.3))
        a = noise_attack(signal, NeverFlags(), [0.1], seed=9)
        b = noise_attack(signal, NeverFlags(), [0.1], seed=9)
        assert np.array_equal(a.perturbed.samples, b.perturbed.samples)


class TestLpMeasures:
    def test_zero_perturbation(self):
        signal = sig(tone(440, 0.2))
        m = lp_measures(signal, signal)
        assert (m.l2, m.linf) == (0.0, 0.0)
        assert m.snr_db == float("inf")

    def test_delta_equal_to_signal(self):
        signal = sig(tone(440, 0.2))
        doubled = sig(np.clip(2 * signal.samples, -1, 1))
        m = lp_measures(signal, doubled)
        assert m.snr_db == pytest.approx(0.0, abs=1e-9)

    def test_direct_summation_oracle(self):
        rng = np.random.default_rng(11)
        a = sig(rng.uniform(-0.5, 0.5, 2048))
        b = sig(rng.uniform(-0.5, 0.5, 2048))
        m = lp_measures(a, b)
        delta = b.samples - a.samples
        assert m.l2 == pytest.approx(np.sqrt(np.sum(delta**2)), abs=1e-12)
        assert m.linf == pytest.approx(np.max(np.abs(delta)), abs=1e-15)
        expected_snr = 10 * np.log10(np.sum(a.samples**2) / np.sum(delta**2))
        assert m.snr_db == pytest.approx(expected_snr, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            lp_measures(sig(np.zeros(10)), sig(np.zeros(11)))


class TestFeatureManipulations:
    def test_pitch_shift_moves_fundamental(self):
        signal = sig(tone(440, 1.0, 0.5))
        shifted = pitch_shift_perturbation(signal, 4.0)
        from musedev.features import estimate_pitch

        est = estimate_pitch(shifted.samples[2048:6144], RATE)
        expected = 440 * 2 ** (4 / 12)
        assert abs(np.log2(est.omega0 / expected)) <= 1.5 / 12
        assert shifted.in_amplitude_range()

    def test_tempo_warp_keeps_length(self):
        signal = sig(tone(440, 1.0, 0.5))
        warped = tempo_warp_perturbation(signal, 1.25)
        assert len(warped) == len(signal)
        assert warped.in_amplitude_range()
        with pytest.raises(ValueError):
            tempo_warp_perturbation(signal, 3.0)
