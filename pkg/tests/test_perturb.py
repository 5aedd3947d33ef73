import json

import numpy as np
import pytest

from musedev.audio import AudioSignal, FramePlan
from musedev.features import estimate_pitch, feature_deviation, loudness_series
from musedev.perturb import (
    BUILTIN_PROFILES,
    FAMILIES,
    Adsr,
    InstrumentProfile,
    Note,
    NoiseSpec,
    NoteSpec,
    Score,
    fold_into_range,
    gen_noise_perturbation,
    gen_note_perturbation,
    load_profiles,
    random_score,
    render_stem,
)

RATE = 16000


def steady_base(seed=0, seconds=1.0, amp=0.3):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * RATE)) / RATE
    freq = rng.uniform(200, 500)
    out = amp * np.sin(2 * np.pi * freq * t) + 0.3 * amp * np.sin(2 * np.pi * 2 * freq * t)
    return AudioSignal(out, RATE)


class TestScore:
    def test_json_round_trip(self):
        score = Score((Note(0.0, 0.5, 440.0, 0.8), Note(0.5, 0.25, 660.0)), 1.0)
        back = Score.from_json(score.to_json())
        assert back == score

    def test_validation(self):
        with pytest.raises(ValueError):
            Score((Note(0.5, 0.5, 440.0), Note(0.2, 0.5, 440.0)), 1.0)  # decreasing onsets
        with pytest.raises(ValueError):
            Score((Note(0.0, 0.5, 10.0),), 1.0)  # below the 88-note span
        with pytest.raises(ValueError):
            Score((Note(0.0, -0.1, 440.0),), 1.0)


class TestProfiles:
    def test_builtin_registry_spans_families(self):
        assert len(BUILTIN_PROFILES) >= 8
        assert {p.family for p in BUILTIN_PROFILES.values()} == set(FAMILIES)

    def test_user_override(self, tmp_path):
        path = tmp_path / "custom.json"
        path.write_text(
            json.dumps(
                {
                    "kazoo": {
                        "family": "woodwind",
                        "harmonic_amplitudes": [1.0, 0.9, 0.8],
                        "adsr": {"attack": 0.01, "decay": 0.05, "sustain_level": 0.7, "release": 0.05},
                        "pitch_range": [100.0, 2000.0],
                    }
                }
            )
        )
        profiles = load_profiles(path)
        assert "kazoo" in profiles and "piano" in profiles
        assert profiles["kazoo"].family == "woodwind"

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            InstrumentProfile("x", "percussion", (1.0,), Adsr(0, 0, 1, 0), (100, 200))
        with pytest.raises(ValueError):
            InstrumentProfile("x", "brass", (0.0, 1.0), Adsr(0, 0, 1, 0), (100, 200))


class TestRenderStem:
    def test_single_partial_is_pure_sine(self):
        profile = InstrumentProfile("sine", "keyboard", (1.0,), Adsr(0.0, 0.0, 1.0, 0.0), (27.5, 4186.0))
        score = Score((Note(0.0, 0.5, 440.0),), 0.5)
        track = render_stem(score, profile, RATE)
        est = estimate_pitch(track.signal.samples, RATE)
        assert abs(np.log2(est.omega0 / 440.0)) <= 1 / 12
        assert np.max(np.abs(track.signal.samples)) == pytest.approx(0.9)

    def test_empty_score_rejected(self):
        with pytest.raises(ValueError):
            render_stem(Score((), 1.0), "piano", RATE)

    def test_out_of_range_note_named(self):
        score = Score((Note(0.0, 0.5, 3000.0),), 0.5)
        with pytest.raises(ValueError, match="3000.00 Hz outside tuba"):
            render_stem(score, "tuba", RATE)

    def test_deterministic(self):
        score = random_score(1.0, 4, seed=3, pitch_range=(196.0, 4186.0))
        a = render_stem(score, "violin", RATE)
        b = render_stem(score, "violin", RATE)
        assert np.array_equal(a.signal.samples, b.signal.samples)

    def test_pitch_recovery_per_note(self):
        for pitch in (220.0, 440.0, 880.0):
            score = Score((Note(0.0, 0.4, pitch),), 0.4)
            track = render_stem(score, "piano", RATE)
            est = estimate_pitch(track.signal.samples[: int(0.3 * RATE)], RATE)
            assert abs(np.log2(est.omega0 / pitch)) <= 1 / 12

    def test_different_profiles_differ_in_timbre_not_pitch(self):
        score = Score(
            (Note(0.0, 0.5, 294.0), Note(0.5, 0.5, 392.0), Note(1.0, 0.5, 494.0)), 1.5
        )
        a = render_stem(score, "clarinet", RATE)
        b = render_stem(score, "trumpet", RATE)
        vec = feature_deviation(a.signal, b.signal)
        assert vec.d_t > 0
        # same notes: pitch contours nearly coincide (sub-semitone wobble only,
        # tiny against the 0-50 range pitch deviations occupy)
        assert vec.d_p <= 5.0

    def test_shared_onset_structure(self):
        score = random_score(2.0, 5, seed=7)
        plan = FramePlan(256, 128)
        a = loudness_series(render_stem(score, "piano", RATE).signal, plan).values
        b = loudness_series(render_stem(score, "electric_piano", RATE).signal, plan).values
        a = a - a.mean()
        b = b - b.mean()
        corr = np.correlate(a, b, mode="full")
        lag = int(np.argmax(corr)) - (len(a) - 1)
        assert abs(lag) <= 1

    def test_pitch_set_recorded(self):
        score = Score((Note(0.0, 0.5, 440.0), Note(0.5, 0.5, 660.0)), 1.0)
        track = render_stem(score, "piano", RATE)
        assert track.pitch_set == frozenset({440.0, 660.0})

    def test_amplitude_invariant(self):
        score = random_score(1.5, 8, seed=11)
        track = render_stem(score, "piano", RATE)
        assert track.signal.in_amplitude_range()


class TestNoisePerturbation:
    def test_deterministic(self):
        base = steady_base(1)
        spec = NoiseSpec(snr_db=10.0, seed=42)
        a = gen_noise_perturbation(base, spec)
        b = gen_noise_perturbation(base, spec)
        assert np.array_equal(a.samples, b.samples)

    def test_invalid_snr_rejected(self):
        with pytest.raises(ValueError):
            gen_noise_perturbation(steady_base(), NoiseSpec(snr_db=7.0))

    def test_active_duration_below_half(self):
        base = steady_base(2, seconds=0.5)
        for seed in range(1000):
            out = gen_noise_perturbation(base, NoiseSpec(snr_db=15.0, seed=seed))
            active = np.count_nonzero(out.samples != base.samples)
            assert active < len(base) / 2

    def test_colored_noise_centroid(self):
        base = steady_base(3, seconds=2.0, amp=0.05)
        spec = NoiseSpec(snr_db=0.0, color="colored", center_hz=1000.0, bandwidth_hz=300.0, seed=9)
        out = gen_noise_perturbation(base, spec)
        delta = out.samples - base.samples
        spectrum = np.abs(np.fft.rfft(delta)) ** 2
        freqs = np.fft.rfftfreq(delta.size, 1 / RATE)
        centroid = float(np.sum(freqs * spectrum) / np.sum(spectrum))
        assert abs(centroid - 1000.0) <= 300.0

    def test_output_in_range(self):
        base = steady_base(4, amp=0.6)
        out = gen_noise_perturbation(base, NoiseSpec(snr_db=0.0, seed=1))
        assert out.in_amplitude_range()


class TestNotePerturbation:
    def test_zero_notes_is_identity(self):
        base = steady_base(5)
        out = gen_note_perturbation(base, NoteSpec("piano", 0))
        assert out is base

    def test_pitches_on_grid_within_span(self):
        for seed in range(1000):
            score = random_score(1.0, 3, seed=seed)
            for note in score.notes:
                assert 27.5 <= note.pitch_hz <= 4186.01
                k = 12 * np.log2(note.pitch_hz / 27.5)
                assert abs(k - round(k)) < 1e-9

    def test_adjacent_intervals_bounded(self):
        for seed in range(200):
            score = random_score(2.0, 5, seed=seed)
            onsets = [n.onset for n in score.notes]
            assert max(np.diff(onsets)) < 1.0

    def test_same_seed_same_notes_across_instruments(self):
        base = steady_base(6, seconds=2.0)
        score = random_score(base.duration, 4, seed=77)
        a = render_stem(score, "piano", RATE)
        b = render_stem(score, "electric_piano", RATE)
        assert a.pitch_set == b.pitch_set
        vec = feature_deviation(a.signal, b.signal)
        assert vec.d_t > 0
        out_a = gen_note_perturbation(base, NoteSpec("piano", 4, seed=77))
        out_b = gen_note_perturbation(base, NoteSpec("electric_piano", 4, seed=77))
        assert not np.array_equal(out_a.samples, out_b.samples)

    def test_fold_into_range(self):
        assert fold_into_range(27.5, 100.0, 1000.0) == 110.0
        assert fold_into_range(4000.0, 100.0, 1000.0) == 1000.0
        assert fold_into_range(440.0, 100.0, 1000.0) == 440.0

    def test_output_in_range(self):
        base = steady_base(7, amp=0.7)
        out = gen_note_perturbation(base, NoteSpec("piano", 5, seed=3, mix_snr_db=0.0))
        assert out.in_amplitude_range()
