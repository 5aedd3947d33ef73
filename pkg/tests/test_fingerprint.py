import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from musedev.audio import AudioSignal, FramePlan, Spectrogram, mix, scale_to_snr
from musedev.fingerprint import (
    GENRES,
    CalibrationError,
    DetectorVerdict,
    FingerprintConfig,
    FingerprintDB,
    FingerprintDbError,
    GenreThresholds,
    MockOracle,
    calibrate_threshold,
    detect,
    extract_peaks,
    hash_peaks,
    index_track,
    load_db,
    match,
    match_hashes,
    pack_hash,
    save_db,
    signal_hashes,
    uniform_thresholds,
    unpack_hash,
    Peak,
)

RATE = 16000


def sig(samples):
    return AudioSignal(np.asarray(samples, dtype=np.float64), RATE)


def melody(seed, seconds=4.0, amp=0.35):
    """Synthetic multi-note test material with harmonics."""
    rng = np.random.default_rng(seed)
    total = int(seconds * RATE)
    out = np.zeros(total)
    t = np.arange(total) / RATE
    pos = 0
    while pos < total:
        length = int(rng.uniform(0.2, 0.5) * RATE)
        freq = rng.uniform(200, 900)
        seg = slice(pos, min(pos + length, total))
        for h, gain in enumerate((1.0, 0.5, 0.33, 0.2), start=1):
            out[seg] += amp * gain * np.sin(2 * np.pi * freq * h * t[seg])
        pos += length
    peak = np.max(np.abs(out))
    return out * (0.8 / peak)


def spectro(mags):
    mags = np.asarray(mags, dtype=np.float64)
    return Spectrogram(mags, 512, (mags.shape[1] - 1) * 2, RATE)


class TestHashPacking:
    @given(
        a=st.integers(0, 1023),
        t=st.integers(0, 1023),
        d=st.integers(1, 4095),
    )
    @settings(max_examples=200, deadline=None)
    def test_pack_unpack_identity(self, a, t, d):
        assert unpack_hash(pack_hash(a, t, d)) == (a, t, d)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            pack_hash(1024, 0, 1)
        with pytest.raises(ValueError):
            pack_hash(0, 0, 0)
        with pytest.raises(ValueError):
            pack_hash(0, 0, 4096)


class TestPeaks:
    def test_pure_tone_single_bin_column(self):
        from musedev.audio import stft

        config = FingerprintConfig()
        freq = 128 * RATE / 1024  # bin-center
        t = np.arange(int(2.0 * RATE)) / RATE
        spec = stft(sig(0.5 * np.sin(2 * np.pi * freq * t)), config.plan)
        peaks = extract_peaks(spec, config)
        assert peaks
        assert {p.bin_index for p in peaks} == {128}

    def test_zero_spectrogram_no_peaks(self):
        assert extract_peaks(spectro(np.zeros((40, 513)))) == []

    def test_planted_maxima_recovered(self):
        mags = np.zeros((60, 513))
        planted = [(5, 100, 3.0), (30, 300, 2.0), (55, 450, 1.5)]
        for f, b, v in planted:
            mags[f, b] = v
        peaks = extract_peaks(spectro(mags))
        assert [(p.frame_index, p.bin_index, p.magnitude) for p in peaks] == planted

    def test_density_cap_keeps_strongest(self):
        rng = np.random.default_rng(0)
        config = FingerprintConfig(neighborhood_frames=1, neighborhood_bins=1, density_max=5.0)
        mags = rng.uniform(0.1, 1.0, size=(31, 513))  # one second of frames at hop 512
        peaks = extract_peaks(spectro(mags), config)
        assert len(peaks) == 5

    def test_deterministic_under_equal_magnitudes(self):
        mags = np.zeros((40, 513))
        mags[10, 100] = 1.0
        mags[10, 400] = 1.0
        mags[35, 250] = 1.0
        config = FingerprintConfig(density_max=2.0)
        peaks = extract_peaks(spectro(mags), config)
        again = extract_peaks(spectro(mags), config)
        assert peaks == again
        # ties resolved by (frame, bin) ascending
        assert (peaks[0].frame_index, peaks[0].bin_index) == (10, 100)


class TestHashing:
    def test_fewer_than_two_peaks(self):
        assert hash_peaks([]) == []
        assert hash_peaks([Peak(0, 10, 1.0)]) == []

    def test_two_peaks_one_hash(self):
        hashes = hash_peaks([Peak(0, 100, 1.0), Peak(1, 200, 1.0)])
        assert len(hashes) == 1
        assert unpack_hash(hashes[0].hash) == (100, 200, 1)
        assert hashes[0].anchor_frame == 0

    def test_matches_bruteforce_pairing(self):
        rng = np.random.default_rng(1)
        config = FingerprintConfig(fanout=3, target_frames=10, target_bins=50)
        peaks = sorted(
            {(int(rng.integers(0, 30)), int(rng.integers(0, 513))) for _ in range(40)}
        )
        peak_objs = [Peak(f, b, 1.0) for f, b in peaks]
        got = {(h.hash, h.anchor_frame) for h in hash_peaks(peak_objs, config)}

        expected = set()
        for i, (fa, ba) in enumerate(peaks):
            taken = 0
            for fb, bb in peaks[i + 1 :]:
                if taken >= config.fanout:
                    break
                df = fb - fa
                if df <= 0 or df > config.target_frames:
                    if df > config.target_frames:
                        break
                    continue
                if abs(bb - ba) <= config.target_bins:
                    expected.add((pack_hash(ba, bb, df), fa))
                    taken += 1
        assert got == expected


def build_db(track_seeds):
    db = FingerprintDB()
    signals = {}
    for name, seed in track_seeds:
        signal = sig(melody(seed))
        signals[name] = signal
        index_track(db, name, signal, title=name, genre="pop")
    return db, signals


class TestIndexAndMatch:
    def test_self_match_exact_one(self):
        db, signals = build_db([("alpha", 1), ("beta", 2)])
        result = match(db, signals["alpha"])
        assert result.best_track == "alpha"
        assert result.best_score == 1.0
        assert result.scores["beta"] < 1.0

    def test_duplicate_track_rejected(self):
        db, signals = build_db([("alpha", 1)])
        with pytest.raises(ValueError):
            index_track(db, "alpha", signals["alpha"])

    def test_too_short_track_rejected(self):
        db = FingerprintDB()
        with pytest.raises(ValueError):
            index_track(db, "tiny", sig(np.zeros(100)))

    def test_two_tracks_bookkeeping(self):
        db, _ = build_db([("alpha", 1), ("beta", 2)])
        assert db.track_ids() == ["alpha", "beta"]
        assert all(t.hash_count > 0 for t in db.tracks)
        assert sum(t.hash_count for t in db.tracks) == db.hashes.size

    def test_silent_query_errors(self):
        db, _ = build_db([("alpha", 1)])
        with pytest.raises(ValueError):
            match(db, sig(np.zeros(RATE)))

    def test_empty_db_match_errors(self):
        with pytest.raises(ValueError):
            match(FingerprintDB(), sig(melody(3)))

    def test_noisy_query_still_wins(self):
        db, signals = build_db([("alpha", 1), ("beta", 2), ("gamma", 3)])
        g = np.random.default_rng(4)
        noise = AudioSignal(g.normal(0, 1, len(signals["alpha"])), RATE)
        noisy = mix(signals["alpha"], scale_to_snr(noise, signals["alpha"], 10.0), 1.0)
        result = match(db, noisy)
        assert result.best_track == "alpha"
        assert result.scores["alpha"] > max(result.scores["beta"], result.scores["gamma"])

    def test_score_monotone_under_hash_destruction(self):
        db, signals = build_db([("alpha", 1)])
        hashes, anchors = signal_hashes(signals["alpha"])
        rng = np.random.default_rng(5)
        order = rng.permutation(hashes.size)
        previous = 1.0
        for destroyed in (0, len(order) // 4, len(order) // 2, 3 * len(order) // 4):
            corrupted = hashes.copy()
            corrupted[order[:destroyed]] = -1  # absent from any database
            score = match_hashes(db, corrupted, anchors).scores["alpha"]
            assert score <= previous + 1e-12
            previous = score


class TestDetect:
    def test_threshold_rules(self):
        db, signals = build_db([("alpha", 1)])
        thresholds = uniform_thresholds(0.3)
        verdict = detect(db, signals["alpha"], thresholds, "pop")
        assert verdict.flagged and verdict.similarity == 1.0
        assert verdict.threshold_used == 0.3

    def test_boundary_inclusive(self):
        assert DetectorVerdict("x", 0.3, 0.3 >= 0.3, 0.3).flagged

    def test_unknown_genre(self):
        db, signals = build_db([("alpha", 1)])
        with pytest.raises(KeyError):
            detect(db, signals["alpha"], uniform_thresholds(0.3), "polka")

    def test_empty_db_unflagged(self):
        verdict = detect(FingerprintDB(), sig(melody(1)), uniform_thresholds(0.3), "pop")
        assert verdict.best_track is None and not verdict.flagged

    def test_thresholds_require_all_genres(self):
        with pytest.raises(ValueError):
            GenreThresholds({"pop": 0.3})
        with pytest.raises(ValueError):
            uniform_thresholds(1.5)
        assert set(uniform_thresholds(0.2).by_genre) == set(GENRES)


class TestCalibration:
    def _setup(self, seed=1):
        db, signals = build_db([("alpha", seed)])
        clip = signals["alpha"]
        stems = [sig(melody(seed + 50)), sig(melody(seed + 60))]
        return db, clip, stems

    def test_recovers_mock_threshold(self):
        db, clip, stems = self._setup()
        grid = np.linspace(0.0, 2.5, 40)
        sims = []
        from musedev.fingerprint import combine_stems

        probe_base = combine_stems(stems)
        for e in grid:
            sims.append(match(db, mix(clip, probe_base, float(e))).best_score)
        sims = np.array(sims)
        hidden = 0.5
        oracle = MockOracle(db, hidden)
        got = calibrate_threshold(oracle, clip, stems, db, "pop", grid)
        flagged = sims[sims >= hidden]
        unflagged = sims[sims < hidden]
        gap = flagged.min() - unflagged.max()
        assert abs(got - hidden) <= max(gap, 1e-9)
        # calibrated surrogate agrees with the oracle on every probe
        assert np.all((sims >= got) == (sims >= hidden))

    def test_constant_oracle_fails(self):
        db, clip, stems = self._setup()

        class AlwaysFlag:
            def flagged(self, signal):
                return True

        with pytest.raises(CalibrationError):
            calibrate_threshold(AlwaysFlag(), clip, stems, db, "pop", [0.0, 0.5, 1.0])

    def test_two_point_grid_midpoint(self):
        db, clip, stems = self._setup()
        from musedev.fingerprint import combine_stems

        probe_base = combine_stems(stems)
        grid = [0.0, 2.5]
        sims = [match(db, mix(clip, probe_base, e)).best_score for e in grid]
        hidden = (sims[0] + sims[1]) / 2
        got = calibrate_threshold(MockOracle(db, hidden), clip, stems, db, "pop", grid)
        assert got == pytest.approx((sims[0] + sims[1]) / 2)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        db, signals = build_db([("alpha", 1), ("beta", 2)])
        path = tmp_path / "fp.bin"
        save_db(db, path)
        loaded = load_db(path)
        assert loaded.track_ids() == db.track_ids()
        assert np.array_equal(loaded.hashes, db.hashes)
        for name, signal in signals.items():
            a = match(db, signal)
            b = match(loaded, signal)
            assert a.scores == b.scores and a.best_track == b.best_track

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FingerprintDbError):
            load_db(path)

    def test_truncated(self, tmp_path):
        db, _ = build_db([("alpha", 1)])
        path = tmp_path / "fp.bin"
        save_db(db, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(FingerprintDbError):
            load_db(path)
