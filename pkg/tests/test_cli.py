import json
from pathlib import Path

import numpy as np
import pytest

from musedev.audio import AudioSignal, read_wav, write_wav
from musedev.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main

RATE = 16000


def wav(tmp_path, name, seconds=2.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * RATE)) / RATE
    freq = rng.uniform(200, 600)
    samples = 0.4 * np.sin(2 * np.pi * freq * t) + 0.1 * np.sin(2 * np.pi * 3 * freq * t)
    path = tmp_path / name
    write_wav(AudioSignal(samples, RATE), path)
    return path


class TestBasics:
    def test_usage_error_exit_code(self, capsys):
        assert main(["qdev", "train", "--data"]) == EXIT_USAGE

    def test_missing_file_exit_code(self, capsys):
        assert main(["features", "diff", "/nope/a.wav", "/nope/b.wav"]) == EXIT_IO

    def test_features_diff(self, tmp_path, capsys):
        a = wav(tmp_path, "a.wav", seed=1)
        out = tmp_path / "vec.json"
        assert main(["features", "diff", str(a), str(a), "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc == {"d_p": 0.0, "d_r": 0.0, "d_t": 0.0, "d_l": 0.0}


class TestSynth:
    def test_score_stem_round_trip(self, tmp_path, capsys):
        score = tmp_path / "score.json"
        assert main(["synth", "score", "--seconds", "2", "--notes", "4",
                     "--seed", "5", "--pitch-range", "200:800",
                     "--out", str(score)]) == EXIT_OK
        stem = tmp_path / "stem.wav"
        assert main(["synth", "stem", "--score", str(score), "--instrument", "piano",
                     "--out", str(stem)]) == EXIT_OK
        signal = read_wav(stem)
        assert len(signal) == 2 * RATE
        assert np.max(np.abs(signal.samples)) > 0.5

    def test_unknown_instrument(self, tmp_path, capsys):
        score = tmp_path / "score.json"
        main(["synth", "score", "--seconds", "1", "--notes", "2", "--seed", "1",
              "--out", str(score)])
        assert main(["synth", "stem", "--score", str(score), "--instrument", "theremin",
                     "--out", str(tmp_path / "x.wav")]) == EXIT_USAGE


class TestQdevCli:
    def test_synth_train_eval_oat(self, tmp_path, capsys):
        data = tmp_path / "ratings.csv"
        assert main(["qdev", "synth-data", "--n", "120", "--seed", "7",
                     "--out", str(data)]) == EXIT_OK
        model = tmp_path / "model.json"
        assert main(["qdev", "train", "--data", str(data), "--kind", "random_forest",
                     "--seed", "3", "--hyperparams", '{"n_trees": 20}',
                     "--out", str(model)]) == EXIT_OK
        report = tmp_path / "eval.json"
        assert main(["qdev", "eval", "--model", str(model), "--data", str(data),
                     "--out", str(report)]) == EXIT_OK
        doc = json.loads(report.read_text())
        assert doc["mse"] >= 0 and -1 <= doc["spearman"] <= 1
        oat = tmp_path / "oat.json"
        assert main(["qdev", "oat", "--data", str(data), "--kind", "linear",
                     "--seed", "2", "--out", str(oat)]) == EXIT_OK
        table = json.loads(oat.read_text())
        assert set(table) == {"all", "d_p", "d_r", "d_t", "d_l"}

    def test_select(self, tmp_path, capsys):
        data = tmp_path / "r.csv"
        main(["qdev", "synth-data", "--n", "60", "--seed", "9", "--out", str(data)])
        out = tmp_path / "sel.json"
        assert main(["qdev", "select", "--data", str(data), "--kinds", "linear,random_forest",
                     "--seed", "2", "--out", str(out),
                     "--save-best", str(tmp_path / "best.json")]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["best"] in ("linear", "random_forest")
        assert (tmp_path / "best.json").exists()


class TestFpCli:
    def test_index_and_match(self, tmp_path, capsys):
        db = tmp_path / "fp.bin"
        a = wav(tmp_path, "a.wav", seed=11)
        b = wav(tmp_path, "b.wav", seed=12)
        assert main(["fp", "index", "--db", str(db), "--wav", str(a), "--id", "alpha",
                     "--genre", "pop"]) == EXIT_OK
        assert main(["fp", "index", "--db", str(db), "--wav", str(b), "--id", "beta"]) == EXIT_OK
        out = tmp_path / "match.json"
        assert main(["fp", "match", "--db", str(db), "--wav", str(a),
                     "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["best_track"] == "alpha"
        assert doc["best_score"] == 1.0

    def test_calibrate(self, tmp_path, capsys):
        db = tmp_path / "fp.bin"
        a = wav(tmp_path, "a.wav", seed=21)
        main(["fp", "index", "--db", str(db), "--wav", str(a), "--id", "alpha"])
        stems = tmp_path / "stems"
        stems.mkdir()
        wav(stems, "s1.wav", seed=22)
        wav(stems, "s2.wav", seed=23)
        out = tmp_path / "cal.json"
        assert main(["fp", "calibrate", "--db", str(db), "--clip", str(a),
                     "--stems", str(stems), "--genre", "pop",
                     "--grid", "0.0:3.0:0.25", "--mock-threshold", "0.4",
                     "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert 0.0 <= doc["threshold"] <= 1.0


@pytest.fixture(scope="module")
def attack_fixture(tmp_path_factory):
    """A small indexed track with matching stems and a trained model."""
    tmp_path = tmp_path_factory.mktemp("attack")
    from musedev.experiments import build_toy_corpus
    from musedev.qdev import save_model, synthetic_records, train

    tracks = build_toy_corpus(seconds=4.0, seed=5, genres=("pop",), note_count=6)
    track = tracks[0]
    song = tmp_path / "song.wav"
    write_wav(track.signal, song)
    stems_dir = tmp_path / "stems"
    stems_dir.mkdir()
    for stem in track.stems[:3]:
        write_wav(stem.signal, stems_dir / f"{stem.instrument}.wav")
    db = tmp_path / "fp.bin"
    main(["fp", "index", "--db", str(db), "--wav", str(song), "--id", "song",
          "--genre", "pop"])
    model_path = tmp_path / "model.json"
    model = train(synthetic_records(200, seed=3), "random_forest", {"n_trees": 30}, seed=3)
    save_model(model, model_path)
    return tmp_path, song, stems_dir, db, model_path


class TestAttackCli:
    def test_attack_run_report(self, attack_fixture, capsys):
        tmp_path, song, stems_dir, db, model_path = attack_fixture
        out = tmp_path / "adv.wav"
        report = tmp_path / "report.json"
        code = main([
            "attack", "run", "--in", str(song), "--stems", str(stems_dir),
            "--model", str(model_path), "--db", str(db), "--genre", "pop",
            "--epsilon", "0.5", "--step", "0.05", "--clips", "2",
            "--out", str(out), "--report", str(report),
        ])
        doc = json.loads(report.read_text())
        assert doc["similarity_before"] == 1.0
        assert "wall_time_s" in doc and "per_clip_weights" in doc
        assert out.exists()
        if code == EXIT_OK:
            assert doc["success"] and doc["similarity_after"] < 0.3
        else:
            assert code == 2 and not doc["success"]

    def test_noise_attack(self, attack_fixture, capsys):
        tmp_path, song, stems_dir, db, model_path = attack_fixture
        report = tmp_path / "noise.json"
        code = main([
            "attack", "noise", "--in", str(song), "--db", str(db), "--genre", "pop",
            "--model", str(model_path), "--grid", "0.1,0.3,0.6,1.0,1.5",
            "--seed", "4", "--report", str(report),
        ])
        assert code in (EXIT_OK, 2)
        doc = json.loads(report.read_text())
        assert "qdev" in doc


class TestStudyCli:
    def test_export_round_trip(self, tmp_path, capsys):
        from musedev.study import PairEntry, StudyStore

        a = wav(tmp_path, "o.wav", seed=31)
        b = wav(tmp_path, "p.wav", seed=32)
        manifest = tmp_path / "pairs.json"
        manifest.write_text(json.dumps([
            {"pair_id": "p0", "original": str(a), "perturbed": str(b),
             "features": {"d_p": 1.0, "d_r": 2.0, "d_t": 3.0, "d_l": 4.0}},
        ]))
        data = tmp_path / "data"
        store = StudyStore(data, [PairEntry("p0", str(a), str(b),
                                            {"d_p": 1.0, "d_r": 2.0, "d_t": 3.0, "d_l": 4.0})])
        session = store.create_session("t", seed=1)
        store.submit_rating(session.session_id, session.pair_order[0], 2.5)
        store.close()
        out = tmp_path / "ratings.csv"
        assert main(["study", "export", "--manifest", str(manifest), "--data", str(data),
                     "--out", str(out)]) == EXIT_OK
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "pair_id,d_p,d_r,d_t,d_l,rating"
        assert lines[1].startswith("p0,") and lines[1].endswith("2.5")


class TestDatasetGen:
    def test_generates_pairs_and_manifest(self, tmp_path, capsys):
        base = wav(tmp_path, "base.wav", seconds=1.0, seed=41)
        out = tmp_path / "ds"
        assert main(["dataset", "gen", "--base", str(base), "--out", str(out),
                     "--seed", "6", "--noise-variants", "2", "--note-variants", "1"]) == EXIT_OK
        manifest = json.loads((out / "pairs.json").read_text())
        assert len(manifest) == 3
        for entry in manifest:
            assert Path(entry["original"]).exists()
            assert Path(entry["perturbed"]).exists()
            assert set(entry["features"]) == {"d_p", "d_r", "d_t", "d_l"}


class TestExperimentDeterminism:
    def test_sweep_reports_reproduce_byte_identical(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "corpus": {"seconds": 3.0, "seed": 2, "note_count": 5},
            "threshold": 0.3,
            "qdev": {"train_samples": 80, "kind": "random_forest", "seed": 2},
            "attack": {"clips": 2, "max_escalations": 0},
            "sweep": {"methods": ["noise"], "eps_grid": [0.0, 0.5]},
            "workers": 1,
        }))
        out1 = tmp_path / "r1"
        out2 = tmp_path / "r2"
        assert main(["experiment", "sweep", "--config", str(config), "--seed", "9",
                     "--out-dir", str(out1)]) == EXIT_OK
        assert main(["experiment", "sweep", "--config", str(config), "--seed", "9",
                     "--out-dir", str(out2)]) == EXIT_OK
        assert (out1 / "sweep.json").read_bytes() == (out2 / "sweep.json").read_bytes()
        assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()
        rows = (out1 / "sweep.csv").read_text().strip().splitlines()
        assert rows[0].startswith("method,epsilon,success_rate")
