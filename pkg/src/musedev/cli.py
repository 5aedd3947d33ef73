"""Command-line entry point: feature extraction, dataset generation, rating
model training and analysis, fingerprint database management, attacks,
experiment sweeps, and the study server.

Exit codes: 0 success, 1 usage error, 2 infeasible attack, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".toml":
        import tomllib

        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


def _load_ratings_csv(path):
    from musedev.features import FeatureDeviationVector
    from musedev.qdev import RatingRecord

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vec = FeatureDeviationVector(
                float(row["d_p"]), float(row["d_r"]), float(row["d_t"]), float(row["d_l"])
            )
            records.append(RatingRecord(row["pair_id"], vec, float(row["rating"])))
    if not records:
        raise UsageError(f"{path}: no rating rows")
    return records


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")


def _print_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        _write(path, text)
    else:
        print(text)


# ---------------------------------------------------------------------------
# feature commands


def cmd_features_diff(args):
    from musedev.audio import read_wav
    from musedev.features import feature_deviation

    vec = feature_deviation(read_wav(args.a), read_wav(args.b))
    _print_json(json.loads(vec.to_json()), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthesis commands


def cmd_synth_score(args):
    from musedev.perturb import random_score

    pitch_range = None
    if args.pitch_range:
        lo, hi = args.pitch_range.split(":")
        pitch_range = (float(lo), float(hi))
    score = random_score(args.seconds, args.notes, seed=args.seed, pitch_range=pitch_range)
    _write(args.out, score.to_json())
    return EXIT_OK


def cmd_synth_stem(args):
    from musedev.audio import write_wav
    from musedev.perturb import Score, load_profiles, render_stem

    profiles = load_profiles(args.profiles)
    if args.instrument not in profiles:
        raise UsageError(f"unknown instrument {args.instrument!r}")
    score = Score.from_json(Path(args.score).read_text())
    track = render_stem(score, profiles[args.instrument], args.rate)
    write_wav(track.signal, args.out)
    return EXIT_OK


def cmd_synth_corpus(args):
    from musedev.audio import write_wav
    from musedev.experiments import DEFAULT_STEM_INSTRUMENTS, build_toy_corpus

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tracks = build_toy_corpus(seconds=args.seconds, seed=args.seed)
    index = []
    for track in tracks:
        write_wav(track.signal, out / f"{track.track_id}.wav")
        stem_dir = out / f"{track.track_id}-stems"
        stem_dir.mkdir(exist_ok=True)
        for stem in track.stems:
            write_wav(stem.signal, stem_dir / f"{stem.instrument}.wav")
        index.append({"track_id": track.track_id, "genre": track.genre,
                      "stems": list(DEFAULT_STEM_INSTRUMENTS)})
    _print_json(index, out / "corpus.json")
    return EXIT_OK


def cmd_dataset_gen(args):
    """Perturbed-pair dataset for a listening study: noise and note variants of
    each base clip, plus the manifest with precomputed deviation vectors."""
    from musedev.audio import read_wav, write_wav
    from musedev.features import feature_deviation
    from musedev.perturb import NoiseSpec, NoteSpec, gen_noise_perturbation, gen_note_perturbation

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_paths = sorted(Path(args.base).glob("*.wav")) if Path(args.base).is_dir() else [Path(args.base)]
    if not base_paths:
        raise UsageError(f"{args.base}: no wav files")
    manifest = []
    rng = np.random.default_rng(args.seed)
    for base_path in base_paths:
        base = read_wav(base_path)
        original_out = out / f"{base_path.stem}-orig.wav"
        write_wav(base, original_out)
        variants = []
        for i in range(args.noise_variants):
            snr = float(rng.choice([0.0, 5.0, 10.0, 15.0]))
            color = "white" if rng.random() < 0.5 else "colored"
            spec = NoiseSpec(snr_db=snr, color=color,
                             center_hz=float(rng.uniform(300, 3000)),
                             seed=int(rng.integers(0, 2**31)))
            variants.append((f"noise{i}", gen_noise_perturbation(base, spec)))
        for i in range(args.note_variants):
            spec = NoteSpec("piano" if rng.random() < 0.5 else "violin",
                            int(rng.integers(2, 6)),
                            seed=int(rng.integers(0, 2**31)),
                            mix_snr_db=float(rng.choice([0.0, 5.0, 10.0])))
            variants.append((f"notes{i}", gen_note_perturbation(base, spec)))
        for tag, perturbed in variants:
            pair_id = f"{base_path.stem}-{tag}"
            pert_out = out / f"{pair_id}.wav"
            write_wav(perturbed, pert_out)
            vec = feature_deviation(base, perturbed)
            manifest.append(
                {
                    "pair_id": pair_id,
                    "original": str(original_out),
                    "perturbed": str(pert_out),
                    "features": json.loads(vec.to_json()),
                }
            )
    _print_json(manifest, out / "pairs.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# qdev commands


def cmd_qdev_train(args):
    from musedev.qdev import save_model, train

    records = _load_ratings_csv(args.data)
    hyper = json.loads(args.hyperparams) if args.hyperparams else None
    model = train(records, args.kind, hyper, seed=args.seed)
    save_model(model, args.out)
    print(f"trained {args.kind} on {len(records)} records -> {args.out}")
    return EXIT_OK


def cmd_qdev_eval(args):
    from musedev.qdev import evaluate, load_model

    model = load_model(args.model)
    report = evaluate(model, _load_ratings_csv(args.data))
    _print_json({"mse": report.mse, "spearman": report.spearman}, args.out)
    return EXIT_OK


def cmd_qdev_select(args):
    from musedev.qdev import model_selection, save_model

    records = _load_ratings_csv(args.data)
    kinds = args.kinds.split(",")
    best, table = model_selection(records, kinds, seed=args.seed, folds=args.folds)
    _print_json({"cv_mse": table, "best": best.kind}, args.out)
    if args.save_best:
        save_model(best, args.save_best)
    return EXIT_OK


def cmd_qdev_oat(args):
    from musedev.qdev import oat_sensitivity

    table = oat_sensitivity(_load_ratings_csv(args.data), args.kind, seed=args.seed,
                            folds=args.folds)
    _print_json(table, args.out)
    return EXIT_OK


def cmd_qdev_synth_data(args):
    from musedev.qdev import synthetic_records

    records = synthetic_records(args.n, seed=args.seed)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair_id", "d_p", "d_r", "d_t", "d_l", "rating"])
        for rec in records:
            writer.writerow([rec.pair_id, *rec.features.as_array().tolist(), rec.rating])
    print(f"wrote {len(records)} synthetic-rater rows -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fingerprint commands


def cmd_fp_index(args):
    from musedev.audio import read_wav
    from musedev.fingerprint import FingerprintDB, index_track, load_db, save_db

    db = load_db(args.db) if Path(args.db).exists() else FingerprintDB()
    index_track(db, args.id, read_wav(args.wav), title=args.title or args.id,
                genre=args.genre or "")
    save_db(db, args.db)
    print(f"indexed {args.id}: {db.tracks[-1].hash_count} hashes ({len(db)} tracks total)")
    return EXIT_OK


def cmd_fp_match(args):
    from musedev.audio import read_wav
    from musedev.fingerprint import load_db, match

    result = match(load_db(args.db), read_wav(args.wav))
    _print_json(
        {
            "best_track": result.best_track,
            "best_score": result.best_score,
            "scores": result.scores,
            "query_hashes": result.query_hash_count,
        },
        args.out,
    )
    return EXIT_OK


def cmd_fp_calibrate(args):
    from musedev.audio import read_wav
    from musedev.fingerprint import MockOracle, calibrate_threshold, load_db

    db = load_db(args.db)
    clip = read_wav(args.clip)
    stems = [read_wav(p) for p in sorted(Path(args.stems).glob("*.wav"))]
    if not stems:
        raise UsageError(f"{args.stems}: no stem wavs")
    lo, hi, step = (float(x) for x in args.grid.split(":"))
    grid = np.arange(lo, hi + 1e-9, step)
    oracle = MockOracle(db, args.mock_threshold)
    threshold = calibrate_threshold(oracle, clip, stems, db, args.genre, grid)
    _print_json({"genre": args.genre, "threshold": threshold}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack commands


def _detector_from_args(args):
    from musedev.attack import DetectorContext
    from musedev.fingerprint import load_db, uniform_thresholds

    db = load_db(args.db)
    thresholds = uniform_thresholds(args.threshold)
    return DetectorContext(db, thresholds, args.genre)


def cmd_attack_run(args):
    from musedev.attack import lp_measures, perception_aware_attack
    from musedev.audio import read_wav, write_wav
    from musedev.perturb import InstrumentTrack
    from musedev.qdev import load_model

    signal = read_wav(getattr(args, "in"))
    stem_paths = sorted(Path(args.stems).glob("*.wav"))
    if not stem_paths:
        raise UsageError(f"{args.stems}: no stem wavs")
    stems = [
        InstrumentTrack(p.stem, read_wav(p), frozenset()) for p in stem_paths
    ]
    model = load_model(args.model)
    detector = _detector_from_args(args)
    started = time.time()
    before = detector.verdict(signal)
    result = perception_aware_attack(
        signal, stems, model, detector, args.epsilon,
        args.step / args.epsilon if args.epsilon else 0.1,
        args.clips, max_escalations=args.max_escalations,
    )
    wall = time.time() - started
    write_wav(result.perturbed, args.out)
    measures = lp_measures(signal, result.perturbed)
    report = {
        "input": str(getattr(args, "in")),
        "epsilon": args.epsilon,
        "step": args.step,
        "clips": args.clips,
        "genre": args.genre,
        "threshold": args.threshold,
        "success": result.success,
        "qdev": result.qdev,
        "mean_clip_qdev": result.mean_clip_qdev,
        "per_clip_qdevs": result.per_clip_qdevs,
        "per_clip_weights": [list(w.weights) for w in result.per_clip_weights],
        "similarity_before": before.similarity,
        "similarity_after": result.verdict.similarity,
        "l2": measures.l2,
        "linf": measures.linf,
        "snr_db": measures.snr_db,
        "candidates_evaluated": result.candidates_evaluated,
        "escalations": result.escalations,
        "infeasible_clips": result.infeasible_clips,
        "wall_time_s": wall,
    }
    if args.report:
        _print_json(report, args.report)
    print(f"success={result.success} qdev={result.qdev:.3f} "
          f"similarity {before.similarity:.3f} -> {result.verdict.similarity:.3f}")
    return EXIT_OK if result.success else EXIT_INFEASIBLE


def cmd_attack_noise(args):
    from musedev.attack import lp_measures, noise_attack
    from musedev.audio import read_wav, write_wav
    from musedev.qdev import load_model

    signal = read_wav(getattr(args, "in"))
    detector = _detector_from_args(args)
    model = load_model(args.model) if args.model else None
    grid = [float(x) for x in args.grid.split(",")]
    result = noise_attack(signal, detector, grid, seed=args.seed, qdev_model=model)
    if args.out:
        write_wav(result.perturbed, args.out)
    measures = lp_measures(signal, result.perturbed)
    if args.report:
        _print_json(
            {
                "success": result.success,
                "epsilon": result.epsilon,
                "qdev": result.qdev,
                "similarity_after": result.verdict.similarity,
                "l2": measures.l2,
                "linf": measures.linf,
                "snr_db": measures.snr_db,
            },
            args.report,
        )
    print(f"success={result.success} eps={result.epsilon} qdev={result.qdev:.3f}")
    return EXIT_OK if result.success else EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# experiments


def _experiment_setup(args):
    from musedev.experiments import build_detector_db, build_toy_corpus
    from musedev.qdev import synthetic_records, train

    config = _load_config(args.config) if args.config else {}
    seed = args.seed
    corpus_cfg = config.get("corpus", {})
    tracks = build_toy_corpus(
        seconds=corpus_cfg.get("seconds", 10.0),
        seed=corpus_cfg.get("seed", seed),
        note_count=corpus_cfg.get("note_count", 14),
        base_peak=corpus_cfg.get("base_peak", 0.55),
    )
    db = build_detector_db(tracks)
    qdev_cfg = config.get("qdev", {})
    if qdev_cfg.get("model"):
        from musedev.qdev import load_model

        model = load_model(qdev_cfg["model"])
    else:
        records = synthetic_records(qdev_cfg.get("train_samples", 500),
                                    seed=qdev_cfg.get("seed", seed))
        model = train(records, qdev_cfg.get("kind", "random_forest"),
                      seed=qdev_cfg.get("seed", seed))
    resolved = {
        "seed": seed,
        "threshold": config.get("threshold", 0.3),
        "workers": config.get("workers", 1),
        "corpus": {
            "seconds": corpus_cfg.get("seconds", 10.0),
            "seed": corpus_cfg.get("seed", seed),
            "note_count": corpus_cfg.get("note_count", 14),
            "base_peak": corpus_cfg.get("base_peak", 0.55),
        },
        "qdev": {
            "train_samples": qdev_cfg.get("train_samples", 500),
            "kind": qdev_cfg.get("kind", "random_forest"),
            "seed": qdev_cfg.get("seed", seed),
        },
        "attack": config.get("attack", {}),
    }
    return tracks, db, model, resolved, config


def cmd_experiment_sweep(args):
    from musedev.experiments import report_document, rows_to_csv, sweep_success_vs_qdev

    tracks, db, model, resolved, config = _experiment_setup(args)
    sweep_cfg = config.get("sweep", {})
    methods = sweep_cfg.get(
        "methods", ["perception_aware", "noise", "pitch_shift", "tempo_warp"]
    )
    eps_grid = sweep_cfg.get("eps_grid", [0.0, 0.2, 0.4, 0.6, 0.9])
    resolved["sweep"] = {"methods": methods, "eps_grid": eps_grid}
    rows, raw = sweep_success_vs_qdev(
        tracks, db, resolved["threshold"], model, methods, eps_grid,
        seed=args.seed, workers=resolved["workers"],
        attack_params=resolved["attack"],
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "sweep.csv", rows_to_csv(rows))
    _write(out_dir / "sweep.json", report_document(rows, raw, resolved))
    print(f"wrote {out_dir}/sweep.csv and sweep.json ({len(rows)} rows)")
    return EXIT_OK


def cmd_experiment_ablation(args):
    from musedev.experiments import instrument_ablation, report_document, rows_to_csv

    tracks, db, model, resolved, config = _experiment_setup(args)
    counts = [int(c) for c in args.counts.split(",")]
    attack_cfg = dict(resolved["attack"])
    attack_cfg.setdefault("max_escalations", 3)
    epsilon = attack_cfg.pop("epsilon", 0.5)
    resolved["ablation"] = {"counts": counts, "epsilon": epsilon}
    rows, raw = instrument_ablation(
        tracks, db, resolved["threshold"], model, counts, epsilon,
        seed=args.seed, workers=resolved["workers"], attack_params=attack_cfg,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "ablation.csv", rows_to_csv(rows))
    _write(out_dir / "ablation.json", report_document(rows, raw, resolved))
    print(f"wrote {out_dir}/ablation.csv and ablation.json")
    return EXIT_OK


def cmd_attack_compare_features(args):
    from musedev.experiments import (
        compare_feature_manipulations,
        report_document,
        rows_to_csv,
    )

    tracks, db, model, resolved, config = _experiment_setup(args)
    rows, raw = compare_feature_manipulations(
        tracks, db, resolved["threshold"], model, seed=args.seed,
        trials_per_method=args.trials, workers=resolved["workers"],
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "compare_features.csv", rows_to_csv(rows))
    _write(out_dir / "compare_features.json", report_document(rows, raw, resolved))
    print(f"wrote {out_dir}/compare_features.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# study


def cmd_study_serve(args):
    import uvicorn

    from musedev.study import StudyStore, create_app, load_manifest

    store = StudyStore(args.data, load_manifest(args.manifest), blinded=args.blinded)
    app = create_app(store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_study_export(args):
    from musedev.study import StudyStore, load_manifest

    store = StudyStore(args.data, load_manifest(args.manifest))
    text = store.export_ratings(averaged=args.averaged)
    if args.out:
        _write(args.out, text)
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="musedev", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    features = sub.add_parser("features", help="feature deviation tools").add_subparsers(
        dest="sub", required=True
    )
    diff = features.add_parser("diff", help="deviation vector between two wavs")
    diff.add_argument("a")
    diff.add_argument("b")
    diff.add_argument("--out")
    diff.set_defaults(func=cmd_features_diff)

    synth = sub.add_parser("synth", help="score and stem synthesis").add_subparsers(
        dest="sub", required=True
    )
    score = synth.add_parser("score", help="random score JSON")
    score.add_argument("--seconds", type=float, default=5.0)
    score.add_argument("--notes", type=int, default=8)
    score.add_argument("--seed", type=int, required=True)
    score.add_argument("--pitch-range", help="lo:hi in Hz")
    score.add_argument("--out", required=True)
    score.set_defaults(func=cmd_synth_score)
    stem = synth.add_parser("stem", help="render an instrument stem from a score")
    stem.add_argument("--score", required=True)
    stem.add_argument("--instrument", required=True)
    stem.add_argument("--profiles", help="JSON registry overriding built-ins")
    stem.add_argument("--rate", type=int, default=16000)
    stem.add_argument("--out", required=True)
    stem.set_defaults(func=cmd_synth_stem)
    corpus = synth.add_parser("corpus", help="multi-genre toy corpus with stems")
    corpus.add_argument("--out", required=True)
    corpus.add_argument("--seed", type=int, required=True)
    corpus.add_argument("--seconds", type=float, default=10.0)
    corpus.set_defaults(func=cmd_synth_corpus)

    dataset = sub.add_parser("dataset", help="study dataset generation").add_subparsers(
        dest="sub", required=True
    )
    gen = dataset.add_parser("gen", help="noise/note perturbation pairs + manifest")
    gen.add_argument("--base", required=True, help="wav file or directory")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--noise-variants", type=int, default=3)
    gen.add_argument("--note-variants", type=int, default=2)
    gen.set_defaults(func=cmd_dataset_gen)

    qdev = sub.add_parser("qdev", help="rating model").add_subparsers(dest="sub", required=True)
    tr = qdev.add_parser("train")
    tr.add_argument("--data", required=True)
    tr.add_argument("--kind", default="random_forest")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--hyperparams", help="JSON object")
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_qdev_train)
    ev = qdev.add_parser("eval")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_qdev_eval)
    sel = qdev.add_parser("select")
    sel.add_argument("--data", required=True)
    sel.add_argument("--kinds", default="linear,bayesian_ridge,logistic,linear_svr,random_forest")
    sel.add_argument("--seed", type=int, required=True)
    sel.add_argument("--folds", type=int, default=5)
    sel.add_argument("--save-best")
    sel.add_argument("--out")
    sel.set_defaults(func=cmd_qdev_select)
    oat = qdev.add_parser("oat")
    oat.add_argument("--data", required=True)
    oat.add_argument("--kind", default="random_forest")
    oat.add_argument("--seed", type=int, required=True)
    oat.add_argument("--folds", type=int, default=5)
    oat.add_argument("--out")
    oat.set_defaults(func=cmd_qdev_oat)
    sd = qdev.add_parser("synth-data")
    sd.add_argument("--n", type=int, default=500)
    sd.add_argument("--seed", type=int, required=True)
    sd.add_argument("--out", required=True)
    sd.set_defaults(func=cmd_qdev_synth_data)

    fp = sub.add_parser("fp", help="fingerprint detector").add_subparsers(dest="sub", required=True)
    fpi = fp.add_parser("index")
    fpi.add_argument("--db", required=True)
    fpi.add_argument("--wav", required=True)
    fpi.add_argument("--id", required=True)
    fpi.add_argument("--title")
    fpi.add_argument("--genre")
    fpi.set_defaults(func=cmd_fp_index)
    fpm = fp.add_parser("match")
    fpm.add_argument("--db", required=True)
    fpm.add_argument("--wav", required=True)
    fpm.add_argument("--out")
    fpm.set_defaults(func=cmd_fp_match)
    fpc = fp.add_parser("calibrate")
    fpc.add_argument("--db", required=True)
    fpc.add_argument("--clip", required=True)
    fpc.add_argument("--stems", required=True)
    fpc.add_argument("--genre", required=True)
    fpc.add_argument("--grid", default="0.0:2.5:0.1", help="lo:hi:step energies")
    fpc.add_argument("--mock-threshold", type=float, default=0.35,
                     help="hidden threshold of the stand-in oracle")
    fpc.add_argument("--out")
    fpc.set_defaults(func=cmd_fp_calibrate)

    attack = sub.add_parser("attack", help="adversarial perturbation search").add_subparsers(
        dest="sub", required=True
    )
    run = attack.add_parser("run")
    run.add_argument("--in", required=True)
    run.add_argument("--stems", required=True)
    run.add_argument("--model", required=True)
    run.add_argument("--db", required=True)
    run.add_argument("--genre", required=True)
    run.add_argument("--threshold", type=float, default=0.3)
    run.add_argument("--epsilon", type=float, required=True)
    run.add_argument("--step", type=float, required=True)
    run.add_argument("--clips", type=int, default=6)
    run.add_argument("--max-escalations", type=int, default=3)
    run.add_argument("--out", required=True)
    run.add_argument("--report")
    run.set_defaults(func=cmd_attack_run)
    noise = attack.add_parser("noise")
    noise.add_argument("--in", required=True)
    noise.add_argument("--db", required=True)
    noise.add_argument("--genre", required=True)
    noise.add_argument("--threshold", type=float, default=0.3)
    noise.add_argument("--model")
    noise.add_argument("--grid", default="0.05,0.1,0.2,0.4,0.8,1.2,1.8")
    noise.add_argument("--seed", type=int, required=True)
    noise.add_argument("--out")
    noise.add_argument("--report")
    noise.set_defaults(func=cmd_attack_noise)
    cmp = attack.add_parser("compare-features")
    cmp.add_argument("--config")
    cmp.add_argument("--seed", type=int, required=True)
    cmp.add_argument("--trials", type=int, default=8)
    cmp.add_argument("--out-dir", required=True)
    cmp.set_defaults(func=cmd_attack_compare_features)

    experiment = sub.add_parser("experiment", help="reproducible sweeps").add_subparsers(
        dest="sub", required=True
    )
    sweep = experiment.add_parser("sweep")
    sweep.add_argument("--config")
    sweep.add_argument("--seed", type=int, required=True)
    sweep.add_argument("--out-dir", required=True)
    sweep.set_defaults(func=cmd_experiment_sweep)
    abl = experiment.add_parser("ablation")
    abl.add_argument("--config")
    abl.add_argument("--seed", type=int, required=True)
    abl.add_argument("--counts", default="1,3,5,7")
    abl.add_argument("--out-dir", required=True)
    abl.set_defaults(func=cmd_experiment_ablation)

    study = sub.add_parser("study", help="listening-study server").add_subparsers(
        dest="sub", required=True
    )
    serve = study.add_parser("serve")
    serve.add_argument("--manifest", required=True)
    serve.add_argument("--data", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8477)
    serve.add_argument("--blinded", action="store_true")
    serve.set_defaults(func=cmd_study_serve)
    export = study.add_parser("export")
    export.add_argument("--manifest", required=True)
    export.add_argument("--data", required=True)
    export.add_argument("--averaged", action="store_true")
    export.add_argument("--out")
    export.set_defaults(func=cmd_study_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
