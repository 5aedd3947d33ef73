"""Reproducible experiment harness: a synthesized multi-genre corpus, the
success-rate-vs-deviation sweep across attack methods, the instrument-count
ablation, and the randomized feature-manipulation comparison.

Track-level jobs are independent and run across processes when workers > 1;
reports are keyed and sorted by track so results do not depend on
scheduling."""
from __future__ import annotations

import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from musedev.attack import (
    ATTACK_FEATURE_CONFIG,
    DetectorContext,
    lp_measures,
    noise_attack,
    perception_aware_attack,
    pitch_shift_perturbation,
    predict_rating,
    tempo_warp_perturbation,
)
from musedev.audio import AudioSignal
from musedev.fingerprint import GENRES, FingerprintDB, index_track, uniform_thresholds
from musedev.perturb import (
    BUILTIN_PROFILES,
    Note,
    Score,
    fold_into_range,
    random_score,
    render_stem,
)

DEFAULT_STEM_INSTRUMENTS = (
    "violin", "clarinet", "flute", "trumpet", "electric_piano", "guitar", "tuba"
)


@dataclass
class ToyTrack:
    track_id: str
    genre: str
    signal: AudioSignal
    stems: list
    score: Score


def build_toy_corpus(seconds: float = 10.0, seed: int = 0, genres=GENRES,
                     stem_instruments=DEFAULT_STEM_INSTRUMENTS,
                     note_count: int = 14, base_instrument: str = "piano",
                     pitch_range=(262.0, 880.0), base_peak: float = 0.55,
                     sample_rate: int = 16000) -> list:
    """One synthesized track per genre plus per-track instrument stems playing
    the same notes (octave-folded into each instrument's range)."""
    tracks = []
    for i, genre in enumerate(genres):
        score = random_score(seconds, note_count, seed=seed * 1000 + i,
                             pitch_range=pitch_range)
        base = render_stem(score, base_instrument, sample_rate)
        signal = AudioSignal(base.signal.samples * (base_peak / 0.9), sample_rate)
        stems = []
        for name in stem_instruments:
            profile = BUILTIN_PROFILES[name]
            lo, hi = profile.pitch_range
            folded = Score(
                tuple(Note(n.onset, n.dur, fold_into_range(n.pitch_hz, lo, hi), n.vel)
                      for n in score.notes),
                score.duration_total,
            )
            stems.append(render_stem(folded, profile, sample_rate))
        tracks.append(ToyTrack(f"track-{genre}", genre, signal, stems, score))
    return tracks


def build_detector_db(tracks, config=None) -> FingerprintDB:
    from musedev.fingerprint import DEFAULT_FP_CONFIG

    db = FingerprintDB()
    for track in tracks:
        index_track(db, track.track_id, track.signal,
                    config or DEFAULT_FP_CONFIG, title=track.track_id, genre=track.genre)
    return db


# ---------------------------------------------------------------------------
# per-track jobs (module-level so they pickle for worker processes)


def _attack_job(args):
    (track, db, threshold, model, method, epsilon, seed, attack_params) = args
    detector = DetectorContext(db, uniform_thresholds(threshold), track.genre)
    if method == "perception_aware":
        result = perception_aware_attack(
            track.signal, track.stems, model, detector, epsilon,
            attack_params.get("step_fraction", 0.1),
            attack_params.get("clips", 6),
            max_escalations=attack_params.get("max_escalations", 0),
        )
        perturbed, success = result.perturbed, result.success
        qdev = result.qdev
    elif method == "noise":
        result = noise_attack(track.signal, detector, [epsilon], seed=seed, qdev_model=model)
        perturbed, success, qdev = result.perturbed, result.success, result.qdev
    elif method in ("pitch_shift", "tempo_warp"):
        rng = np.random.default_rng((seed, zlib.crc32(track.track_id.encode())))
        if method == "pitch_shift":
            semis = float(rng.choice([-4, -3, -2, 2, 3, 4]))
            manipulated = pitch_shift_perturbation(track.signal, semis)
        else:
            manipulated = tempo_warp_perturbation(track.signal, float(rng.uniform(0.8, 1.25)))
        from musedev.audio import mix

        perturbed = mix(track.signal, manipulated, epsilon)
        success = not detector.flagged(perturbed.samples, perturbed.sample_rate)
        qdev = predict_rating(model, track.signal, perturbed)
    else:
        raise ValueError(f"unknown attack method {method!r}")
    measures = lp_measures(track.signal, perturbed)
    return {
        "track_id": track.track_id,
        "genre": track.genre,
        "method": method,
        "epsilon": epsilon,
        "success": bool(success),
        "qdev": float(qdev),
        "l2": measures.l2,
        "linf": measures.linf,
        "snr_db": measures.snr_db,
    }


def _run_jobs(jobs, workers: int = 1):
    if workers <= 1 or len(jobs) <= 1:
        results = [_attack_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_attack_job, jobs, chunksize=1))
    return sorted(results, key=lambda r: (r["method"], r["epsilon"], r["track_id"]))


def sweep_success_vs_qdev(tracks, db, threshold, model, methods, eps_grid,
                          seed: int, workers: int = 1,
                          attack_params: dict | None = None) -> list:
    """Per (method, epsilon): bypass rate and mean deviation rating over the
    corpus. Rows are plot-ready for rate-vs-quality curves."""
    params = attack_params or {}
    jobs = [
        (track, db, threshold, model, method, float(eps), seed, params)
        for method in methods
        for eps in eps_grid
        for track in tracks
    ]
    raw = _run_jobs(jobs, workers)
    rows = []
    for method in sorted(set(methods)):
        for eps in eps_grid:
            group = [r for r in raw if r["method"] == method and r["epsilon"] == float(eps)]
            rows.append(
                {
                    "method": method,
                    "epsilon": float(eps),
                    "success_rate": float(np.mean([r["success"] for r in group])),
                    "mean_qdev": float(np.mean([r["qdev"] for r in group])),
                    "tracks": len(group),
                }
            )
    return rows, raw


def instrument_ablation(tracks, db, threshold, model, counts, epsilon: float,
                        seed: int, workers: int = 1,
                        attack_params: dict | None = None):
    """Rerun the attack restricted to the first c stems for each count c."""
    params = dict(attack_params or {})
    max_count = max(counts)
    for track in tracks:
        if len(track.stems) < max_count:
            raise ValueError(
                f"{track.track_id} has {len(track.stems)} stems, need {max_count}"
            )
    rows = []
    all_raw = []
    for count in counts:
        restricted = [
            ToyTrack(t.track_id, t.genre, t.signal, t.stems[:count], t.score)
            for t in tracks
        ]
        jobs = [
            (track, db, threshold, model, "perception_aware", float(epsilon), seed, params)
            for track in restricted
        ]
        raw = _run_jobs(jobs, workers)
        all_raw.extend([{**r, "stem_count": count} for r in raw])
        rows.append(
            {
                "stem_count": count,
                "success_rate": float(np.mean([r["success"] for r in raw])),
                "mean_qdev": float(np.mean([r["qdev"] for r in raw])),
            }
        )
    return rows, all_raw


def compare_feature_manipulations(tracks, db, threshold, model, seed: int,
                                  trials_per_method: int = 8, workers: int = 1,
                                  qdev_bins=(1.5, 2.5, 3.5, 4.5),
                                  attack_params: dict | None = None):
    """Randomized pitch/tempo/timbre manipulations bucketed by deviation
    rating, reporting bypass rate per bucket (equal-quality comparison)."""
    rng = np.random.default_rng(seed)
    params = {"max_escalations": 0, **(attack_params or {})}
    jobs = []
    for trial in range(trials_per_method):
        track = tracks[int(rng.integers(0, len(tracks)))]
        eps = float(rng.uniform(0.1, 0.9))
        for method in ("pitch_shift", "tempo_warp"):
            jobs.append((track, db, threshold, model, method, eps,
                         seed * 100 + trial, {}))
        jobs.append((track, db, threshold, model, "perception_aware", eps,
                     seed * 100 + trial, params))
    raw = _run_jobs(jobs, workers)
    rows = []
    edges = [0.0, *qdev_bins, 5.0 + 1e-9]
    for method in ("perception_aware", "pitch_shift", "tempo_warp"):
        for lo, hi in zip(edges, edges[1:]):
            group = [r for r in raw if r["method"] == method and lo <= r["qdev"] < hi]
            if not group:
                continue
            rows.append(
                {
                    "method": method,
                    "qdev_bin": f"{lo:.1f}-{hi:.1f}",
                    "success_rate": float(np.mean([r["success"] for r in group])),
                    "count": len(group),
                }
            )
    return rows, raw


def report_document(rows, raw, config: dict) -> str:
    """Canonical JSON embedding the resolved config; identical inputs give
    byte-identical documents."""
    return json.dumps(
        {"config": config, "rows": rows, "per_track": raw},
        sort_keys=True,
        indent=2,
    )


def rows_to_csv(rows) -> str:
    if not rows:
        return ""
    import csv
    import io

    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()
