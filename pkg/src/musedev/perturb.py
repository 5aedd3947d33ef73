"""Perturbation material: instrument stems synthesized from a score, and the
additive-noise / additive-note generators behind the listening-study dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from musedev.audio import AudioSignal, mix, scale_to_snr
from musedev.features import PITCH_MAX_HZ, PITCH_MIN_HZ

FAMILIES = ("stringed", "woodwind", "brass", "keyboard")
VALID_SNR_DB = (0.0, 5.0, 10.0, 15.0)
STEM_PEAK = 0.9  # normalization target leaves headroom for mixing


@dataclass(frozen=True)
class Note:
    onset: float  # seconds
    dur: float
    pitch_hz: float
    vel: float = 1.0


@dataclass(frozen=True)
class Score:
    notes: tuple
    duration_total: float

    def __post_init__(self):
        notes = tuple(self.notes)
        previous = 0.0
        for i, note in enumerate(notes):
            if note.onset < 0 or note.onset < previous:
                raise ValueError(f"note {i}: onsets must be non-negative and non-decreasing")
            if note.dur <= 0:
                raise ValueError(f"note {i}: duration must be positive")
            if not (PITCH_MIN_HZ <= note.pitch_hz <= PITCH_MAX_HZ):
                raise ValueError(
                    f"note {i}: pitch {note.pitch_hz:.2f} Hz outside "
                    f"[{PITCH_MIN_HZ}, {PITCH_MAX_HZ}]"
                )
            if not (0.0 <= note.vel <= 1.0):
                raise ValueError(f"note {i}: velocity must lie in [0, 1]")
            previous = note.onset
        if self.duration_total <= 0:
            raise ValueError("duration_total must be positive")
        object.__setattr__(self, "notes", notes)

    def to_json(self) -> str:
        return json.dumps(
            {
                "notes": [
                    {"onset": n.onset, "dur": n.dur, "pitch_hz": n.pitch_hz, "vel": n.vel}
                    for n in self.notes
                ],
                "total": self.duration_total,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Score":
        obj = json.loads(text)
        notes = tuple(
            Note(float(n["onset"]), float(n["dur"]), float(n["pitch_hz"]), float(n.get("vel", 1.0)))
            for n in obj["notes"]
        )
        return cls(notes, float(obj["total"]))


@dataclass(frozen=True)
class Adsr:
    attack: float
    decay: float
    sustain_level: float
    release: float

    def __post_init__(self):
        if min(self.attack, self.decay, self.release) < 0:
            raise ValueError("ADSR times must be non-negative")
        if not (0.0 <= self.sustain_level <= 1.0):
            raise ValueError("sustain level must lie in [0, 1]")


@dataclass(frozen=True)
class InstrumentProfile:
    name: str
    family: str
    harmonic_amplitudes: tuple
    adsr: Adsr
    pitch_range: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        amps = tuple(float(a) for a in self.harmonic_amplitudes)
        if not amps or amps[0] <= 0:
            raise ValueError("first harmonic amplitude must be positive")
        lo, hi = self.pitch_range
        if not (PITCH_MIN_HZ <= lo < hi <= PITCH_MAX_HZ):
            raise ValueError("pitch_range must lie within the 88-note span")
        object.__setattr__(self, "harmonic_amplitudes", amps)
        object.__setattr__(self, "pitch_range", (float(lo), float(hi)))


@dataclass(frozen=True)
class InstrumentTrack:
    instrument: str
    signal: AudioSignal
    pitch_set: frozenset


BUILTIN_PROFILES = {
    p.name: p
    for p in [
        InstrumentProfile(
            "guitar", "stringed", (1.0, 0.7, 0.45, 0.3, 0.25, 0.15, 0.1, 0.08),
            Adsr(0.005, 0.25, 0.25, 0.2), (82.0, 1319.0),
        ),
        InstrumentProfile(
            "violin", "stringed", (1.0, 0.6, 0.45, 0.35, 0.28, 0.22, 0.18, 0.12),
            Adsr(0.08, 0.1, 0.8, 0.15), (196.0, 4186.0),
        ),
        InstrumentProfile(
            "clarinet", "woodwind", (1.0, 0.02, 0.55, 0.03, 0.35, 0.02, 0.2, 0.02),
            Adsr(0.04, 0.05, 0.85, 0.1), (147.0, 2093.0),
        ),
        InstrumentProfile(
            "flute", "woodwind", (1.0, 0.25, 0.08, 0.04, 0.02),
            Adsr(0.06, 0.05, 0.9, 0.12), (262.0, 4186.0),
        ),
        InstrumentProfile(
            "trumpet", "brass", (0.7, 1.0, 0.9, 0.65, 0.45, 0.3, 0.18, 0.1),
            Adsr(0.05, 0.08, 0.8, 0.1), (165.0, 1976.0),
        ),
        InstrumentProfile(
            "tuba", "brass", (1.0, 0.5, 0.2, 0.08, 0.03),
            Adsr(0.07, 0.1, 0.85, 0.15), (29.0, 440.0),
        ),
        InstrumentProfile(
            "piano", "keyboard", (1.0, 0.55, 0.33, 0.2, 0.14, 0.09, 0.05, 0.03),
            Adsr(0.002, 0.6, 0.15, 0.3), (PITCH_MIN_HZ, PITCH_MAX_HZ),
        ),
        InstrumentProfile(
            "electric_piano", "keyboard", (1.0, 0.15, 0.45, 0.1, 0.05, 0.2),
            Adsr(0.004, 0.3, 0.4, 0.25), (PITCH_MIN_HZ, PITCH_MAX_HZ),
        ),
    ]
}


def load_profiles(path=None) -> dict:
    """Built-in instrument registry, optionally overlaid with a user JSON file."""
    profiles = dict(BUILTIN_PROFILES)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for name, spec in doc.items():
            profiles[name] = InstrumentProfile(
                name,
                spec["family"],
                tuple(spec["harmonic_amplitudes"]),
                Adsr(**spec["adsr"]),
                tuple(spec["pitch_range"]),
            )
    return profiles


def resolve_profile(instrument) -> InstrumentProfile:
    if isinstance(instrument, InstrumentProfile):
        return instrument
    try:
        return BUILTIN_PROFILES[instrument]
    except KeyError:
        raise ValueError(f"unknown instrument {instrument!r}") from None


def _envelope(n_note: int, n_release: int, adsr: Adsr, sample_rate: int) -> np.ndarray:
    n_attack = min(int(round(adsr.attack * sample_rate)), n_note)
    n_decay = min(int(round(adsr.decay * sample_rate)), n_note - n_attack)
    env = np.empty(n_note + n_release)
    env[:n_attack] = np.linspace(0.0, 1.0, n_attack, endpoint=False)
    env[n_attack : n_attack + n_decay] = np.linspace(
        1.0, adsr.sustain_level, n_decay, endpoint=False
    )
    env[n_attack + n_decay : n_note] = adsr.sustain_level
    level = env[n_note - 1] if n_note > 0 else 0.0
    env[n_note:] = np.linspace(level, 0.0, n_release, endpoint=False)
    return env


def render_stem(score: Score, profile, sample_rate: int = 16000) -> InstrumentTrack:
    """Additive synthesis of the score: per note, sum of zero-phase harmonics
    shaped by the instrument's ADSR, then peak-normalized to 0.9."""
    profile = resolve_profile(profile)
    if not score.notes:
        raise ValueError("score has no notes")
    lo, hi = profile.pitch_range
    for i, note in enumerate(score.notes):
        if not (lo <= note.pitch_hz <= hi):
            raise ValueError(
                f"note {i} at {note.pitch_hz:.2f} Hz outside {profile.name} "
                f"range [{lo:.1f}, {hi:.1f}] Hz"
            )
    total = int(round(score.duration_total * sample_rate))
    out = np.zeros(total)
    nyquist = sample_rate / 2.0
    for note in score.notes:
        start = int(round(note.onset * sample_rate))
        if start >= total:
            continue
        n_note = int(round(note.dur * sample_rate))
        n_release = int(round(profile.adsr.release * sample_rate))
        env = _envelope(n_note, n_release, profile.adsr, sample_rate)[: total - start]
        if env.size == 0:
            continue
        t = np.arange(env.size) / sample_rate
        wave = np.zeros(env.size)
        for h, amp in enumerate(profile.harmonic_amplitudes, start=1):
            freq = h * note.pitch_hz
            if freq >= nyquist:
                break
            wave += amp * np.sin(2.0 * np.pi * freq * t)
        out[start : start + env.size] += note.vel * env * wave
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= STEM_PEAK / peak
    return InstrumentTrack(
        profile.name,
        AudioSignal(out, sample_rate),
        frozenset(n.pitch_hz for n in score.notes),
    )


# ---------------------------------------------------------------------------
# study-dataset generators


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    color: str = "white"  # "white" or "colored"
    center_hz: float = 1000.0
    bandwidth_hz: float = 400.0
    max_segments: int = 4
    seed: int = 0


@dataclass(frozen=True)
class NoteSpec:
    instrument: str
    note_count: int
    seed: int = 0
    mix_snr_db: float = 10.0


def _noise_segments(rng: np.random.Generator, total: int, max_segments: int) -> np.ndarray:
    """Boolean activity mask whose active span totals strictly less than half."""
    n_seg = int(rng.integers(1, max_segments + 1))
    budget = total * rng.uniform(0.2, 0.45)
    fracs = rng.uniform(0.5, 1.0, n_seg)
    durations = np.maximum(1, (budget * fracs / fracs.sum()).astype(int))
    free = total - int(durations.sum())
    gaps = rng.uniform(0.0, 1.0, n_seg + 1)
    gaps = (free * gaps / gaps.sum()).astype(int)
    mask = np.zeros(total, dtype=bool)
    pos = 0
    for gap, dur in zip(gaps, durations):
        pos += int(gap)
        mask[pos : pos + int(dur)] = True
        pos += int(dur)
    return mask


def _colored(noise: np.ndarray, sample_rate: int, center_hz: float, bandwidth_hz: float) -> np.ndarray:
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(noise.size, 1.0 / sample_rate)
    sigma = max(bandwidth_hz / 2.0, 1.0)
    spectrum *= np.exp(-0.5 * ((freqs - center_hz) / sigma) ** 2)
    return np.fft.irfft(spectrum, n=noise.size)


def gen_noise_perturbation(base: AudioSignal, spec: NoiseSpec) -> AudioSignal:
    """Base plus segment-gated noise scaled to the requested SNR against the base."""
    if float(spec.snr_db) not in VALID_SNR_DB:
        raise ValueError(f"snr_db must be one of {VALID_SNR_DB}, got {spec.snr_db}")
    if spec.color not in ("white", "colored"):
        raise ValueError(f"color must be 'white' or 'colored', got {spec.color!r}")
    rng = np.random.default_rng(spec.seed)
    mask = _noise_segments(rng, len(base), spec.max_segments)
    noise = rng.standard_normal(len(base))
    if spec.color == "colored":
        noise = _colored(noise, base.sample_rate, spec.center_hz, spec.bandwidth_hz)
    noise = noise * mask
    scaled = scale_to_snr(AudioSignal(noise, base.sample_rate), base, spec.snr_db)
    return mix(base, scaled, 1.0)


def pitch_grid_hz(index) -> np.ndarray:
    """The 88-note semitone grid covering [27.5, 4186] Hz."""
    return PITCH_MIN_HZ * 2.0 ** (np.asarray(index) / 12.0)


def fold_into_range(pitch_hz: float, lo: float, hi: float) -> float:
    """Shift a pitch by octaves until it falls inside [lo, hi]."""
    value = pitch_hz
    while value < lo:
        value *= 2.0
    while value > hi:
        value /= 2.0
    return value if value >= lo else lo


def random_score(duration: float, note_count: int, seed: int = 0,
                 pitch_range: tuple | None = None) -> Score:
    """Seeded random notes on the semitone grid; adjacent onsets stay closer
    than half the duration. pitch_range restricts the grid when given."""
    rng = np.random.default_rng(seed)
    grid = pitch_grid_hz(np.arange(88))
    if pitch_range is not None:
        lo, hi = pitch_range
        grid = grid[(grid >= lo) & (grid <= hi)]
        if grid.size == 0:
            raise ValueError("pitch_range excludes the whole semitone grid")
    onsets = None
    for _ in range(100):
        draw = np.sort(rng.uniform(0.0, max(duration - 0.2, 0.05), note_count))
        if note_count < 2 or np.max(np.diff(draw)) < duration / 2.0:
            onsets = draw
            break
    if onsets is None:
        onsets = np.linspace(0.0, max(duration - 0.3, 0.0), note_count)
    notes = []
    for onset in onsets:
        pitch = float(grid[rng.integers(0, grid.size)])
        dur = float(rng.uniform(0.15, 0.6))
        notes.append(Note(float(onset), dur, pitch, float(rng.uniform(0.6, 1.0))))
    return Score(tuple(notes), duration)


def legato_score(duration: float, note_count: int, seed: int = 0,
                 pitch_range: tuple = (220.0, 880.0), overlap: float = 0.05) -> Score:
    """Back-to-back sustained notes with slight overlap: gapless material for
    bases that should behave like continuously recorded music."""
    if note_count < 1:
        raise ValueError("need at least one note")
    rng = np.random.default_rng(seed)
    grid = pitch_grid_hz(np.arange(88))
    lo, hi = pitch_range
    grid = grid[(grid >= lo) & (grid <= hi)]
    if grid.size == 0:
        raise ValueError("pitch_range excludes the whole semitone grid")
    edges = np.linspace(0.0, duration, note_count + 1)
    jitter = rng.uniform(-0.3, 0.3, note_count - 1) * (duration / note_count)
    onsets = np.concatenate([[0.0], edges[1:-1] + jitter])
    notes = []
    for i, onset in enumerate(onsets):
        end = onsets[i + 1] if i + 1 < len(onsets) else duration
        pitch = float(grid[rng.integers(0, grid.size)])
        notes.append(Note(float(onset), float(end - onset + overlap), pitch,
                          float(rng.uniform(0.7, 1.0))))
    return Score(tuple(notes), duration)


def gen_note_perturbation(base: AudioSignal, spec: NoteSpec) -> AudioSignal:
    """Base plus randomly placed notes rendered by the chosen instrument."""
    if spec.note_count < 0:
        raise ValueError("note_count must be non-negative")
    if spec.note_count == 0:
        return base
    profile = resolve_profile(spec.instrument)
    score = random_score(base.duration, spec.note_count, spec.seed)
    lo, hi = profile.pitch_range
    folded = tuple(
        Note(n.onset, n.dur, fold_into_range(n.pitch_hz, lo, hi), n.vel) for n in score.notes
    )
    stem = render_stem(Score(folded, score.duration_total), profile, base.sample_rate)
    scaled = scale_to_snr(stem.signal, base, spec.mix_snr_db)
    return mix(base, scaled, 1.0)
