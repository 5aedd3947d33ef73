"""Listening-study backend: sessions over a fixed pair set, durable rating
storage with an append-only log, CSV export, and the HTTP API the rating
frontend consumes."""
from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse, Response

RATING_MIN, RATING_MAX = 0.0, 5.0


class UnknownSessionError(KeyError):
    pass


class PairMismatchError(ValueError):
    """Submitted pair is neither the session's current pair nor an already
    rated one."""


@dataclass(frozen=True)
class PairEntry:
    pair_id: str
    original_path: str
    perturbed_path: str
    features: dict | None = None  # precomputed {d_p, d_r, d_t, d_l}


@dataclass
class StudySession:
    session_id: str
    participant_tag: str
    pair_order: list
    cursor: int = 0
    swap_ab: dict = field(default_factory=dict)  # pair_id -> bool, blinded mode only

    def current_pair(self):
        if self.cursor >= len(self.pair_order):
            return None
        return self.pair_order[self.cursor]


@dataclass(frozen=True)
class StoredRating:
    session_id: str
    pair_id: str
    rating: float
    submitted_at: float
    listen_count: int


def load_manifest(path) -> list:
    """Pair manifest: JSON list of {pair_id, original, perturbed, features?}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = []
    for item in doc:
        entries.append(
            PairEntry(
                str(item["pair_id"]),
                str(item["original"]),
                str(item["perturbed"]),
                item.get("features"),
            )
        )
    if not entries:
        raise ValueError(f"{path}: manifest lists no pairs")
    seen = set()
    for e in entries:
        if e.pair_id in seen:
            raise ValueError(f"duplicate pair_id {e.pair_id!r} in manifest")
        seen.add(e.pair_id)
    return entries


class StudyStore:
    """Sessions and ratings backed by an append-only JSON-lines log.

    Every acknowledged mutation is flushed and fsynced before the call
    returns; boot replays the log, so an interrupted process never loses an
    acknowledged rating.
    """

    def __init__(self, data_dir, pairs, blinded: bool = False):
        pairs = list(pairs)
        if not pairs:
            raise ValueError("study store needs at least one pair")
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.pairs = {p.pair_id: p for p in pairs}
        self.pair_ids = [p.pair_id for p in pairs]
        self.blinded = blinded
        self.sessions: dict = {}
        self.ratings: dict = {}  # (session_id, pair_id) -> StoredRating
        self._log_path = self.data_dir / "events.jsonl"
        self._replay()
        self._log = open(self._log_path, "a", encoding="utf-8")

    # -- persistence ------------------------------------------------------

    def _replay(self):
        if not self._log_path.exists():
            return
        with open(self._log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["type"] == "session":
                    session = StudySession(
                        event["session_id"],
                        event["participant_tag"],
                        list(event["pair_order"]),
                        0,
                        {k: bool(v) for k, v in event.get("swap_ab", {}).items()},
                    )
                    self.sessions[session.session_id] = session
                elif event["type"] == "rating":
                    self._apply_rating(
                        StoredRating(
                            event["session_id"],
                            event["pair_id"],
                            float(event["rating"]),
                            float(event["submitted_at"]),
                            int(event["listen_count"]),
                        )
                    )

    def _append(self, event: dict):
        self._log.write(json.dumps(event) + "\n")
        self._log.flush()
        os.fsync(self._log.fileno())

    def _apply_rating(self, rating: StoredRating):
        key = (rating.session_id, rating.pair_id)
        session = self.sessions.get(rating.session_id)
        if session is None:
            return
        if key not in self.ratings and session.current_pair() == rating.pair_id:
            session.cursor += 1
        self.ratings[key] = rating

    def close(self):
        self._log.close()

    # -- operations -------------------------------------------------------

    def create_session(self, participant_tag: str, seed: int) -> StudySession:
        if not self.pair_ids:
            raise ValueError("no pairs configured")
        rng = np.random.default_rng(seed)
        order = [self.pair_ids[i] for i in rng.permutation(len(self.pair_ids))]
        session_id = f"s{len(self.sessions):04d}-{seed}"
        swap = {}
        if self.blinded:
            swap = {pid: bool(rng.integers(0, 2)) for pid in order}
        session = StudySession(session_id, participant_tag, order, 0, swap)
        self._append(
            {
                "type": "session",
                "session_id": session_id,
                "participant_tag": participant_tag,
                "pair_order": order,
                "swap_ab": {k: int(v) for k, v in swap.items()},
            }
        )
        self.sessions[session_id] = session
        return session

    def get_session(self, session_id: str) -> StudySession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(session_id) from None

    def next_pair(self, session_id: str):
        """The pair at the cursor (cursor only advances on rating), or None."""
        session = self.get_session(session_id)
        pair_id = session.current_pair()
        if pair_id is None:
            return None
        swapped = session.swap_ab.get(pair_id, False)
        return {
            "pair_id": pair_id,
            "index": session.cursor,
            "total": len(session.pair_order),
            "swapped": swapped,
            "blinded": self.blinded,
        }

    def audio_path(self, session_id: str, pair_id: str, slot: str) -> str:
        """Resolve slot a/b to a file, honoring the session's blinding swap."""
        if slot not in ("a", "b"):
            raise ValueError("slot must be 'a' or 'b'")
        session = self.get_session(session_id)
        entry = self.pairs.get(pair_id)
        if entry is None:
            raise KeyError(pair_id)
        want_original = slot == "a"
        if session.swap_ab.get(pair_id, False):
            want_original = not want_original
        return entry.original_path if want_original else entry.perturbed_path

    def submit_rating(self, session_id: str, pair_id: str, rating: float,
                      listen_count: int = 1) -> StoredRating:
        if not (RATING_MIN <= rating <= RATING_MAX):
            raise ValueError(f"rating {rating} outside [{RATING_MIN}, {RATING_MAX}]")
        if listen_count < 1:
            raise ValueError("listen_count must be at least 1")
        session = self.get_session(session_id)
        key = (session_id, pair_id)
        is_current = session.current_pair() == pair_id
        is_rerate = key in self.ratings
        if not (is_current or is_rerate):
            raise PairMismatchError(
                f"pair {pair_id!r} is not the session's current pair"
            )
        stored = StoredRating(session_id, pair_id, float(rating), time.time(), int(listen_count))
        event = {
            "type": "rating",
            "session_id": session_id,
            "pair_id": pair_id,
            "rating": stored.rating,
            "submitted_at": stored.submitted_at,
            "listen_count": stored.listen_count,
        }
        if is_rerate:
            event["note"] = "overwrites earlier rating"
        self._append(event)
        self._apply_rating(stored)
        return stored

    def export_ratings(self, averaged: bool = False) -> str:
        """CSV with header pair_id,d_p,d_r,d_t,d_l,rating. Rows lacking
        precomputed features are skipped with a warning comment on stderr."""
        import sys

        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["pair_id", "d_p", "d_r", "d_t", "d_l", "rating"])
        grouped: dict = {}
        for (_, pair_id), stored in sorted(self.ratings.items()):
            grouped.setdefault(pair_id, []).append(stored.rating)
        for pair_id in sorted(grouped):
            entry = self.pairs.get(pair_id)
            if entry is None or not entry.features:
                print(f"warning: no precomputed features for pair {pair_id}, skipped",
                      file=sys.stderr)
                continue
            feats = [entry.features[k] for k in ("d_p", "d_r", "d_t", "d_l")]
            if averaged:
                writer.writerow([pair_id, *feats, float(np.mean(grouped[pair_id]))])
            else:
                for rating in grouped[pair_id]:
                    writer.writerow([pair_id, *feats, rating])
        return out.getvalue()


# ---------------------------------------------------------------------------
# HTTP API


def create_app(store: StudyStore):
    """FastAPI app over a StudyStore: POST /sessions, GET /sessions/{id}/next,
    POST /sessions/{id}/ratings, GET /export.csv, GET /audio/... (with Range)."""
    app = FastAPI(title="listening study server")
    app.state.store = store

    @app.post("/sessions")
    def create_session(body: dict):
        tag = str(body.get("participant_tag", "anonymous"))
        seed = int(body.get("seed", 0))
        session = store.create_session(tag, seed)
        return {
            "session_id": session.session_id,
            "total": len(session.pair_order),
            "cursor": session.cursor,
        }

    @app.get("/sessions/{session_id}/next")
    def next_pair(session_id: str):
        try:
            info = store.next_pair(session_id)
        except UnknownSessionError:
            raise HTTPException(status_code=404, detail="unknown session")
        if info is None:
            return {"done": True}
        pair_id = info["pair_id"]
        return {
            "done": False,
            "pair_id": pair_id,
            "index": info["index"],
            "total": info["total"],
            "blinded": info["blinded"],
            "original_url": f"/audio/{session_id}/{pair_id}/a",
            "perturbed_url": f"/audio/{session_id}/{pair_id}/b",
        }

    @app.post("/sessions/{session_id}/ratings")
    def submit(session_id: str, body: dict):
        try:
            stored = store.submit_rating(
                session_id,
                str(body["pair_id"]),
                float(body["rating"]),
                int(body.get("listen_count", 1)),
            )
        except UnknownSessionError:
            raise HTTPException(status_code=404, detail="unknown session")
        except PairMismatchError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        session = store.get_session(session_id)
        return {
            "ok": True,
            "pair_id": stored.pair_id,
            "cursor": session.cursor,
            "total": len(session.pair_order),
        }

    @app.get("/export.csv")
    def export(averaged: bool = False):
        return PlainTextResponse(store.export_ratings(averaged), media_type="text/csv")

    @app.get("/audio/{pair_id}/{slot}")
    def audio_plain(pair_id: str, slot: str, request: Request):
        """Labeled access: slot a is always the original, b the perturbed."""
        entry = store.pairs.get(pair_id)
        if entry is None or slot not in ("a", "b"):
            raise HTTPException(status_code=404, detail="unknown audio")
        path = entry.original_path if slot == "a" else entry.perturbed_path
        return _serve_audio(path, request)

    @app.get("/audio/{session_id}/{pair_id}/{slot}")
    def audio(session_id: str, pair_id: str, slot: str, request: Request):
        try:
            path = store.audio_path(session_id, pair_id, slot)
        except (UnknownSessionError, KeyError, ValueError):
            raise HTTPException(status_code=404, detail="unknown audio")
        return _serve_audio(path, request)

    def _serve_audio(path: str, request: Request):
        try:
            data = Path(path).read_bytes()
        except OSError:
            raise HTTPException(status_code=404, detail="audio file missing")
        range_header = request.headers.get("range")
        if range_header and range_header.startswith("bytes="):
            try:
                start_s, _, end_s = range_header[6:].partition("-")
                start = int(start_s)
                end = int(end_s) if end_s else len(data) - 1
            except ValueError:
                raise HTTPException(status_code=416, detail="bad range")
            end = min(end, len(data) - 1)
            if start > end or start >= len(data):
                raise HTTPException(status_code=416, detail="range out of bounds")
            return Response(
                content=data[start : end + 1],
                status_code=206,
                media_type="audio/wav",
                headers={
                    "Content-Range": f"bytes {start}-{end}/{len(data)}",
                    "Accept-Ranges": "bytes",
                },
            )
        return Response(content=data, media_type="audio/wav",
                        headers={"Accept-Ranges": "bytes"})

    return app
