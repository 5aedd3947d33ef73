// Rater session state machine: tracks plays of both clips, gates submission,
// and resumes from the server cursor after a refresh.

import { ApiError, NextPair, StudyClient } from "./api.js";

export interface UiSessionState {
  sessionId: string;
  current: NextPair | null;
  playsA: number;
  playsB: number;
  rated: number;
  total: number;
  done: boolean;
  message: string;
}

export type SubmitOutcome = "advanced" | "completed" | "blocked" | "resynced";

export class RaterSession {
  state: UiSessionState;

  constructor(private client: StudyClient, sessionId: string, total: number, rated = 0) {
    this.state = {
      sessionId,
      current: null,
      playsA: 0,
      playsB: 0,
      rated,
      total,
      done: false,
      message: "",
    };
  }

  /** Start a brand-new server session. */
  static async create(client: StudyClient, participantTag: string, seed: number) {
    const info = await client.createSession(participantTag, seed);
    const session = new RaterSession(client, info.session_id, info.total, info.cursor);
    await session.refresh();
    return session;
  }

  /** Rebind to an existing server session (page reload): the server cursor
   * is the source of truth, so nothing is lost or repeated. */
  static async resume(client: StudyClient, sessionId: string, total: number) {
    const session = new RaterSession(client, sessionId, total);
    await session.refresh();
    return session;
  }

  /** Pull the current pair from the server and reset play counters. */
  async refresh(): Promise<void> {
    const next = await this.client.nextPair(this.state.sessionId);
    if (next.done) {
      this.state.done = true;
      this.state.current = null;
      this.state.rated = this.state.total;
    } else {
      this.state.done = false;
      this.state.current = next;
      this.state.rated = next.index ?? this.state.rated;
      this.state.total = next.total ?? this.state.total;
    }
    this.state.playsA = 0;
    this.state.playsB = 0;
    this.state.message = "";
  }

  notePlay(slot: "a" | "b"): void {
    if (slot === "a") this.state.playsA += 1;
    else this.state.playsB += 1;
  }

  /** Submission is allowed only after both clips have been heard. */
  canSubmit(): boolean {
    return (
      !this.state.done &&
      this.state.current !== null &&
      this.state.playsA >= 1 &&
      this.state.playsB >= 1
    );
  }

  get listenCount(): number {
    return Math.max(1, Math.min(this.state.playsA, this.state.playsB));
  }

  async submit(rating: number): Promise<SubmitOutcome> {
    if (!this.canSubmit() || this.state.current?.pair_id === undefined) {
      this.state.message = "listen to both clips before rating";
      return "blocked";
    }
    try {
      const ack = await this.client.submitRating(
        this.state.sessionId,
        this.state.current.pair_id,
        rating,
        this.listenCount
      );
      this.state.rated = ack.cursor;
      await this.refresh();
      return this.state.done ? "completed" : "advanced";
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // server disagrees about the current pair: resync and carry on
        await this.refresh();
        this.state.message = "session resynced; please rate the shown pair";
        return "resynced";
      }
      if (error instanceof ApiError && error.status === 422) {
        this.state.message = `rating rejected: ${error.message}`;
        return "blocked";
      }
      throw error;
    }
  }
}
