// DOM wiring: audio players for the A/B pair, the 0-5 slider with band
// labels, progress display, and submission.

import { StudyClient } from "./api.js";
import { bandLabel, clampRating, RATING_MAX, RATING_MIN, RATING_STEP } from "./bands.js";
import { RaterSession } from "./session.js";

const SESSION_KEY = "musedev-session";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot() {
  const client = new StudyClient("");
  const params = new URLSearchParams(window.location.search);

  let session: RaterSession;
  const saved = window.sessionStorage.getItem(SESSION_KEY);
  if (saved) {
    const { id, total } = JSON.parse(saved);
    session = await RaterSession.resume(client, id, total);
  } else {
    const tag = params.get("tag") ?? "anonymous";
    const seed = Number(params.get("seed") ?? Math.floor(Math.random() * 1e9));
    session = await RaterSession.create(client, tag, seed);
    window.sessionStorage.setItem(
      SESSION_KEY,
      JSON.stringify({ id: session.state.sessionId, total: session.state.total })
    );
  }

  const playerA = el<HTMLAudioElement>("player-a");
  const playerB = el<HTMLAudioElement>("player-b");
  const slider = el<HTMLInputElement>("rating");
  const bandText = el<HTMLSpanElement>("band");
  const valueText = el<HTMLSpanElement>("value");
  const progress = el<HTMLSpanElement>("progress");
  const message = el<HTMLParagraphElement>("message");
  const submit = el<HTMLButtonElement>("submit");
  const labelA = el<HTMLSpanElement>("label-a");
  const labelB = el<HTMLSpanElement>("label-b");

  slider.min = String(RATING_MIN);
  slider.max = String(RATING_MAX);
  slider.step = String(RATING_STEP);

  playerA.addEventListener("play", () => {
    session.notePlay("a");
    render();
  });
  playerB.addEventListener("play", () => {
    session.notePlay("b");
    render();
  });
  slider.addEventListener("input", render);

  submit.addEventListener("click", async () => {
    submit.disabled = true;
    try {
      await session.submit(clampRating(Number(slider.value)));
    } finally {
      render();
    }
  });

  function render() {
    const state = session.state;
    const value = clampRating(Number(slider.value));
    valueText.textContent = value.toFixed(1);
    bandText.textContent = bandLabel(value);
    progress.textContent = `${state.rated} / ${state.total}`;
    message.textContent = state.message;
    if (state.done) {
      el<HTMLDivElement>("rating-panel").hidden = true;
      el<HTMLDivElement>("done-panel").hidden = false;
      return;
    }
    const pair = state.current;
    if (pair && pair.original_url && pair.perturbed_url) {
      const aUrl = client.audioUrl(pair.original_url);
      if (!playerA.src.endsWith(pair.original_url)) {
        playerA.src = aUrl;
        playerB.src = client.audioUrl(pair.perturbed_url);
      }
      labelA.textContent = pair.blinded ? "Clip A" : "A (reference)";
      labelB.textContent = pair.blinded ? "Clip B" : "B (test)";
    }
    submit.disabled = !session.canSubmit();
  }

  render();
}

boot().catch((error) => {
  const message = document.getElementById("message");
  if (message) message.textContent = `failed to start: ${error}`;
});
