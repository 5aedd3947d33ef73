// Verbal anchors for the 0-5 rating scale, one per unit band.

export interface Band {
  lo: number;
  hi: number;
  label: string;
}

export const BANDS: Band[] = [
  { lo: 0, hi: 1, label: "perfect perceptual quality with imperceptible noise" },
  { lo: 1, hi: 2, label: "good perceptual quality with quiet noise" },
  { lo: 2, hi: 3, label: "noticeable with slight noise" },
  { lo: 3, hi: 4, label: "noticeable and noisy" },
  { lo: 4, hi: 5, label: "very noisy" },
];

export const RATING_MIN = 0;
export const RATING_MAX = 5;
export const RATING_STEP = 0.1;

/** Clamp a slider value into [0, 5] on the 0.1 grid. */
export function clampRating(value: number): number {
  const clamped = Math.min(RATING_MAX, Math.max(RATING_MIN, value));
  return Math.round(clamped / RATING_STEP) * RATING_STEP;
}

/** The band description shown for a rating value. */
export function bandLabel(value: number): string {
  const v = Math.min(RATING_MAX, Math.max(RATING_MIN, value));
  for (const band of BANDS) {
    if (v < band.hi) return band.label;
  }
  return BANDS[BANDS.length - 1].label;
}
