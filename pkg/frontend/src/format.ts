// Display formatting helpers. Coordinates arrive normalized to the unit
// cube; when the session config carries named display bounds they are also
// shown denormalized, otherwise raw values alone are rendered.

import type { Bounds } from "./types.js";

export function formatNumber(v: number | null | undefined, digits = 4): string {
  if (v === null || v === undefined || Number.isNaN(v)) return "–";
  if (!Number.isFinite(v)) return v > 0 ? "inf" : "-inf";
  const a = Math.abs(v);
  if (a !== 0 && (a >= 1e5 || a < 1e-4)) return v.toExponential(2);
  return v
    .toFixed(digits)
    .replace(/(\.\d*?)0+$/, "$1")
    .replace(/\.$/, "");
}

/** Render a coordinate vector, denormalizing alongside when bounds exist. */
export function formatCoords(x: number[], bounds?: Bounds | null): string {
  const raw = `[${x.map((v) => formatNumber(v, 3)).join(", ")}]`;
  if (!bounds || bounds.length !== x.length) return raw;
  const denorm = x
    .map((v, i) => {
      const [lo, hi, unit] = bounds[i];
      const scaled = lo + v * (hi - lo);
      return unit ? `${formatNumber(scaled, 2)} ${unit}` : formatNumber(scaled, 2);
    })
    .join(", ");
  return `${raw} (${denorm})`;
}

/** Pull display bounds out of a session config when the author supplied
 *  them; the service itself never requires or interprets this block. */
export function boundsFromConfig(config: Record<string, unknown>): Bounds | null {
  const block = config["display_bounds"];
  if (!Array.isArray(block)) return null;
  const out: Bounds = [];
  for (const item of block) {
    if (!Array.isArray(item) || item.length < 2) return null;
    const [lo, hi, unit] = item as unknown[];
    if (typeof lo !== "number" || typeof hi !== "number") return null;
    out.push(unit === undefined ? [lo, hi] : [lo, hi, String(unit)]);
  }
  return out;
}

export function formatSpend(spent: number, total: number): string {
  return `${formatNumber(spent, 2)} / ${formatNumber(total, 2)}`;
}

export function formatOutcome(outcome: number | number[]): string {
  if (typeof outcome === "number") return outcome === 0 || outcome === 1 ? `prefer ${outcome === 1 ? "A" : "B"}` : formatNumber(outcome);
  return `[${outcome.map((v) => formatNumber(v, 3)).join(", ")}]`;
}

/** Validate one y entry typed into the evaluation form. */
export function parseYField(text: string): number | null {
  const trimmed = text.trim();
  if (trimmed === "") return null;
  const v = Number(trimmed);
  return Number.isFinite(v) ? v : null;
}

/** Parse all m outcome fields; returns null unless every one is a finite
 *  number, which is the client-side gate before submission. */
export function parseYVector(texts: string[]): number[] | null {
  const out: number[] = [];
  for (const t of texts) {
    const v = parseYField(t);
    if (v === null) return null;
    out.push(v);
  }
  return out;
}
