// DOM builders for every view state. Each function returns a detached
// element tree built purely from service data; no model quantity is ever
// computed here, only rendered.

import { formatCoords, formatNumber, formatOutcome, formatSpend } from "./format.js";
import type {
  Bounds,
  GridSlice,
  QueryMessage,
  Recommendation,
  SessionState,
  StepDoc,
} from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface QueryHandlers {
  onPrefer(choice: 0 | 1): void;
  onSubmitEval(y: number[]): void;
  onInvalidEval(): void;
}

function voiLine(query: QueryMessage): HTMLElement {
  const line = el("div", "voi-line");
  line.textContent =
    `VoI/cost eval ${formatNumber(query.voi_eval_raw)} · ` +
    `comp ${formatNumber(query.voi_comp_raw)} · query cost ${formatNumber(query.cost, 2)}`;
  return line;
}

export function renderComparison(
  query: QueryMessage,
  bounds: Bounds | null,
  handlers: QueryHandlers,
): HTMLElement {
  const coords = query.coordinates as { x_a: number[]; x_b: number[] };
  const root = el("section", "query query-compare");
  root.appendChild(el("h2", undefined, `Comparison query · iteration ${query.iteration}`));
  root.appendChild(voiLine(query));

  const row = el("div", "compare-row");
  const sides: Array<["A", number[], 1] | ["B", number[], 0]> = [
    ["A", coords.x_a, 1],
    ["B", coords.x_b, 0],
  ];
  for (const [label, x, d] of sides) {
    const card = el("div", "candidate-card");
    card.dataset.side = label;
    card.appendChild(el("h3", undefined, `Candidate ${label}`));
    card.appendChild(el("code", "coords", formatCoords(x, bounds)));
    const btn = el("button", "prefer-btn", `Prefer ${label}`);
    btn.dataset.choice = String(d);
    btn.addEventListener("click", () => handlers.onPrefer(d));
    card.appendChild(btn);
    row.appendChild(card);
  }
  root.appendChild(row);
  return root;
}

export function renderEvaluation(
  query: QueryMessage,
  m: number,
  bounds: Bounds | null,
  handlers: QueryHandlers,
): HTMLElement {
  const coords = query.coordinates as { x: number[] };
  const root = el("section", "query query-eval");
  root.appendChild(el("h2", undefined, `Evaluation query · iteration ${query.iteration}`));
  root.appendChild(voiLine(query));
  root.appendChild(el("p", undefined, "Measure the objective at:"));
  root.appendChild(el("code", "coords", formatCoords(coords.x, bounds)));

  const form = el("form", "eval-form");
  const inputs: HTMLInputElement[] = [];
  for (let i = 0; i < m; i++) {
    const label = el("label", undefined, `y[${i}] `);
    const input = el("input");
    input.type = "text";
    input.name = `y${i}`;
    input.autocomplete = "off";
    inputs.push(input);
    label.appendChild(input);
    form.appendChild(label);
  }
  const submit = el("button", "submit-eval", "Submit outcome");
  submit.type = "submit";
  form.appendChild(submit);
  const hint = el("div", "form-hint");
  form.appendChild(hint);

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const values: number[] = [];
    for (const input of inputs) {
      const v = Number(input.value.trim());
      if (input.value.trim() === "" || !Number.isFinite(v)) {
        hint.textContent = `every outcome must be a finite number (${m} value${m > 1 ? "s" : ""} expected)`;
        handlers.onInvalidEval();
        return;
      }
      values.push(v);
    }
    hint.textContent = "";
    handlers.onSubmitEval(values);
  });

  root.appendChild(form);
  return root;
}

export function renderComputing(): HTMLElement {
  const root = el("section", "computing");
  root.appendChild(el("div", "spinner"));
  root.appendChild(el("p", undefined, "Computing next query…"));
  return root;
}

export function renderRecommendation(
  rec: Recommendation,
  bounds: Bounds | null,
  final: boolean,
): HTMLElement {
  const root = el("section", final ? "recommendation final" : "recommendation");
  root.appendChild(el("h2", undefined, final ? "Final recommendation" : "Current recommendation"));
  root.appendChild(el("code", "coords", formatCoords(rec.x, bounds)));
  root.appendChild(
    el("div", "rec-utility", `expected utility ${formatNumber(rec.expected_utility)}`),
  );
  if (rec.norm_utility !== null) {
    root.appendChild(el("div", "rec-norm", `normalized utility ${formatNumber(rec.norm_utility)}`));
  }
  if (final && rec.fingerprint) {
    root.appendChild(el("div", "rec-fingerprint", `model fingerprint ${rec.fingerprint}`));
  }
  return root;
}

export function renderBudget(budget: { total: number; spent: number; remaining: number }): HTMLElement {
  const root = el("section", "budget");
  root.appendChild(el("h2", undefined, "Budget"));
  const gauge = el("div", "gauge");
  const fill = el("div", "gauge-fill");
  const frac = budget.total > 0 ? Math.min(1, budget.spent / budget.total) : 0;
  fill.style.width = `${(frac * 100).toFixed(1)}%`;
  gauge.appendChild(fill);
  root.appendChild(gauge);
  root.appendChild(el("div", "gauge-label", formatSpend(budget.spent, budget.total)));
  return root;
}

const SVG_NS = "http://www.w3.org/2000/svg";

function polyline(points: Array<[number, number]>, width: number, height: number): SVGSVGElement {
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "chart");
  const line = document.createElementNS(SVG_NS, "polyline");
  line.setAttribute("fill", "none");
  line.setAttribute("stroke", "currentColor");
  line.setAttribute("stroke-width", "1.5");
  line.setAttribute("points", points.map(([x, y]) => `${x.toFixed(1)},${y.toFixed(1)}`).join(" "));
  svg.appendChild(line);
  return svg;
}

function scaleSeries(values: number[], width: number, height: number): Array<[number, number]> {
  const finite = values.filter((v) => Number.isFinite(v));
  if (finite.length === 0) return [];
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const span = hi - lo || 1;
  const pad = 4;
  return values.map((v, i) => {
    const x = values.length > 1 ? (i / (values.length - 1)) * (width - 2 * pad) + pad : width / 2;
    const y = Number.isFinite(v)
      ? height - pad - ((v - lo) / span) * (height - 2 * pad)
      : height - pad;
    return [x, y] as [number, number];
  });
}

export function renderTrajectory(steps: StepDoc[], bounds: Bounds | null): HTMLElement {
  const root = el("section", "trajectory");
  root.appendChild(el("h2", undefined, `Trajectory (${steps.length} steps)`));

  const series = steps
    .map((s) => s.norm_utility)
    .filter((v): v is number => v !== null && Number.isFinite(v));
  if (series.length >= 2) {
    root.appendChild(polyline(scaleSeries(series, 360, 80), 360, 80));
  }

  const table = el("table", "trajectory-table");
  const head = el("tr");
  for (const h of ["iter", "action", "coords", "cost", "outcome", "norm. utility"]) {
    head.appendChild(el("th", undefined, h));
  }
  table.appendChild(head);
  for (const step of steps.slice().reverse()) {
    const tr = el("tr");
    tr.appendChild(el("td", undefined, String(step.iteration)));
    tr.appendChild(el("td", undefined, step.action.kind));
    const coords =
      step.action.kind === "evaluate"
        ? formatCoords(step.action.x ?? [], bounds)
        : `${formatCoords(step.action.x_a ?? [], bounds)} vs ${formatCoords(step.action.x_b ?? [], bounds)}`;
    tr.appendChild(el("td", "coords", coords));
    tr.appendChild(el("td", undefined, formatNumber(step.cost, 2)));
    tr.appendChild(el("td", undefined, formatOutcome(step.outcome)));
    tr.appendChild(el("td", undefined, formatNumber(step.norm_utility)));
    table.appendChild(tr);
  }
  root.appendChild(table);
  return root;
}

function heatColor(t: number): string {
  // Two-stop blend, dark blue to warm yellow; t in [0, 1].
  const r = Math.round(40 + 215 * t);
  const g = Math.round(40 + 180 * t);
  const b = Math.round(120 - 80 * t);
  return `rgb(${r},${g},${b})`;
}

export function renderSlice(slice: GridSlice): HTMLElement {
  const root = el("section", "posterior");
  root.appendChild(el("h2", undefined, "Posterior utility slice"));

  if (Array.isArray(slice.values[0])) {
    const grid = slice.values as number[][];
    const flat = grid.flat().filter((v) => Number.isFinite(v));
    const lo = Math.min(...flat);
    const hi = Math.max(...flat);
    const span = hi - lo || 1;
    const board = el("div", "heatmap");
    board.style.display = "grid";
    board.style.gridTemplateColumns = `repeat(${grid[0].length}, 1fr)`;
    // Row index follows axis 0 (x1); render last row first so x2 grows upward.
    for (let j = grid[0].length - 1; j >= 0; j--) {
      for (let i = 0; i < grid.length; i++) {
        const cell = el("div", "heat-cell");
        const v = grid[i][j];
        cell.style.background = Number.isFinite(v) ? heatColor((v - lo) / span) : "#888";
        cell.title = formatNumber(v);
        board.appendChild(cell);
      }
    }
    root.appendChild(board);
    root.appendChild(el("div", "heat-scale", `${formatNumber(lo)} … ${formatNumber(hi)}`));
    return root;
  }

  root.appendChild(polyline(scaleSeries(slice.values as number[], 360, 120), 360, 120));
  return root;
}

export function renderError(message: string): HTMLElement {
  const root = el("div", "error-banner");
  root.textContent = message;
  return root;
}

export function renderStatusLine(state: SessionState): HTMLElement {
  const root = el("div", "status-line");
  root.textContent =
    `session ${state.id} · ${state.status} · iteration ${state.iteration} · ` +
    `${state.data.n_eval} evals, ${state.data.n_comp} comparisons`;
  return root;
}
