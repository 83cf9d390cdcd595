// Application shell. Holds the only pieces of client state that exist: the
// base URL, the session id (mirrored into location.hash so a reload lands
// back on the same session), and the in-flight submission guard. Everything
// rendered is reconstructed from get_state on every poll.

import { ApiError, Client } from "./api.js";
import { boundsFromConfig, parseYVector } from "./format.js";
import { startPolling, type PollHandle } from "./poll.js";
import type { Bounds, SessionState } from "./types.js";
import { validateExport } from "./types.js";
import {
  renderBudget,
  renderComparison,
  renderComputing,
  renderError,
  renderEvaluation,
  renderRecommendation,
  renderSlice,
  renderStatusLine,
  renderTrajectory,
} from "./views.js";

function sessionIdFromHash(hash: string): string | null {
  const match = /^#\/s\/([A-Za-z0-9-]+)$/.exec(hash);
  return match ? match[1] : null;
}

/** Signature of the parts of state that affect rendering; identical
 *  signatures skip the re-render so form input survives polling. */
function stateSignature(state: SessionState): string {
  return [
    state.status,
    state.iteration,
    state.trajectory.length,
    state.query ? `${state.query.iteration}:${state.query.type}` : "-",
    state.budget.spent,
  ].join("|");
}

export class App {
  private readonly client: Client;
  private readonly root: HTMLElement;
  private poll: PollHandle | null = null;
  private sessionId: string | null = null;
  private lastSignature = "";
  private inflight = false;
  private notice = "";

  constructor(root: HTMLElement, base: string) {
    this.root = root;
    this.client = new Client(base);
  }

  start(): void {
    const fromHash = sessionIdFromHash(window.location.hash);
    if (fromHash) {
      this.openSession(fromHash);
    } else {
      this.renderLanding();
    }
    window.addEventListener("hashchange", () => {
      const id = sessionIdFromHash(window.location.hash);
      if (id && id !== this.sessionId) this.openSession(id);
      if (!id) {
        this.stopPolling();
        this.sessionId = null;
        this.renderLanding();
      }
    });
  }

  openSession(id: string): void {
    this.sessionId = id;
    this.lastSignature = "";
    this.notice = "";
    if (sessionIdFromHash(window.location.hash) !== id) {
      window.location.hash = `#/s/${id}`;
    }
    this.startPoll(id);
  }

  private startPoll(id: string): void {
    this.stopPolling();
    this.poll = startPolling<SessionState>({
      fetch: () => this.client.getState(id),
      onResult: (state) => this.renderState(state),
      onError: (err) => this.renderPollError(err),
      isDone: (state) => state.status === "finished" || state.status === "abandoned",
    });
  }

  stopPolling(): void {
    this.poll?.stop();
    this.poll = null;
  }

  // ------------------------------------------------------------------ views

  private renderLanding(): void {
    this.root.textContent = "";
    const section = document.createElement("section");
    section.className = "landing";
    const h = document.createElement("h1");
    h.textContent = "eabo elicitation";
    section.appendChild(h);

    const openForm = document.createElement("form");
    openForm.className = "open-form";
    const input = document.createElement("input");
    input.type = "text";
    input.placeholder = "session id";
    input.name = "session";
    const openBtn = document.createElement("button");
    openBtn.textContent = "Open session";
    openBtn.type = "submit";
    openForm.append(input, openBtn);
    openForm.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const id = input.value.trim();
      if (id) this.openSession(id);
    });
    section.appendChild(openForm);

    const createForm = document.createElement("form");
    createForm.className = "create-form";
    const textarea = document.createElement("textarea");
    textarea.rows = 12;
    textarea.name = "config";
    textarea.placeholder = "session config JSON";
    const createBtn = document.createElement("button");
    createBtn.textContent = "Create session";
    createBtn.type = "submit";
    const hint = document.createElement("div");
    hint.className = "form-hint";
    createForm.append(textarea, createBtn, hint);
    createForm.addEventListener("submit", (ev) => {
      ev.preventDefault();
      let config: Record<string, unknown>;
      try {
        config = JSON.parse(textarea.value) as Record<string, unknown>;
      } catch {
        hint.textContent = "config must be valid JSON";
        return;
      }
      createBtn.disabled = true;
      this.client
        .createSession(config)
        .then((summary) => this.openSession(summary.id))
        .catch((err) => {
          createBtn.disabled = false;
          hint.textContent = err instanceof Error ? err.message : String(err);
        });
    });
    section.appendChild(createForm);
    this.root.appendChild(section);
  }

  renderState(state: SessionState): void {
    const signature = stateSignature(state) + `|n:${this.notice}`;
    if (signature === this.lastSignature) return;
    this.lastSignature = signature;
    this.inflight = false;

    const bounds = boundsFromConfig(state.config);
    this.root.textContent = "";
    this.root.appendChild(renderStatusLine(state));
    if (this.notice) {
      this.root.appendChild(renderError(this.notice));
    }
    this.root.appendChild(renderBudget(state.budget));

    if (state.status === "awaiting_response" && state.query) {
      this.root.appendChild(this.buildQueryView(state, bounds));
    } else if (state.status === "computing") {
      this.root.appendChild(renderComputing());
    } else if (state.status === "abandoned") {
      const note = document.createElement("section");
      note.className = "abandoned";
      note.textContent = "Session abandoned. Partial data remains exportable.";
      this.root.appendChild(note);
    }

    if (state.recommendation) {
      this.root.appendChild(
        renderRecommendation(state.recommendation, bounds, state.status === "finished"),
      );
    }
    if (state.posterior_slice && state.posterior_slice.kind === "grid") {
      this.root.appendChild(renderSlice(state.posterior_slice));
    }
    if (state.trajectory.length > 0) {
      this.root.appendChild(renderTrajectory(state.trajectory, bounds));
    }
    this.root.appendChild(this.buildSessionControls(state));
  }

  private buildQueryView(state: SessionState, bounds: Bounds | null): HTMLElement {
    const query = state.query!;
    const handlers = {
      onPrefer: (choice: 0 | 1) => this.submit({ iteration: query.iteration, d: choice }),
      onSubmitEval: (y: number[]) => this.submit({ iteration: query.iteration, y }),
      onInvalidEval: () => undefined,
    };
    if (query.type === "compare") {
      return renderComparison(query, bounds, handlers);
    }
    const m = this.outcomeDim(state);
    return renderEvaluation(query, m, bounds, handlers);
  }

  private outcomeDim(state: SessionState): number {
    const problem = state.config["problem"];
    if (problem && typeof problem === "object" && "m" in problem) {
      const m = (problem as Record<string, unknown>)["m"];
      if (typeof m === "number" && m >= 1) return m;
    }
    // The config echo always carries one utility weight per output, even
    // for benchmark sessions that omit the problem block.
    const utility = state.config["utility"];
    if (utility && typeof utility === "object" && "weights" in utility) {
      const w = (utility as Record<string, unknown>)["weights"];
      if (Array.isArray(w) && w.length >= 1) return w.length;
    }
    const lastEval = [...state.trajectory]
      .reverse()
      .find((s) => s.action.kind === "evaluate" && Array.isArray(s.outcome));
    if (lastEval && Array.isArray(lastEval.outcome)) return lastEval.outcome.length;
    return 1;
  }

  private buildSessionControls(state: SessionState): HTMLElement {
    const bar = document.createElement("section");
    bar.className = "session-controls";

    const exportBtn = document.createElement("button");
    exportBtn.className = "export-btn";
    exportBtn.textContent = "Export session";
    exportBtn.addEventListener("click", () => void this.downloadExport());
    bar.appendChild(exportBtn);

    if (state.status === "awaiting_response" || state.status === "computing") {
      const abandonBtn = document.createElement("button");
      abandonBtn.className = "abandon-btn";
      abandonBtn.textContent = "Abandon session";
      abandonBtn.addEventListener("click", () => {
        if (!state.query) return;
        this.submit({ iteration: state.query.iteration, abandon: true });
      });
      bar.appendChild(abandonBtn);
    }
    return bar;
  }

  private renderPollError(err: unknown): void {
    const message =
      err instanceof ApiError && err.status === 404
        ? `session ${this.sessionId ?? ""} not found`
        : `service unreachable, retrying… (${err instanceof Error ? err.message : String(err)})`;
    const existing = this.root.querySelector(".error-banner");
    if (existing) {
      existing.textContent = message;
    } else {
      this.root.prepend(renderError(message));
    }
  }

  // ---------------------------------------------------------------- actions

  submit(payload: { iteration: number; y?: number[]; d?: 0 | 1; abandon?: boolean }): void {
    if (this.inflight || !this.sessionId) return;
    this.inflight = true;
    this.setControlsDisabled(true);
    this.notice = "";
    this.client
      .submit(this.sessionId, payload)
      .then(() => {
        this.lastSignature = "";
        this.restartPolling();
      })
      .catch((err) => {
        this.inflight = false;
        if (err instanceof ApiError && err.status === 409) {
          this.notice = "query already answered — refreshing";
          this.lastSignature = "";
          this.restartPolling();
          return;
        }
        this.setControlsDisabled(false);
        this.notice = err instanceof Error ? err.message : String(err);
        this.lastSignature = "";
        this.restartPolling();
      });
  }

  /** Parse and validate m outcome strings; exposed for the eval form path. */
  parseOutcome(texts: string[]): number[] | null {
    return parseYVector(texts);
  }

  private restartPolling(): void {
    // Unlike openSession this keeps the notice, so a 409 stays visible
    // through the refresh it triggers.
    if (this.sessionId) {
      this.lastSignature = "";
      this.startPoll(this.sessionId);
    }
  }

  private setControlsDisabled(disabled: boolean): void {
    for (const btn of this.root.querySelectorAll("button")) {
      (btn as HTMLButtonElement).disabled = disabled;
    }
    for (const input of this.root.querySelectorAll("input")) {
      (input as HTMLInputElement).disabled = disabled;
    }
  }

  async downloadExport(): Promise<void> {
    if (!this.sessionId) return;
    try {
      const doc = await this.client.getExport(this.sessionId);
      const validated = validateExport(doc);
      const blob = new Blob([JSON.stringify(validated, null, 2)], {
        type: "application/json",
      });
      const url = URL.createObjectURL(blob);
      const a = document.createElement("a");
      a.href = url;
      a.download = `eabo-session-${this.sessionId}.json`;
      a.click();
      URL.revokeObjectURL(url);
    } catch (err) {
      this.notice = `export failed: ${err instanceof Error ? err.message : String(err)}`;
      this.lastSignature = "";
    }
  }
}
