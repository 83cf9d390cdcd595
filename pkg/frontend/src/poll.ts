// Polling loop with exponential backoff. The UI polls get_state once per
// second while the session is live; failures widen the interval up to a cap
// and any success resets it. Stopping is cooperative via the returned handle.

export const BASE_INTERVAL_MS = 1000;
export const MAX_INTERVAL_MS = 30000;

export interface PollHandle {
  stop(): void;
  readonly running: boolean;
}

export interface PollCallbacks<T> {
  fetch(): Promise<T>;
  onResult(value: T): void;
  onError(err: unknown): void;
  /** Return true to stop polling (e.g. session finished or abandoned). */
  isDone(value: T): boolean;
}

export function startPolling<T>(
  callbacks: PollCallbacks<T>,
  baseInterval = BASE_INTERVAL_MS,
  maxInterval = MAX_INTERVAL_MS,
): PollHandle {
  let running = true;
  let timer: ReturnType<typeof setTimeout> | null = null;
  let interval = baseInterval;

  const tick = async (): Promise<void> => {
    if (!running) return;
    try {
      const value = await callbacks.fetch();
      interval = baseInterval;
      if (!running) return;
      callbacks.onResult(value);
      if (callbacks.isDone(value)) {
        running = false;
        return;
      }
    } catch (err) {
      interval = Math.min(interval * 2, maxInterval);
      if (!running) return;
      callbacks.onError(err);
    }
    if (running) {
      timer = setTimeout(tick, interval);
    }
  };

  void tick();

  return {
    stop() {
      running = false;
      if (timer !== null) clearTimeout(timer);
    },
    get running() {
      return running;
    },
  };
}
