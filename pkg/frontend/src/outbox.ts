// Local-storage outbox for review decisions. A decision is persisted before
// the first network attempt and removed only after the server acknowledges
// it, so a dropped connection never loses a decision and a reconnect replays
// each pending decision exactly once, in order.

import { ApiError, DecisionBody } from "./api.js";

export interface DecisionSender {
  decide(body: DecisionBody): Promise<unknown>;
}

interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const DEFAULT_KEY = "materia.decision-outbox";

export class DecisionOutbox {
  private flushing = false;

  constructor(
    private sender: DecisionSender,
    private storage: StorageLike,
    private key: string = DEFAULT_KEY,
  ) {}

  private read(): DecisionBody[] {
    const raw = this.storage.getItem(this.key);
    if (!raw) {
      return [];
    }
    try {
      const parsed = JSON.parse(raw);
      return Array.isArray(parsed) ? (parsed as DecisionBody[]) : [];
    } catch {
      return [];
    }
  }

  private write(entries: DecisionBody[]): void {
    if (entries.length === 0) {
      this.storage.removeItem(this.key);
    } else {
      this.storage.setItem(this.key, JSON.stringify(entries));
    }
  }

  pendingCount(): number {
    return this.read().length;
  }

  /** Persist the decision, then immediately try to drain the outbox. */
  async submit(decision: DecisionBody): Promise<boolean> {
    this.write([...this.read(), decision]);
    const flushed = await this.flush();
    return flushed > 0 && this.pendingCount() === 0;
  }

  /**
   * Send pending decisions oldest-first, removing each one only after the
   * server acknowledges it. Stops at the first network failure (the rest
   * stay queued for the next reconnect). Returns how many were acknowledged.
   */
  async flush(): Promise<number> {
    if (this.flushing) {
      return 0; // a concurrent flush is already draining the queue
    }
    this.flushing = true;
    let sent = 0;
    try {
      for (;;) {
        const entries = this.read();
        if (entries.length === 0) {
          break;
        }
        const head = entries[0];
        try {
          await this.sender.decide(head);
        } catch (error) {
          if (error instanceof ApiError && error.status >= 400 && error.status < 500) {
            // The server understood and rejected this decision; retrying the
            // same payload can never succeed, so drop it rather than jam the queue.
            this.write(this.read().slice(1));
            continue;
          }
          break; // network/5xx: keep it queued for the next reconnect
        }
        this.write(this.read().slice(1));
        sent += 1;
      }
    } finally {
      this.flushing = false;
    }
    return sent;
  }
}
