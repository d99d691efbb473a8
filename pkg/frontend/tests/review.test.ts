import { beforeEach, describe, expect, it } from "vitest";

import { DecisionBody, QaPairView, QueuePage } from "../src/api.js";
import { DecisionOutbox } from "../src/outbox.js";
import { ReviewScreen, validateEdit } from "../src/review.js";

class MemoryStorage {
  private map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

function pair(id: string): QaPairView {
  return {
    qa_id: id,
    question: `Question ${id}?`,
    answer: `Answer ${id}.`,
    doc_id: "doc-1",
    segment_index: 0,
    template_id: "t",
    provider_id: "p",
    model_name: "m",
    domain: "unknown",
    review_state: "pending",
    edited_question: null,
    edited_answer: null,
    context: `Context for ${id}`,
  };
}

class FakeService {
  pairs: QaPairView[];
  decisions: DecisionBody[] = [];
  dropNextDecide = 0;

  constructor(ids: string[]) {
    this.pairs = ids.map(pair);
  }

  queue = async (_state?: string, _limit?: number, _offset?: number): Promise<QueuePage> => {
    return { items: [...this.pairs], total: this.pairs.length };
  };

  decide = async (body: DecisionBody): Promise<QaPairView> => {
    if (this.dropNextDecide > 0) {
      this.dropNextDecide -= 1;
      throw new TypeError("connection dropped");
    }
    this.decisions.push(body);
    const index = this.pairs.findIndex((p) => p.qa_id === body.qa_id);
    const updated = { ...this.pairs[index], review_state: `${body.decision}ed` };
    this.pairs.splice(index, 1);
    return updated;
  };
}

describe("validateEdit", () => {
  it("blocks an empty edited answer", () => {
    expect(validateEdit("fine question", "")).toMatch(/answer/);
    expect(validateEdit("fine question", "   ")).toMatch(/answer/);
  });

  it("blocks an empty edited question", () => {
    expect(validateEdit("", "fine answer")).toMatch(/question/);
  });

  it("accepts non-empty fields", () => {
    expect(validateEdit("q", "a")).toBeNull();
  });
});

describe("ReviewScreen", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app") as HTMLElement;
  });

  function build(service: FakeService) {
    const outbox = new DecisionOutbox(service, new MemoryStorage());
    return new ReviewScreen(root, service, outbox);
  }

  it("shows the pending pair with its source context", async () => {
    const service = new FakeService(["qa-1", "qa-2"]);
    const screen = build(service);
    await screen.mount();
    expect(root.querySelector('[data-role="question"]')?.textContent).toBe("Question qa-1?");
    expect(root.querySelector('[data-role="context"]')?.textContent).toBe("Context for qa-1");
  });

  it("accept posts immediately and advances to the next item", async () => {
    const service = new FakeService(["qa-1", "qa-2"]);
    const screen = build(service);
    await screen.mount();
    await screen.submit("accept");
    expect(service.decisions.map((d) => d.qa_id)).toEqual(["qa-1"]);
    expect(root.querySelector('[data-role="question"]')?.textContent).toBe("Question qa-2?");
  });

  it("edit with an empty answer is blocked client-side", async () => {
    const service = new FakeService(["qa-1"]);
    const screen = build(service);
    await screen.mount();
    await screen.submit("edit", "A better question?", "");
    expect(service.decisions).toHaveLength(0);
    expect(root.querySelector('[data-role="notice"]')?.textContent).toMatch(/answer/);
    expect(root.querySelector('[data-role="question"]')?.textContent).toBe("Question qa-1?");
  });

  it("a dropped POST is replayed exactly once on retry and the queue advances", async () => {
    const service = new FakeService(["qa-1", "qa-2"]);
    service.dropNextDecide = 1;
    const screen = build(service);
    await screen.mount();

    await screen.submit("accept");
    // the screen advanced, the decision is parked in the outbox
    expect(service.decisions).toHaveLength(0);
    expect(root.querySelector('[data-role="retry-banner"]')).not.toBeNull();
    expect(root.querySelector('[data-role="question"]')?.textContent).toBe("Question qa-2?");

    await screen.retryPending();
    expect(service.decisions.map((d) => d.qa_id)).toEqual(["qa-1"]);
    expect(root.querySelector('[data-role="retry-banner"]')).toBeNull();

    await screen.retryPending();
    expect(service.decisions).toHaveLength(1); // replayed exactly once
  });

  it("keyboard shortcuts drive decisions", async () => {
    const service = new FakeService(["qa-1"]);
    const screen = build(service);
    await screen.mount();
    root.dispatchEvent(new KeyboardEvent("keydown", { key: "a" }));
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(service.decisions.map((d) => d.decision)).toEqual(["accept"]);
  });
});
